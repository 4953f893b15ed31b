"""Two-stage estimation under a nonignorable response mechanism.

Stage one fits the respondents' outcome model p1(y | x; gamma) by maximum
likelihood on complete cases. Stage two solves the mean score equation

    sum_i { delta_i s1(x_i, y_i; phi) + (1 - delta_i) s0(x_i; phi) } = 0

for the response parameters phi = (alpha, beta), where the nonrespondent
score s0 integrates s1 against p1 by quadrature or fractional imputation.
The mean E[y] is then estimated by inverse probability weighting.
"""
import logging
import multiprocessing as mp
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special

from app.errors import (
    ConfigError,
    ConvergenceError,
    DegenerateMissingnessError,
    FitError,
    IdentifiabilityRefusal,
    MnarError,
    SeparationError,
)
from app.models.bases import Covariates, LinearBasis, as_frame, full_column_rank
from app.models.dataset import Dataset
from app.models.outcome import OutcomeModel
from app.models.response import ResponseModel
from app.numerics.quadrature import QuadratureRule, default_rule, outcome_nodes
from app.numerics.rng import rng_stream
from app.numerics.solver import SolverResult, solve_nonlinear_system
from app.numerics.splines import SplineBasis, fit_spline_mean
from app.services.identify import identifiability_checklist

logger = logging.getLogger(__name__)

METHODS = ("quadrature", "fi")
MIN_DENOMINATOR = 1e-12
MIN_RESPONSE_PROB = 1e-12
Z_95 = 1.959963984540054
UNSTABLE_BOOTSTRAP_RATE = 0.2


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "quadrature"
    n_imputations: int = 1000
    n_bootstrap: int = 200
    hajek: bool = False
    tol: float = 1e-8
    max_iter: int = 50
    n_restarts: int = 5
    percentile_ci: bool = False
    check_identifiability: bool = True
    oracle: bool = False
    spline_criterion: str = "aic"
    workers: int = 1
    rule: Optional[QuadratureRule] = None

    def __post_init__(self):
        method = self.method.lower()
        if method in ("fi(m)", "fractional"):
            method = "fi"
        if method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}', expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        if self.n_imputations < 1:
            raise ConfigError("fractional imputation needs M >= 1")
        if self.n_bootstrap < 0 or self.n_bootstrap == 1:
            raise ConfigError("bootstrap needs B >= 2 (or 0 to skip)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def method_tag(self) -> str:
        return f"FI({self.n_imputations})" if self.method == "fi" else "Quadrature"


# ---------------------------------------------------------------------------
# Respondents' model
# ---------------------------------------------------------------------------


@dataclass
class OutcomeFit:
    model: OutcomeModel
    loglik: float
    n_obs: int
    r2: float
    fitted_values: np.ndarray
    residuals: np.ndarray
    degenerate: bool = False
    n_iter: int = 0

    @property
    def n_params(self) -> int:
        return self.model.gamma.size

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(self.n_obs)

    def residual_frame(self, data: Dataset) -> pd.DataFrame:
        frame = data.observed.loc[:, list(data.covariates) + [data.outcome]].reset_index(drop=True)
        frame["fitted"] = self.fitted_values
        frame["residual"] = self.residuals
        return frame


def fit_logistic(X: np.ndarray, y: np.ndarray, tol: float = 1e-10, max_iter: int = 100) -> Tuple[np.ndarray, int]:
    """Newton-Raphson for the logistic likelihood."""
    y = np.asarray(y, dtype=float)
    if np.all(y == y[0]):
        raise SeparationError(f"all binary responses equal {y[0]:g}: no finite maximizer")
    coef = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ coef
        p = special.expit(eta)
        hessian = X.T @ (X * (p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(hessian, X.T @ (y - p))
        except np.linalg.LinAlgError:
            raise SeparationError("logistic information matrix is singular")
        coef = coef + step
        if np.max(np.abs(X @ coef)) > 35.0:
            raise SeparationError("fitted probabilities reached 0 or 1 (complete separation)")
        if np.max(np.abs(step)) <= tol:
            return coef, it
    raise ConvergenceError("logistic regression did not converge", float(np.max(np.abs(step))), max_iter)


def fit_outcome_mle(data: Dataset, spec: OutcomeModel, criterion: str = "aic") -> OutcomeFit:
    """MLE of gamma over complete cases.

    Normal: least squares with the residual variance on divisor n_obs (a
    spline basis picks its knot count by ``criterion``). Bernoulli: Newton
    iterations on the logistic likelihood.
    """
    observed = data.observed
    y = data.y[data.observed_mask]
    n_obs = y.size
    n_iter = 0
    if isinstance(spec.basis, SplineBasis):
        if spec.family != "normal":
            raise ConfigError("spline means are only supported for normal outcomes")
        spline = fit_spline_mean(observed, y, spec.basis, criterion)
        basis, kappa = spline.basis, spline.coef
    else:
        basis = spec.basis.fitted(observed)
        X = basis.design(observed)
        if n_obs < X.shape[1] + 1:
            raise FitError(f"{n_obs} complete cases cannot fit {X.shape[1]} coefficients")
        if not full_column_rank(X):
            raise FitError("respondents' design matrix is rank deficient")
        if spec.family == "bernoulli":
            kappa, n_iter = fit_logistic(X, y)
        else:
            kappa, *_ = np.linalg.lstsq(X, y, rcond=None)

    X = basis.design(observed)
    eta = X @ kappa
    fitted = special.expit(eta) if spec.family == "bernoulli" else eta
    residuals = y - fitted
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 0.0 if tss == 0.0 else 1.0 - float(residuals @ residuals) / tss

    degenerate = False
    sigma2 = None
    if spec.family == "normal":
        sigma2 = float(residuals @ residuals) / n_obs
        if sigma2 <= 1e-14 * max(1.0, tss / n_obs):
            logger.warning("respondents' model fits without error: sigma2 is zero (degenerate)")
            degenerate = True
            sigma2 = max(sigma2, np.finfo(float).tiny)
    model = OutcomeModel(spec.family, basis, kappa, sigma2)
    loglik = float(model.log_density(observed, y).sum())
    logger.debug(f"outcome fit: n_obs={n_obs} loglik={loglik:.4f} R2={r2:.3f}")
    return OutcomeFit(model, loglik, n_obs, r2, fitted, residuals, degenerate, n_iter)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImputationSet:
    """M draws per nonrespondent from p1(y | x_i), each carrying weight 1/M."""

    draws: np.ndarray

    @classmethod
    def draw(cls, outcome: OutcomeModel, x: Covariates, M: int, rng: np.random.Generator) -> "ImputationSet":
        if M < 1:
            raise ConfigError("fractional imputation needs M >= 1")
        mean = outcome.mean(as_frame(x))[:, None]
        if outcome.is_discrete:
            draws = (rng.random((mean.shape[0], M)) < mean).astype(float)
        else:
            draws = mean + np.sqrt(outcome.sigma2) * rng.standard_normal((mean.shape[0], M))
        draws.setflags(write=False)
        return cls(draws)

    @property
    def M(self) -> int:
        return self.draws.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.draws.shape, 1.0 / self.M)

    def response_probs(self, response: ResponseModel, x: Covariates) -> np.ndarray:
        H, G = response.design(x)
        return response.link.cdf(response.linear_predictor_from(H, G, self.draws))


def score_s1(response: ResponseModel, u: Covariates, y) -> np.ndarray:
    """d log pi(x, y; phi) / d phi; a vector for a single row."""
    scores = response.score(u, y)
    return scores[0] if scores.shape[0] == 1 else scores


def _conditional_score(response: ResponseModel, H, G, Y, W) -> np.ndarray:
    """-sum_k W s1(Y_k) / sum_k W (1/pi(Y_k) - 1), one row per covariate row."""
    t = response.linear_predictor_from(H, G, Y)
    denominator = (W * response.link.odds_against(t)).sum(axis=1)
    small = np.flatnonzero(~(denominator >= MIN_DENOMINATOR))
    if small.size:
        row = int(small[0])
        raise DegenerateMissingnessError(
            f"row {row}: E1[1/pi - 1 | x] = {denominator[row]:.3e} is below {MIN_DENOMINATOR:g}"
        )
    numerator = np.einsum("nk,nkd->nd", W, response.score_from_design(H, G, Y))
    return -numerator / denominator[:, None]


def score_s0(
    response: ResponseModel,
    outcome: OutcomeModel,
    x: Covariates,
    method: str = "quadrature",
    rule: QuadratureRule = None,
    imputations: ImputationSet = None,
    rng: np.random.Generator = None,
    n_imputations: int = 1000,
) -> np.ndarray:
    """Expected s1 for nonrespondents, written with respondents' quantities only.

    s0(x) = -E1[s1(x, y)] / E1[1/pi(x, y) - 1] with E1 the expectation under
    p1(y | x). ``quadrature`` uses the outcome's default rule; ``fi`` averages
    over imputation draws (given, or drawn from ``rng``).
    """
    frame = as_frame(x)
    H, G = response.design(frame)
    if method == "quadrature":
        Y, W = outcome_nodes(outcome, frame, rule or default_rule(outcome, response.link))
    elif method == "fi":
        if imputations is None:
            if rng is None:
                raise ConfigError("fractional imputation needs draws or a random generator")
            imputations = ImputationSet.draw(outcome, frame, n_imputations, rng)
        Y, W = imputations.draws, imputations.weights
    else:
        raise ConfigError(f"unknown method '{method}', expected one of {METHODS}")
    scores = _conditional_score(response, H, G, Y, W)
    return scores[0] if scores.shape[0] == 1 else scores


class MeanScoreSystem:
    """F(phi) = (1/n) [sum_obs s1 + sum_mis s0], with s0 nodes fixed up front."""

    def __init__(self, data: Dataset, response: ResponseModel, outcome: OutcomeModel, config: EstimatorConfig, rng=None):
        self.response = response
        self.n = data.n
        obs = data.observed_mask
        self.H_obs, self.G_obs = response.design(data.observed)
        self.y_obs = data.y[obs]
        self.H_mis, self.G_mis = response.design(data.missing)
        if config.method == "fi":
            if rng is None:
                raise ConfigError("fractional imputation needs a random generator")
            imputations = ImputationSet.draw(outcome, data.missing, config.n_imputations, rng)
            self.Y, self.W = imputations.draws, imputations.weights
        else:
            rule = config.rule or default_rule(outcome, response.link)
            self.Y, self.W = outcome_nodes(outcome, data.missing, rule)

    def __call__(self, phi) -> np.ndarray:
        model = self.response.with_phi(phi)
        total = model.score_from_design(self.H_obs, self.G_obs, self.y_obs).sum(axis=0)
        if self.Y.shape[0]:
            total = total + _conditional_score(model, self.H_mis, self.G_mis, self.Y, self.W).sum(axis=0)
        return total / self.n


@dataclass
class MeanScoreSolution:
    response: ResponseModel
    result: SolverResult
    start: np.ndarray
    attempts: int


def default_start(data: Dataset, response: ResponseModel) -> np.ndarray:
    """Logistic regression of delta on the h-basis, with beta = 0."""
    H, _ = response.design(data.frame)
    try:
        alpha, _ = fit_logistic(H, data.delta_values)
    except (FitError, ConvergenceError) as e:
        logger.debug(f"start from zero: logistic start failed ({e})")
        alpha = np.zeros(H.shape[1])
    return np.concatenate([alpha, np.zeros(response.g_basis.n_terms)])


def solve_mean_score(
    data: Dataset,
    outcome: OutcomeModel,
    response: ResponseModel,
    config: EstimatorConfig = EstimatorConfig(),
    start=None,
    rng: np.random.Generator = None,
) -> MeanScoreSolution:
    """Root of the sample mean score in phi.

    Refuses when nothing is missing (beta carries no information) and, unless
    ``config.check_identifiability`` is off, when the identifiability
    checklist does not pass. On nonconvergence retries from jittered starts.
    """
    if data.n_missing == 0:
        raise DegenerateMissingnessError("no missing outcomes: the response parameters are not identified")
    if config.check_identifiability:
        verdict = identifiability_checklist(response, outcome, data)
        if not verdict.is_identifiable:
            logger.warning(f"identifiability checklist failed: {verdict.label}")
            raise IdentifiabilityRefusal(verdict)

    system = MeanScoreSystem(data, response, outcome, config, rng)
    start = default_start(data, response) if start is None else np.asarray(start, dtype=float)
    jitter = rng_stream(0, (len(start),))
    error = None
    for attempt in range(config.n_restarts + 1):
        x0 = start if attempt == 0 else start + 0.5 * jitter.standard_normal(start.size)
        try:
            result = solve_nonlinear_system(system, x0, tol=config.tol, max_iter=config.max_iter)
        except ConvergenceError as e:
            logger.info(f"mean score attempt {attempt + 1} failed: {e}")
            error = e
            continue
        logger.debug(f"mean score solved by {result.method} in {result.n_iter} iterations")
        return MeanScoreSolution(response.with_phi(result.x), result, x0, attempt + 1)
    raise error


# ---------------------------------------------------------------------------
# Inverse probability weighting
# ---------------------------------------------------------------------------


def ipw_weights(data: Dataset, response: ResponseModel) -> np.ndarray:
    """delta_i / pi_i, zero for nonrespondents."""
    obs = data.observed_mask
    pi = response.prob(data.observed, data.y[obs])
    extreme = np.flatnonzero(pi < MIN_RESPONSE_PROB)
    if extreme.size:
        row = int(np.flatnonzero(obs)[extreme[0]])
        logger.warning(f"extreme weight at row {row}: pi={pi[extreme[0]]:.3e}")
    weights = np.zeros(data.n)
    weights[obs] = 1.0 / pi
    return weights


def ipw_mean(data: Dataset, response: ResponseModel, hajek: bool = False) -> float:
    """Horvitz-Thompson (1/n) sum delta y / pi, or its normalized (Hajek) form."""
    weights = ipw_weights(data, response)
    y = np.where(data.observed_mask, data.y, 0.0)
    total = float(weights @ y)
    if hajek:
        return total / float(weights.sum())
    return total / data.n


# ---------------------------------------------------------------------------
# Pipelines and bootstrap
# ---------------------------------------------------------------------------


@dataclass
class PipelineEstimate:
    gamma: np.ndarray
    phi: np.ndarray
    mean: float
    cc_mean: float
    converged: bool = True
    residual_norm: float = 0.0
    n_iter: int = 0
    outcome_fit: Optional[OutcomeFit] = None
    on_data_scale: bool = True

    def vector(self, include_gamma: bool) -> np.ndarray:
        parts = [self.gamma] if include_gamma else []
        return np.concatenate(parts + [self.phi, [self.mean]])


def back_transformable(response: ResponseModel) -> bool:
    h, g = response.h_basis, response.g_basis
    return (
        response.transform == "identity"
        and isinstance(h, LinearBasis)
        and h.intercept
        and isinstance(g, LinearBasis)
        and g.is_constant
    )


@dataclass(frozen=True)
class MeanScorePipeline:
    """gamma_hat -> phi_hat -> E[y] on one dataset; picklable for worker pools."""

    outcome: OutcomeModel
    response: ResponseModel
    config: EstimatorConfig = EstimatorConfig()
    standardize: bool = False

    @property
    def tracks_gamma(self) -> bool:
        return not isinstance(self.outcome.basis, SplineBasis)

    def names(self) -> Tuple[str, ...]:
        gamma = self.outcome.gamma_names if self.tracks_gamma else ()
        return gamma + self.response.param_names + ("E[y]",)

    def __call__(self, data: Dataset, rng: np.random.Generator = None, check: bool = False) -> PipelineEstimate:
        work = data
        if self.standardize:
            work = data.standardized(include_outcome=self.outcome.family == "normal")
        fit = fit_outcome_mle(work, self.outcome, self.config.spline_criterion)
        config = replace(self.config, check_identifiability=check and self.config.check_identifiability)
        solution = solve_mean_score(work, fit.model, self.response, config, rng=rng)
        fitted = solution.response
        mean = ipw_mean(work, fitted, self.config.hajek)
        gamma, phi = fit.model.gamma, fitted.phi
        on_data_scale = True
        standardization = work.standardization
        if standardization is not None:
            weight_mean = 1.0 if self.config.hajek else float(ipw_weights(work, fitted).mean())
            mean = standardization.back_transform_mean(data.outcome, mean, weight_mean)
            if back_transformable(fitted):
                phi = standardization.back_transform_response(phi, fitted.h_basis.columns, data.outcome)
            else:
                on_data_scale = False
            if isinstance(fit.model.basis, LinearBasis) and fit.model.basis.intercept:
                gamma = standardization.back_transform_outcome(
                    gamma, fit.model.basis.columns, data.outcome, fit.model.family
                )
            else:
                on_data_scale = False
            if fit.model.family == "normal":
                a, b = standardization.location_scale(data.outcome)
                fit = replace(fit, fitted_values=a + b * fit.fitted_values, residuals=b * fit.residuals)
        return PipelineEstimate(
            gamma=gamma,
            phi=phi,
            mean=mean,
            cc_mean=float(data.y[data.observed_mask].mean()),
            converged=solution.result.converged,
            residual_norm=solution.result.residual_norm,
            n_iter=solution.result.n_iter,
            outcome_fit=fit,
            on_data_scale=on_data_scale,
        )


@dataclass(frozen=True)
class OraclePipeline:
    """IPW with phi fixed at a known mechanism; no fitting."""

    response: ResponseModel
    hajek: bool = False
    tracks_gamma: bool = False

    def names(self) -> Tuple[str, ...]:
        return self.response.param_names + ("E[y]",)

    def __call__(self, data: Dataset, rng: np.random.Generator = None, check: bool = False) -> PipelineEstimate:
        return PipelineEstimate(
            gamma=np.empty(0),
            phi=self.response.phi,
            mean=ipw_mean(data, self.response, self.hajek),
            cc_mean=float(data.y[data.observed_mask].mean()),
        )


@dataclass
class BootstrapResult:
    names: Tuple[str, ...]
    estimates: np.ndarray
    n_requested: int
    n_failed: int
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_requested if self.n_requested else 0.0

    @property
    def unstable(self) -> bool:
        return self.failure_rate > UNSTABLE_BOOTSTRAP_RATE


def _bootstrap_task(args):
    data, pipeline, seed, stream = args
    rng = rng_stream(seed, stream)
    indices = rng.integers(0, data.n, data.n)
    try:
        estimate = pipeline(data.resample(indices), rng)
    except MnarError as e:
        logger.debug(f"bootstrap replicate {stream} failed: {e}")
        return None
    return estimate.vector(pipeline.tracks_gamma)


def bootstrap(
    data: Dataset,
    pipeline,
    B: int,
    seed: int,
    point: Optional[np.ndarray] = None,
    percentile: bool = False,
    workers: int = 1,
    stream_prefix: Sequence[int] = (1,),
) -> BootstrapResult:
    """Nonparametric row bootstrap of the whole pipeline.

    Replicate b draws its rows and any imputations from the stream
    (seed, stream_prefix + (b,)), so results do not depend on ``workers``.
    """
    if B < 2:
        raise ConfigError("bootstrap needs B >= 2")
    tasks = [(data, pipeline, seed, tuple(stream_prefix) + (b,)) for b in range(B)]
    if workers > 1:
        with mp.get_context("spawn").Pool(processes=workers) as pool:
            results = list(pool.imap(_bootstrap_task, tasks, chunksize=max(1, B // (4 * workers))))
    else:
        results = [_bootstrap_task(task) for task in tasks]

    names = pipeline.names()
    ok = [r for r in results if r is not None and r.size == len(names)]
    n_failed = B - len(ok)
    estimates = np.vstack(ok) if ok else np.empty((0, len(names)))
    if len(ok) >= 2:
        se = estimates.std(axis=0, ddof=1)
    else:
        se = np.full(len(names), np.nan)
    if percentile and len(ok) >= 2:
        ci_low, ci_high = np.quantile(estimates, [0.025, 0.975], axis=0)
    else:
        center = estimates.mean(axis=0) if point is None and ok else point
        center = np.full(len(names), np.nan) if center is None else np.asarray(center, dtype=float)
        ci_low, ci_high = center - Z_95 * se, center + Z_95 * se
    result = BootstrapResult(names, estimates, B, n_failed, se, ci_low, ci_high)
    if result.unstable:
        logger.warning(f"unstable bootstrap: {n_failed} of {B} replicates failed")
    return result


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    gamma_hat: np.ndarray
    gamma_names: Tuple[str, ...]
    phi_hat: np.ndarray
    phi_names: Tuple[str, ...]
    mean_estimate: float
    cc_mean: float
    method: str
    link: str
    se: Dict[str, float] = field(default_factory=dict)
    ci: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    residual_norm: float = 0.0
    n_iter: int = 0
    converged: bool = True
    bootstrap_failures: int = 0
    unstable_bootstrap: bool = False
    on_data_scale: bool = True
    outcome_fit: Optional[OutcomeFit] = None
    notes: Tuple[str, ...] = ()

    def estimates(self) -> Dict[str, float]:
        values = dict(zip(self.gamma_names, self.gamma_hat))
        values.update(zip(self.phi_names, self.phi_hat))
        values["E[y]"] = self.mean_estimate
        return values

    def rows(self, label: str = None) -> List[dict]:
        label = label or f"{self.method} ({self.link})"
        out = []
        for name, value in self.estimates().items():
            lo, hi = self.ci.get(name, (np.nan, np.nan))
            out.append(
                {
                    "Method": label,
                    "Parameter": name,
                    "Estimate": float(value),
                    "SE": float(self.se.get(name, np.nan)),
                    "CI_low": float(lo),
                    "CI_high": float(hi),
                }
            )
        return out

    def to_frame(self, label: str = None) -> pd.DataFrame:
        return pd.DataFrame(self.rows(label))

    def to_csv(self, path, label: str = None) -> None:
        write_table_csv(self.to_frame(label), path)

    def to_markdown(self, label: str = None) -> str:
        return markdown_table(self.to_frame(label))


def cc_rows(data: Dataset) -> List[dict]:
    """Complete-case mean of y with its analytic standard error."""
    y = data.y[data.observed_mask]
    se = float(y.std(ddof=1) / np.sqrt(y.size)) if y.size > 1 else np.nan
    mean = float(y.mean())
    return [
        {
            "Method": "CC",
            "Parameter": "E[y]",
            "Estimate": mean,
            "SE": se,
            "CI_low": mean - Z_95 * se,
            "CI_high": mean + Z_95 * se,
        }
    ]


def estimates_table(results: Sequence[FitResult], data: Dataset, label_method: str = "FI") -> pd.DataFrame:
    """One table across response links plus a complete-case row for E[y]."""
    rows = []
    for result in results:
        rows.extend(result.rows(f"{label_method} ({result.link})"))
    rows.extend(cc_rows(data))
    return pd.DataFrame(rows, columns=["Method", "Parameter", "Estimate", "SE", "CI_low", "CI_high"])


def write_table_csv(frame: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", na_rep="NA")


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "n/a" if not np.isfinite(value) else f"{value:.4f}"
    return str(value)


def markdown_table(frame: pd.DataFrame) -> str:
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    body = ["| " + " | ".join(_cell(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule] + body) + "\n"


def fit_mean_score(
    data: Dataset,
    outcome: OutcomeModel,
    response: ResponseModel,
    config: EstimatorConfig = EstimatorConfig(),
    seed: int = 0,
    standardize: bool = False,
) -> FitResult:
    """Point estimate plus bootstrap standard errors for one response link."""
    pipeline = MeanScorePipeline(outcome, response, config, standardize)
    point = pipeline(data, rng_stream(seed, (0,)), check=config.check_identifiability)
    names = pipeline.names()
    notes = []
    if not point.on_data_scale:
        notes.append("estimates of nonlinear components are on the standardized scale")
    se, ci, failures, unstable = {}, {}, 0, False
    if config.n_bootstrap:
        boot = bootstrap(
            data,
            pipeline,
            config.n_bootstrap,
            seed,
            point=point.vector(pipeline.tracks_gamma),
            percentile=config.percentile_ci,
            workers=config.workers,
        )
        se = dict(zip(names, boot.se))
        ci = {name: (lo, hi) for name, lo, hi in zip(names, boot.ci_low, boot.ci_high)}
        failures, unstable = boot.n_failed, boot.unstable
        if unstable:
            notes.append(f"unstable bootstrap: {failures} of {config.n_bootstrap} replicates failed")
    fit = point.outcome_fit
    return FitResult(
        gamma_hat=point.gamma,
        gamma_names=fit.model.gamma_names,
        phi_hat=point.phi,
        phi_names=response.param_names,
        mean_estimate=point.mean,
        cc_mean=point.cc_mean,
        method=config.method_tag,
        link=response.link.label,
        se=se,
        ci=ci,
        residual_norm=point.residual_norm,
        n_iter=point.n_iter,
        converged=point.converged,
        bootstrap_failures=failures,
        unstable_bootstrap=unstable,
        on_data_scale=point.on_data_scale,
        outcome_fit=fit,
        notes=tuple(notes),
    )
