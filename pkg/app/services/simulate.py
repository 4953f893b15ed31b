"""Synthetic scenarios, population truths by quadrature, and the Monte Carlo harness.

Data are generated delta-first: x from its law, delta from
P(delta=1 | x) = 1 / integral p1(y | x) / pi(x, y) dy, and y from p1 only
for respondents. This reproduces the joint law of (x, delta, delta * y)
without ever sampling p(y | x) for nonrespondents.
"""
import logging
import multiprocessing as mp
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.errors import ConfigError, MnarError
from app.models.bases import DerivedBasis, LinearBasis
from app.models.dataset import Dataset
from app.models.links import LinkFunction
from app.models.outcome import OutcomeModel
from app.models.response import ResponseModel
from app.numerics.quadrature import default_rule, gauss_hermite_nodes, gauss_legendre_nodes, integrate_over_y
from app.numerics.rng import rng_stream
from app.numerics.splines import SplineBasis
from app.services.estimate import (
    Z_95,
    EstimatorConfig,
    MeanScorePipeline,
    OraclePipeline,
    bootstrap,
    markdown_table,
    write_table_csv,
)
from app.services.identify import identifiability_checklist, observed_normalizer

logger = logging.getLogger(__name__)

SCENARIOS = ("S1", "S2", "S3", "S4")
LAW_KINDS = ("normal", "uniform", "bernoulli")
GENERATE_CHUNK = 5000
COVARIATE_NODES = 40
FAILURE_FLAG_RATE = 0.05


@dataclass(frozen=True)
class CovariateLaw:
    """N(0, 1), Uniform(-1, 1) or Bernoulli(p)."""

    kind: str
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ConfigError(f"unknown covariate law '{self.kind}', expected one of {LAW_KINDS}")
        if self.kind == "bernoulli" and not 0.0 < self.p < 1.0:
            raise ConfigError("bernoulli covariate needs 0 < p < 1")

    @property
    def is_discrete(self) -> bool:
        return self.kind == "bernoulli"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "normal":
            return rng.standard_normal(n)
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, n)
        return (rng.random(n) < self.p).astype(float)

    def nodes(self, n_nodes: int = COVARIATE_NODES) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and probability weights (exact for the Bernoulli law)."""
        if self.kind == "normal":
            return gauss_hermite_nodes(n_nodes)
        if self.kind == "uniform":
            knots, weights = gauss_legendre_nodes(-1.0, 1.0, n_nodes)
            return knots, weights / 2.0
        return np.array([0.0, 1.0]), np.array([1.0 - self.p, self.p])


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    laws: Dict[str, CovariateLaw]
    outcome: OutcomeModel
    response: ResponseModel
    instruments: Tuple[str, ...] = ("z",)
    kappa2: Optional[float] = None
    estimation_outcome: Optional[OutcomeModel] = None

    def __post_init__(self):
        missing = [c for c in self.outcome.columns + self.response.columns if c not in self.laws]
        if missing:
            raise ConfigError(f"scenario {self.name}: no law for columns {sorted(set(missing))}")
        if set(self.instruments) & set(self.response.columns):
            raise ConfigError(f"scenario {self.name}: instruments enter the response model")
        if self.estimation_outcome is None:
            object.__setattr__(self, "estimation_outcome", self.outcome)

    @property
    def covariates(self) -> Tuple[str, ...]:
        return tuple(self.laws)

    @property
    def categorical(self) -> Tuple[str, ...]:
        return tuple(c for c, law in self.laws.items() if law.is_discrete)

    @property
    def response_skeleton(self) -> ResponseModel:
        return self.response.with_phi(np.zeros(self.response.phi.size))

    def method_label(self, method: str) -> str:
        if self.name == "S4":
            return f"{method}({self.response.link.label})"
        return method


def _normal_truth(kappa, sigma2) -> OutcomeModel:
    return OutcomeModel("normal", LinearBasis(("u", "z")), kappa, sigma2)


def _response(link: str, alpha, beta) -> ResponseModel:
    return ResponseModel(LinkFunction.parse(link), LinearBasis(("u",)), LinearBasis(), "identity", alpha, [beta])


def scenario(name: str, kappa2: float = None, link: str = None) -> ScenarioSpec:
    """Preset scenarios S1-S4; ``kappa2`` is the instrument strength for S1/S2, ``link`` picks S4's link."""
    key = name.upper()
    if key not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{name}', expected one of {SCENARIOS}")
    if kappa2 is not None and key in ("S3", "S4"):
        raise ConfigError(f"scenario {key} has no kappa2 knob")
    if link is not None and key != "S4":
        raise ConfigError(f"scenario {key} has a fixed response link")
    if key == "S1":
        k2 = 1.0 if kappa2 is None else float(kappa2)
        return ScenarioSpec(
            "S1",
            {"u": CovariateLaw("normal"), "z": CovariateLaw("bernoulli", 0.5)},
            _normal_truth([0.3, 0.4, k2], 0.5),
            _response("logistic", [0.7, -0.2], 0.29),
            kappa2=k2,
        )
    if key == "S2":
        k2 = 1.0 if kappa2 is None else float(kappa2)
        return ScenarioSpec(
            "S2",
            {"u": CovariateLaw("uniform"), "z": CovariateLaw("bernoulli", 0.7)},
            _normal_truth([-0.36, 0.59, k2], 0.5),
            _response("cauchy", [0.24, -0.1], 0.42),
            kappa2=k2,
        )
    if key == "S3":
        return ScenarioSpec(
            "S3",
            {"u": CovariateLaw("normal"), "z": CovariateLaw("normal")},
            OutcomeModel("bernoulli", LinearBasis(("u", "z")), [-0.21, 3.8, 1.0]),
            _response("probit", [0.4, 0.39], 0.3),
        )
    link = (link or "logistic").lower()
    if link not in ("logistic", "cauchy"):
        raise ConfigError("scenario S4 takes link logistic or cauchy")
    spline = SplineBasis(("u",), ("z",))
    return ScenarioSpec(
        "S4",
        {"u": CovariateLaw("uniform"), "z": CovariateLaw("bernoulli", 0.5)},
        OutcomeModel("normal", DerivedBasis("wave_exp"), [1.0], 0.25),
        _response(link, [0.1, -0.2], 0.3),
        estimation_outcome=OutcomeModel("normal", spline, np.zeros(spline.n_terms), 1.0),
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def response_rate_given_x(spec: ScenarioSpec, frame: pd.DataFrame) -> np.ndarray:
    """P(delta=1 | x) row by row, in chunks."""
    rates = []
    for start in range(0, len(frame), GENERATE_CHUNK):
        chunk = frame.iloc[start:start + GENERATE_CHUNK]
        rates.append(1.0 / observed_normalizer(spec.response, spec.outcome, chunk))
    return np.concatenate(rates)


def generate(spec: ScenarioSpec, n: int, seed: int, stream=(0,)) -> Dataset:
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = rng_stream(seed, stream)
    frame = pd.DataFrame({column: law.sample(n, rng) for column, law in spec.laws.items()})
    rate = response_rate_given_x(spec, frame)
    delta = (rng.random(n) < rate).astype(float)
    observed = delta == 1.0
    y = np.full(n, np.nan)
    if observed.any():
        y[observed] = spec.outcome.sample(frame.loc[observed], rng)
    frame["y"] = y
    frame["delta"] = delta
    if not delta.any():
        logger.warning(f"{spec.name}: no respondents among {n} rows")
    return Dataset(frame, spec.covariates, spec.instruments, categorical=spec.categorical)


# ---------------------------------------------------------------------------
# Population truths
# ---------------------------------------------------------------------------


def _covariate_grid(spec: ScenarioSpec) -> Tuple[pd.DataFrame, np.ndarray]:
    columns, nodes, weights = [], [], []
    for column, law in spec.laws.items():
        knots, w = law.nodes()
        columns.append(column)
        nodes.append(knots)
        weights.append(w)
    grid = np.array(list(product(*nodes)))
    mass = np.prod(np.array(list(product(*weights))), axis=1)
    return pd.DataFrame(grid, columns=columns), mass


@dataclass(frozen=True)
class PopulationTruth:
    mean: float
    respondent_mean: float
    response_rate: float

    @property
    def cc_bias(self) -> float:
        return self.respondent_mean - self.mean


def population_truth(spec: ScenarioSpec) -> PopulationTruth:
    """E[y], E[y | delta=1] and P(delta=1) by quadrature over y and x."""
    frame, mass = _covariate_grid(spec)
    rule = default_rule(spec.outcome, spec.response.link)
    D = observed_normalizer(spec.response, spec.outcome, frame, rule)
    H, G = spec.response.design(frame)

    def y_over_pi(Y):
        t = spec.response.linear_predictor_from(H, G, Y)
        return Y * np.exp(-spec.response.link.log_cdf(t))

    conditional_mean = np.atleast_1d(integrate_over_y(y_over_pi, spec.outcome, frame, rule)) / D
    rate = float(mass @ (1.0 / D))
    respondent_mean = float(mass @ (spec.outcome.mean(frame) / D)) / rate
    return PopulationTruth(float(mass @ conditional_mean), respondent_mean, rate)


def true_mean(spec: ScenarioSpec) -> float:
    return population_truth(spec).mean


def true_cc_bias(spec: ScenarioSpec) -> float:
    """E[y | delta=1] - E[y], the population bias of the complete-case mean."""
    return population_truth(spec).cc_bias


def true_response_rate(spec: ScenarioSpec) -> float:
    return population_truth(spec).response_rate


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


REPLICATE_COLUMNS = [
    "scenario",
    "kappa2",
    "replicate",
    "parameter",
    "method",
    "estimate",
    "se",
    "ci_low",
    "ci_high",
    "truth",
    "failed",
    "unstable",
]
SUMMARY_COLUMNS = [
    "scenario",
    "kappa2",
    "parameter",
    "method",
    "n_replicates",
    "n_failed",
    "n_unstable",
    "bias",
    "rmse",
    "coverage",
    "mcse_bias",
    "mcse_rmse",
    "mcse_coverage",
    "failure_flag",
]


def _record(spec, replicate, parameter, method, truth, estimate=np.nan, se=np.nan, ci=(np.nan, np.nan), failed=False, unstable=False):
    return {
        "scenario": spec.name,
        "kappa2": np.nan if spec.kappa2 is None else spec.kappa2,
        "replicate": replicate,
        "parameter": parameter,
        "method": spec.method_label(method),
        "estimate": float(estimate),
        "se": float(se),
        "ci_low": float(ci[0]),
        "ci_high": float(ci[1]),
        "truth": truth,
        "failed": bool(failed),
        "unstable": bool(unstable),
    }


def _replicate_task(args) -> List[dict]:
    spec, n, config, seed, r, truth_mean = args
    data = generate(spec, n, seed, (r, 0))
    truth_beta = float(spec.response.beta[0])
    y_obs = data.y[data.observed_mask]
    cc = float(y_obs.mean())
    cc_se = float(y_obs.std(ddof=1) / np.sqrt(y_obs.size)) if y_obs.size > 1 else np.nan
    records = [_record(spec, r, "E[y]", "CC", truth_mean, cc, cc_se, (cc - Z_95 * cc_se, cc + Z_95 * cc_se))]

    method = "Oracle" if config.oracle else "FI"
    if config.oracle:
        pipeline = OraclePipeline(spec.response, config.hajek)
    else:
        pipeline = MeanScorePipeline(
            spec.estimation_outcome, spec.response_skeleton, replace(config, check_identifiability=False)
        )
    try:
        point = pipeline(data, rng_stream(seed, (r, 1)))
    except MnarError as e:
        logger.info(f"{spec.name} replicate {r}: estimator failed ({e})")
        records.append(_record(spec, r, "E[y]", method, truth_mean, failed=True))
        records.append(_record(spec, r, "beta", method, truth_beta, failed=True))
        return records

    names = pipeline.names()
    values = point.vector(pipeline.tracks_gamma)
    se = np.full(len(names), np.nan)
    low, high = se.copy(), se.copy()
    unstable = False
    if config.n_bootstrap:
        boot = bootstrap(data, pipeline, config.n_bootstrap, seed, point=values, percentile=config.percentile_ci, stream_prefix=(r, 2))
        se, low, high, unstable = boot.se, boot.ci_low, boot.ci_high, boot.unstable
    index = {name: i for i, name in enumerate(names)}
    beta_name = spec.response.param_names[-1]
    for parameter, name, truth in (("E[y]", "E[y]", truth_mean), ("beta", beta_name, truth_beta)):
        i = index[name]
        records.append(
            _record(spec, r, parameter, method, truth, values[i], se[i], (low[i], high[i]), not point.converged, unstable)
        )
    return records


@dataclass
class McReport:
    replicates: pd.DataFrame
    summary: pd.DataFrame

    @classmethod
    def from_replicates(cls, replicates: pd.DataFrame) -> "McReport":
        """Aggregate replicate records into bias, RMSE and coverage with Monte Carlo SEs."""
        missing = [c for c in REPLICATE_COLUMNS if c not in replicates.columns]
        if missing:
            raise ConfigError(f"replicate records lack columns {missing}")
        replicates = replicates.loc[:, REPLICATE_COLUMNS].sort_values(
            ["scenario", "kappa2", "parameter", "method", "replicate"], kind="mergesort"
        ).reset_index(drop=True)
        rows = []
        keys = ["scenario", "kappa2", "parameter", "method"]
        for key, group in replicates.groupby(keys, sort=True, dropna=False):
            failed = group["failed"].astype(bool).to_numpy()
            ok = group.loc[~failed]
            errors = ok["estimate"].to_numpy(dtype=float) - ok["truth"].to_numpy(dtype=float)
            n_ok = errors.size
            bias = float(errors.mean()) if n_ok else np.nan
            rmse = float(np.sqrt(np.mean(errors ** 2))) if n_ok else np.nan
            coverage = mcse_bias = mcse_rmse = mcse_coverage = np.nan
            if n_ok >= 2:
                truth = ok["truth"].to_numpy(dtype=float)
                covered = (ok["ci_low"].to_numpy(dtype=float) <= truth) & (truth <= ok["ci_high"].to_numpy(dtype=float))
                has_ci = np.isfinite(ok["ci_low"].to_numpy(dtype=float))
                if has_ci.any():
                    coverage = float(covered[has_ci].mean())
                    mcse_coverage = float(np.sqrt(coverage * (1.0 - coverage) / has_ci.sum()))
                mcse_bias = float(errors.std(ddof=1) / np.sqrt(n_ok))
                if rmse > 0.0:
                    mcse_rmse = float((errors ** 2).std(ddof=1) / np.sqrt(n_ok) / (2.0 * rmse))
            n_failed = int(failed.sum())
            rows.append(
                dict(
                    zip(keys, key),
                    n_replicates=len(group),
                    n_failed=n_failed,
                    n_unstable=int(group["unstable"].astype(bool).sum()),
                    bias=bias,
                    rmse=rmse,
                    coverage=coverage,
                    mcse_bias=mcse_bias,
                    mcse_rmse=mcse_rmse,
                    mcse_coverage=mcse_coverage,
                    failure_flag=n_failed > FAILURE_FLAG_RATE * len(group),
                )
            )
        return cls(replicates, pd.DataFrame(rows, columns=SUMMARY_COLUMNS))

    def row(self, parameter: str, method: str) -> pd.Series:
        match = self.summary[(self.summary["parameter"] == parameter) & (self.summary["method"] == method)]
        if match.empty:
            raise KeyError(f"no summary row for {parameter} / {method}")
        return match.iloc[0]

    def to_csv(self, directory) -> Tuple[Path, Path]:
        directory = Path(directory)
        summary_path, replicates_path = directory / "summary.csv", directory / "replicates.csv"
        write_table_csv(self.summary, summary_path)
        write_table_csv(self.replicates, replicates_path)
        return summary_path, replicates_path

    def to_markdown(self) -> str:
        table = pd.DataFrame(
            {
                "Scenario": self.summary["scenario"],
                "Parameter": self.summary["parameter"],
                "κ2": [("-" if np.isnan(k) else f"{k:g}") for k in self.summary["kappa2"]],
                "Method": self.summary["method"],
                "Bias": self.summary["bias"],
                "RMSE": self.summary["rmse"],
                "CR": [("n/a" if np.isnan(c) else f"{100.0 * c:.1f}") for c in self.summary["coverage"]],
            }
        )
        text = markdown_table(table)
        flagged = self.summary[self.summary["failure_flag"]]
        for _, row in flagged.iterrows():
            text += (
                f"\nWarning: {row['scenario']} {row['parameter']} {row['method']}: "
                f"{row['n_failed']} of {row['n_replicates']} replicates failed\n"
            )
        return text


def run_monte_carlo(spec: ScenarioSpec, n: int, R: int, config: EstimatorConfig, seed: int, workers: int = 1) -> McReport:
    """R independent replicates of CC and mean-score (or oracle) estimation of E[y] and beta.

    Replicate r uses streams (r, 0) for data, (r, 1) for imputations and
    (r, 2, b) for bootstrap draws; records are aggregated in replicate order
    so the report does not depend on ``workers``.
    """
    if R < 1:
        raise ConfigError("R must be >= 1")
    truth = population_truth(spec)
    logger.info(
        f"{spec.name}: E[y]={truth.mean:.6f} CC bias={truth.cc_bias:.6f} response rate={truth.response_rate:.4f}"
    )
    verdict = identifiability_checklist(spec.response, spec.outcome, generate(spec, n, seed, (0, 0)))
    if not verdict.is_identifiable:
        logger.warning(f"{spec.name}: identifiability checklist reports {verdict.label}")

    tasks = [(spec, n, config, seed, r, truth.mean) for r in range(R)]
    if workers > 1:
        with mp.get_context("spawn").Pool(processes=workers) as pool:
            parts = list(pool.imap(_replicate_task, tasks, chunksize=max(1, R // (4 * workers))))
    else:
        parts = [_replicate_task(task) for task in tasks]
    records = [record for part in parts for record in part]
    report = McReport.from_replicates(pd.DataFrame(records, columns=REPLICATE_COLUMNS))
    logger.info(f"{spec.name}: {R} replicates aggregated")
    return report
