"""Identifiability diagnostics for respondents'-model / response-model pairs.

Two parameterizations are observationally equivalent exactly when their
identified functionals

    phi(y, x) = p1(y | x) / integral p1(y | x) / pi(x, y) dy

coincide, so every check here is either a statement about that functional
or a condition that guarantees its injectivity.
"""
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from app.errors import ConfigError, IntegrationError, SchemaError
from app.models.bases import Covariates, LinearBasis, as_frame, full_column_rank
from app.models.dataset import Dataset
from app.models.links import LinkFunction
from app.models.outcome import FAMILIES, OutcomeModel
from app.models.response import TRANSFORMS, ResponseModel
from app.numerics.quadrature import QuadratureRule, default_rule, integrate_over_y

logger = logging.getLogger(__name__)

IDENTIFIABLE = "identifiable"
NOT_IDENTIFIABLE = "not_identifiable"
CONDITION_FAILED = "condition_failed"
INCONCLUSIVE = "inconclusive"

CONDITIONS = ("C1", "C4", "C5", "C6", "C7")
RANK_RTOL = 1e-10
WITNESS_BOUNDS = (0.05, 0.95)
DEFAULT_S_GRID = (0.5, 1.0, 1.5)
SCAN_Z = np.linspace(-40.0, -5.0, 141)

C3_NOTE = "(C3) identifiability of p(z|delta=0,u)/p(z|delta=1,u) is assumed, not tested"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CategoricalRespondentTable:
    """p1(y | delta=1, z): one column per instrument level, rows are y levels."""

    p1: np.ndarray
    y_levels: Tuple = None
    z_levels: Tuple = None

    def __post_init__(self):
        p1 = np.array(self.p1, dtype=float)
        if p1.ndim != 2 or p1.size == 0:
            raise ConfigError("malformed table: p1 must be a non-empty m_y x m_z matrix")
        if np.any(p1 < 0.0) or np.any(p1 > 1.0) or not np.all(np.isfinite(p1)):
            raise ConfigError("malformed table: entries must lie in [0, 1]")
        if np.any(np.abs(p1.sum(axis=0) - 1.0) > 1e-12):
            raise ConfigError("malformed table: every column must sum to 1")
        p1.setflags(write=False)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "y_levels", tuple(self.y_levels or range(1, p1.shape[0] + 1)))
        object.__setattr__(self, "z_levels", tuple(self.z_levels or range(1, p1.shape[1] + 1)))

    @classmethod
    def from_counts(cls, counts, y_levels=None, z_levels=None) -> "CategoricalRespondentTable":
        counts = np.asarray(counts, dtype=float)
        totals = counts.sum(axis=0)
        if np.any(totals <= 0):
            raise SchemaError("every instrument level needs at least one respondent")
        p1 = counts / totals
        # renormalize once more so columns sum to one within rounding
        return cls(p1 / p1.sum(axis=0), y_levels, z_levels)

    @property
    def m_y(self) -> int:
        return self.p1.shape[0]

    @property
    def m_z(self) -> int:
        return self.p1.shape[1]


@dataclass(frozen=True, eq=False)
class CategoricalModel:
    """A categorical table paired with a mechanism pi(y) = P(delta=1 | y)."""

    table: CategoricalRespondentTable
    pi: np.ndarray

    def __post_init__(self):
        pi = np.broadcast_to(np.asarray(self.pi, dtype=float), (self.table.m_y,)).copy()
        if np.any(pi <= 0.0) or np.any(pi > 1.0):
            raise ConfigError("response probabilities must lie in (0, 1]")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    def denominators(self) -> np.ndarray:
        return self.table.p1.T @ (1.0 / self.pi)

    def phi_grid(self, x_grid=None, y_grid=None) -> np.ndarray:
        """phi[z, y] = p1(y | z) / sum_y' p1(y' | z) / pi(y')."""
        return self.table.p1.T / self.denominators()[:, None]


@dataclass(frozen=True, eq=False)
class JointModel:
    response: ResponseModel
    outcome: OutcomeModel
    rule: Optional[QuadratureRule] = None

    def phi_grid(self, x_grid: Covariates, y_grid) -> np.ndarray:
        frame = as_frame(x_grid)
        y = np.asarray(y_grid, dtype=float)
        D = observed_normalizer(self.response, self.outcome, frame, self.rule)
        Y = np.broadcast_to(y, (len(frame), y.size))
        return self.outcome.density(frame, Y) / D[:, None]


@dataclass(frozen=True)
class CategoricalWitness:
    table: CategoricalRespondentTable
    pi: np.ndarray
    pi_alt: np.ndarray
    distance: float

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"y_level": list(self.table.y_levels), "pi": self.pi, "pi_alt": self.pi_alt})


@dataclass
class IdentifiabilityVerdict:
    status: str
    failed: Tuple[str, ...] = ()
    witness: Optional[CategoricalWitness] = None
    checks: Dict[str, bool] = field(default_factory=dict)
    notes: Tuple[str, ...] = ()

    @property
    def is_identifiable(self) -> bool:
        return self.status == IDENTIFIABLE

    @property
    def label(self) -> str:
        if self.status == CONDITION_FAILED:
            return f"ConditionFailed({','.join(self.failed)})"
        return {IDENTIFIABLE: "Identifiable", NOT_IDENTIFIABLE: "NotIdentifiable"}.get(self.status, "Inconclusive")

    def to_report(self) -> str:
        """Key-value text; the witness table is written separately as CSV."""
        lines = [f"status={self.label}", f"failed={','.join(self.failed)}"]
        for name in CONDITIONS:
            if name in self.checks:
                lines.append(f"check.{name}={'pass' if self.checks[name] else 'fail'}")
        if self.witness is not None:
            lines.append(f"witness.distance={self.witness.distance:.3e}")
        for i, note in enumerate(self.notes, start=1):
            lines.append(f"note.{i}={note}")
        return "\n".join(lines) + "\n"

    def witness_frame(self) -> Optional[pd.DataFrame]:
        return None if self.witness is None else self.witness.frame()


class EquivalenceCheck(NamedTuple):
    equal: bool
    distance: float


class TailCheck(NamedTuple):
    holds: bool
    s: Optional[float]
    analytic: bool
    scan: Dict[float, bool]


# ---------------------------------------------------------------------------
# Identified functional and observed likelihood
# ---------------------------------------------------------------------------


def observed_normalizer(response: ResponseModel, outcome: OutcomeModel, x: Covariates, rule=None) -> np.ndarray:
    """D(x) = integral p1(y | x) / pi(x, y) dy = 1 / P(delta=1 | x), one value per row."""
    frame = as_frame(x)
    rule = rule or default_rule(outcome, response.link)
    H, G = response.design(frame)

    def inverse_prob(Y):
        return np.exp(-response.link.log_cdf(response.linear_predictor_from(H, G, Y)))

    D = np.atleast_1d(integrate_over_y(inverse_prob, outcome, frame, rule))
    if not np.all(np.isfinite(D)) or np.any(D <= 0.0):
        raise IntegrationError("integral of p1/pi diverges")
    return D


def phi_functional(response: ResponseModel, outcome: OutcomeModel, x: Covariates, y, rule=None):
    """phi(y, x) = p1(y | x) / D(x).

    A single covariate row is evaluated at every y given; several rows are
    paired with y elementwise.
    """
    frame = as_frame(x)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(frame) == 1:
        values = JointModel(response, outcome, rule).phi_grid(frame, y)[0]
    else:
        if y.size != len(frame):
            raise ConfigError("y must have one value per covariate row")
        D = observed_normalizer(response, outcome, frame, rule)
        values = outcome.density(frame, y) / D
    return float(values[0]) if values.size == 1 else values


def verify_equal_observed_likelihood(model_a, model_b, x_grid=None, y_grid=None, tol: float = 1e-8) -> EquivalenceCheck:
    """Sup distance between two models' identified functionals over the grids."""
    if isinstance(model_a, JointModel) and y_grid is None:
        support = model_a.outcome.support
        y_grid = np.asarray(support) if support else np.linspace(-6.0, 6.0, 121)
    phi_a = model_a.phi_grid(x_grid, y_grid)
    phi_b = model_b.phi_grid(x_grid, y_grid)
    if phi_a.shape != phi_b.shape:
        raise ConfigError("models evaluate on different grids")
    distance = float(np.max(np.abs(phi_a - phi_b)))
    return EquivalenceCheck(distance <= tol, distance)


def observed_loglik(response: ResponseModel, outcome: OutcomeModel, data: Dataset, rule=None) -> float:
    """Observed log-likelihood: log phi(y_i, x_i) for respondents, log(1 - 1/D) otherwise."""
    D = observed_normalizer(response, outcome, data.frame, rule)
    obs = data.observed_mask
    respondents = outcome.log_density(data.observed, data.y[obs]) - np.log(D[obs])
    with np.errstate(divide="ignore"):
        nonrespondents = np.log1p(-1.0 / D[~obs])
    return float(respondents.sum() + nonrespondents.sum())


# ---------------------------------------------------------------------------
# Categorical instruments and outcomes
# ---------------------------------------------------------------------------


def _witness_step(base_w: np.ndarray, direction: np.ndarray, lo: float, hi: float) -> float:
    """Largest t >= 0 keeping base_w + t * direction inside [lo, hi]."""
    limits = []
    for w, d in zip(base_w, direction):
        if d > 0:
            limits.append((hi - w) / d)
        elif d < 0:
            limits.append((lo - w) / d)
    return max(0.0, min(limits)) if limits else 0.0


def check_categorical(table: CategoricalRespondentTable, base_pi=0.5) -> IdentifiabilityVerdict:
    """Rank test for categorical y and z.

    The mechanism is identified iff p1^T d = 0 forces d = 0 for
    d = 1/pi - 1/pi', i.e. iff rank(p1) = m_y. When m_y > m_z a null-space
    direction yields an explicit alternative mechanism.
    """
    base = CategoricalModel(table, base_pi)
    singular = linalg.svdvals(table.p1)
    rank = int(np.sum(singular > RANK_RTOL * singular[0]))
    notes = (f"rank(p1)={rank}, m_y={table.m_y}, m_z={table.m_z}", C3_NOTE)

    if table.m_y <= table.m_z:
        if rank == table.m_y:
            return IdentifiabilityVerdict(IDENTIFIABLE, notes=notes)
        return IdentifiabilityVerdict(
            INCONCLUSIVE, notes=notes + ("m_y <= m_z but p1 is rank deficient; instrument relevance fails",)
        )

    direction = linalg.null_space(table.p1.T, rcond=RANK_RTOL)[:, 0]
    base_w = 1.0 / base.pi
    lo_pi, hi_pi = WITNESS_BOUNDS
    bounds = [(1.0 / hi_pi, 1.0 / lo_pi), (1.0 + 1e-9, np.inf)]
    alt_w = None
    for lo, hi in bounds:
        for sign in (1.0, -1.0):
            step = _witness_step(base_w, sign * direction, lo, hi)
            if step > 0.0:
                alt_w = base_w + 0.5 * step * sign * direction
                break
        if alt_w is not None:
            break
    if alt_w is None:
        return IdentifiabilityVerdict(INCONCLUSIVE, notes=notes + ("no admissible witness mechanism found",))

    alternative = CategoricalModel(table, 1.0 / alt_w)
    check = verify_equal_observed_likelihood(base, alternative)
    if not check.equal:
        logger.warning(f"categorical witness failed verification (distance={check.distance:.3e})")
        return IdentifiabilityVerdict(INCONCLUSIVE, notes=notes + ("witness failed verification",))
    witness = CategoricalWitness(table, base.pi, alternative.pi, check.distance)
    return IdentifiabilityVerdict(NOT_IDENTIFIABLE, witness=witness, notes=notes)


def categorical_table_from_data(data: Dataset) -> CategoricalRespondentTable:
    """Empirical p1(y | z) among respondents for a single categorical instrument."""
    if len(data.instruments) != 1:
        raise ConfigError("categorical diagnostics need exactly one instrument column")
    instrument = data.instruments[0]
    observed = data.observed
    counts = pd.crosstab(observed[data.outcome], observed[instrument])
    return CategoricalRespondentTable.from_counts(
        counts.to_numpy(), tuple(counts.index.tolist()), tuple(counts.columns.tolist())
    )


# ---------------------------------------------------------------------------
# Conditions for continuous or ordered outcomes
# ---------------------------------------------------------------------------


def _scan_holds(link: LinkFunction, s: float) -> bool:
    """log Psi(z) + |z|^s must not decrease towards the far end of the scan window."""
    values = link.log_cdf(SCAN_Z) + np.abs(SCAN_Z) ** s
    return bool(np.all(np.isfinite(values)) and values[0] >= values[-1] - 1e-12)


def check_tail_condition(link: LinkFunction, s_grid: Sequence[float] = DEFAULT_S_GRID) -> TailCheck:
    """liminf_{z -> -inf} Psi(z) exp(|z|^s) > 0 for some s in (0, 2).

    Analytic for the supported links: exponential (logistic) tails satisfy it
    from s = 1 on, polynomial (Cauchy, Student-t) tails for every s, Gaussian
    (probit) tails for no s < 2. The numeric scan on z in [-40, -5] must
    agree with the analytic answer for the returned witness s.
    """
    if any(not 0.0 < s < 2.0 for s in s_grid):
        raise ConfigError("tail exponents must lie in (0, 2)")
    scan = {float(s): _scan_holds(link, s) for s in s_grid}
    if link.tail == "gaussian":
        return TailCheck(False, None, False, scan)
    for s in sorted(scan):
        analytic = link.tail == "polynomial" or s >= 1.0
        if analytic and scan[s]:
            return TailCheck(True, s, True, scan)
    # analytic classification holds but nothing on the grid confirms it numerically
    return TailCheck(False, None, True, scan)


def likelihood_ratio_slope(outcome: OutcomeModel, u: Dict[str, float], z1: Dict[str, float], z2: Dict[str, float]) -> float:
    """(theta1 - theta2) / tau: log p1(y|u,z1)/p1(y|u,z2) is this slope times y plus a constant."""
    if dict(z1) == dict(z2):
        raise ConfigError("instrument values z1 and z2 must differ")
    frame = pd.DataFrame([{**u, **z1}, {**u, **z2}])
    theta = outcome.natural_parameter(frame)
    return float((theta[0] - theta[1]) / outcome.dispersion)


def check_mlr(outcome: OutcomeModel, u: Dict[str, float], z1: Dict[str, float], z2: Dict[str, float], tol: float = 1e-10) -> bool:
    """Monotone, non-constant likelihood ratio between two instrument values.

    For the exponential-family respondents' models the ratio is proportional
    to exp{(theta1 - theta2) y / tau}: monotone always, and non-constant
    (the instrument is relevant) iff the natural parameters differ.
    """
    if outcome.family not in FAMILIES:
        raise ConfigError(f"no likelihood-ratio check for family '{outcome.family}'")
    return abs(likelihood_ratio_slope(outcome, u, z1, z2)) > tol


def check_completeness_counterexample(u_grid, quadratic: float = 1.0, z_levels=(0.0, 1.0)) -> float:
    """max |E[1 + y - u - c (y - u)^2 | delta=1, u, z]| for y | u, z ~ N(u + z, 1).

    With c = 1 the expectation is z - z^2, zero for binary z although the
    function is not zero: completeness fails.
    """
    outcome = OutcomeModel("normal", LinearBasis(("u", "z"), intercept=False), [1.0, 1.0], 1.0)
    largest = 0.0
    for u in np.atleast_1d(np.asarray(u_grid, dtype=float)):
        for z in z_levels:
            value = integrate_over_y(
                lambda y: 1.0 + y - u - quadratic * (y - u) ** 2,
                outcome,
                {"u": u, "z": z},
                QuadratureRule.gauss_hermite(20),
            )
            largest = max(largest, abs(value))
    return largest


def _evenly(rows: np.ndarray, limit: int) -> np.ndarray:
    if len(rows) <= limit:
        return rows
    return rows[np.linspace(0, len(rows) - 1, limit).astype(int)]


def _relevance_everywhere(outcome: OutcomeModel, data: Dataset, max_u_rows: int, tol: float) -> bool:
    u_columns = list(data.non_instruments)
    z_columns = list(data.instruments)
    z_rows = np.unique(data.frame.loc[:, z_columns].to_numpy(dtype=float), axis=0)
    z_rows = _evenly(z_rows, 10) if len(z_rows) > 10 else z_rows
    if len(z_rows) < 2:
        return False
    if u_columns:
        u_rows = _evenly(np.unique(data.frame.loc[:, u_columns].to_numpy(dtype=float), axis=0), max_u_rows)
    else:
        u_rows = np.empty((1, 0))
    for u_row in u_rows:
        u = dict(zip(u_columns, u_row))
        ok = any(
            check_mlr(outcome, u, dict(zip(z_columns, z1)), dict(zip(z_columns, z2)), tol)
            for z1, z2 in combinations(z_rows, 2)
        )
        if not ok:
            return False
    return True


def identifiability_checklist(
    response: ResponseModel,
    outcome: OutcomeModel,
    data: Dataset,
    s_grid: Sequence[float] = DEFAULT_S_GRID,
    max_u_rows: int = 50,
    tol: float = 1e-10,
) -> IdentifiabilityVerdict:
    """Sufficient conditions for identifiability with an instrument.

    C1 instrument excluded from the response model; C4 response of the form
    Psi{h(u;alpha) + g(u;beta) m(y)} with injective h, g; C5 a supported
    respondents' family with a full-rank design; C6 monotone, non-constant
    likelihood ratio in the instrument at every sampled u (this also carries
    the relevance half of C1); C7 finite normalizer, by the tail test for
    normal outcomes and automatically for finite support.
    """
    notes = [C3_NOTE, f"(C5) certified by family membership ({outcome.family})"]
    checks = {}

    overlap = set(response.columns) & set(data.instruments)
    checks["C1"] = not overlap and bool(data.instruments)
    if overlap:
        notes.append(f"(C1) instrument columns {sorted(overlap)} enter the response model")

    try:
        H, G = response.design(data.frame)
        checks["C4"] = (
            response.transform in TRANSFORMS
            and full_column_rank(H)
            and full_column_rank(G)
        )
    except SchemaError as e:
        checks["C4"] = False
        notes.append(f"(C4) {e}")

    try:
        X = outcome.basis.design(data.observed)
        checks["C5"] = outcome.family in FAMILIES and full_column_rank(X)
    except (SchemaError, ArithmeticError) as e:
        checks["C5"] = False
        notes.append(f"(C5) {e}")

    checks["C6"] = _relevance_everywhere(outcome, data, max_u_rows, tol)
    if not checks["C6"]:
        notes.append("(C6) respondents' law does not change with the instrument at some u")

    if outcome.is_discrete:
        checks["C7"] = True
        notes.append("(C7) holds: finite outcome support")
    else:
        tail = check_tail_condition(response.link, s_grid)
        checks["C7"] = tail.holds
        if tail.holds:
            notes.append(f"(C7) tail condition holds for {response.link.label} with s={tail.s:g}")
        else:
            notes.append(f"(C7) tail condition fails for {response.link.label}")

    failed = tuple(name for name in CONDITIONS if not checks[name])
    status = IDENTIFIABLE if not failed else CONDITION_FAILED
    logger.info(f"identifiability checklist: {status} {failed or ''}")
    return IdentifiabilityVerdict(status, failed=failed, checks=checks, notes=tuple(notes))
