import logging
from dataclasses import dataclass, replace
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from app.errors import ConfigError, DomainError, FitError
from app.models.bases import Covariates, as_frame

logger = logging.getLogger(__name__)

KNOT_CANDIDATES = (0, 1, 2, 3, 4)
CRITERIA = ("aic", "gcv")


@dataclass(frozen=True)
class SplineBasis:
    """Additive B-splines in the continuous columns, one copy per categorical level.

    Each continuous column contributes its B-spline basis minus the first
    function (the intercept carries the partition of unity); the resulting
    additive design is repeated for every observed level combination of the
    categorical columns (a tensor expansion with the level indicators).
    ``fitted`` places interior knots at quantiles of the sample.
    """

    continuous: Tuple[str, ...]
    categorical: Tuple[str, ...] = ()
    degree: int = 3
    n_interior_knots: int = 2
    knots: Tuple[Tuple[float, ...], ...] = ()
    levels: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "continuous", tuple(self.continuous))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        if not self.continuous:
            raise ConfigError("spline basis needs a continuous column")
        if self.degree < 1 or self.n_interior_knots < 0:
            raise ConfigError("spline degree must be >= 1 and knot count >= 0")

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.continuous + self.categorical

    @property
    def is_fitted(self) -> bool:
        return len(self.knots) == len(self.continuous) and (not self.categorical or bool(self.levels))

    @property
    def functions_per_column(self) -> int:
        return self.n_interior_knots + self.degree + 1

    @property
    def n_terms(self) -> int:
        additive = 1 + len(self.continuous) * (self.functions_per_column - 1)
        return additive * max(1, len(self.levels))

    @property
    def names(self) -> Tuple[str, ...]:
        additive = ["1"] + [
            f"B{i}({column})" for column in self.continuous for i in range(1, self.functions_per_column)
        ]
        if not self.categorical:
            return tuple(additive)
        out = []
        for level in self.levels:
            tag = ",".join(f"{c}={v:g}" for c, v in zip(self.categorical, level))
            out.extend(f"{name}|{tag}" for name in additive)
        return tuple(out)

    def with_knot_count(self, n_interior_knots: int) -> "SplineBasis":
        return replace(self, n_interior_knots=n_interior_knots, knots=(), levels=())

    def fitted(self, x: Covariates) -> "SplineBasis":
        frame = as_frame(x)
        knots = []
        for column in self.continuous:
            values = frame[column].to_numpy(dtype=float)
            lo, hi = float(values.min()), float(values.max())
            if hi <= lo:
                raise FitError(f"spline column '{column}' is constant")
            probs = np.linspace(0.0, 1.0, self.n_interior_knots + 2)[1:-1]
            interior = np.quantile(values, probs) if probs.size else np.empty(0)
            if np.unique(interior).size != interior.size or np.any((interior <= lo) | (interior >= hi)):
                raise FitError(f"spline column '{column}' has too few distinct values for {self.n_interior_knots} knots")
            full = np.concatenate([[lo] * (self.degree + 1), interior, [hi] * (self.degree + 1)])
            knots.append(tuple(float(k) for k in full))
        levels = ()
        if self.categorical:
            rows = frame.loc[:, list(self.categorical)].to_numpy(dtype=float)
            levels = tuple(tuple(float(v) for v in row) for row in np.unique(rows, axis=0))
        return replace(self, knots=tuple(knots), levels=levels)

    def column_basis(self, j: int, values: np.ndarray) -> np.ndarray:
        """All B-spline functions of continuous column j at ``values`` (clipped to the knot span)."""
        t = np.asarray(self.knots[j])
        x = np.clip(values, t[0], t[-1])
        spline = BSpline(t, np.eye(self.functions_per_column), self.degree, extrapolate=True)
        return spline(x)

    def design(self, x: Covariates) -> np.ndarray:
        if not self.is_fitted:
            raise FitError("spline basis must be fitted to data before use")
        frame = as_frame(x)
        parts = [np.ones((len(frame), 1))]
        for j, column in enumerate(self.continuous):
            parts.append(self.column_basis(j, frame[column].to_numpy(dtype=float))[:, 1:])
        additive = np.hstack(parts)
        if not self.categorical:
            return additive
        rows = frame.loc[:, list(self.categorical)].to_numpy(dtype=float)
        blocks = []
        matched = np.zeros(len(frame), dtype=bool)
        for level in self.levels:
            indicator = np.all(rows == np.asarray(level), axis=1)
            matched |= indicator
            blocks.append(additive * indicator[:, None])
        if not matched.all():
            row = int(np.flatnonzero(~matched)[0])
            raise DomainError(f"row {row}: categorical level {tuple(rows[row])} was not seen when fitting")
        return np.hstack(blocks)


@dataclass
class SplineFit:
    basis: SplineBasis
    coef: np.ndarray
    r2: float
    criterion: str
    scores: Dict[int, float]
    fitted_values: np.ndarray
    residuals: np.ndarray

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)


def _criterion(rss: float, n: int, p: int, criterion: str) -> float:
    if criterion == "gcv":
        return n * rss / (n - p) ** 2 if n > p else np.inf
    return n * np.log(max(rss / n, np.finfo(float).tiny)) + 2.0 * p


def fit_spline_mean(
    x: Covariates,
    y,
    basis: SplineBasis,
    criterion: str = "aic",
    candidates: Sequence[int] = KNOT_CANDIDATES,
) -> SplineFit:
    """Least-squares spline mean with the interior knot count chosen by AIC or GCV."""
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion '{criterion}', expected one of {CRITERIA}")
    frame = as_frame(x)
    y = np.asarray(y, dtype=float)
    n = y.size
    best, scores = None, {}
    for count in candidates:
        try:
            candidate = basis.with_knot_count(count).fitted(frame)
        except FitError as e:
            logger.debug(f"skipping {count} interior knots: {e}")
            continue
        X = candidate.design(frame)
        p = X.shape[1]
        if n < p or np.linalg.matrix_rank(X) < p:
            logger.debug(f"skipping {count} interior knots: design rank deficient")
            continue
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        scores[count] = _criterion(float(resid @ resid), n, p, criterion)
        if best is None or scores[count] < scores[best[0]]:
            best = (count, candidate, coef, resid)
    if best is None:
        raise FitError("spline design is rank deficient for every knot count")
    count, chosen, coef, resid = best
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 0.0 if tss == 0.0 else 1.0 - float(resid @ resid) / tss
    logger.debug(f"spline mean: {count} interior knots by {criterion.upper()}, R2={r2:.3f}")
    return SplineFit(chosen, coef, r2, criterion, scores, y - resid, resid)
