import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from app.errors import SchemaError

logger = logging.getLogger(__name__)

# First data row of a CSV sits on line 2 (after the header).
_CSV_LINE_OFFSET = 2


@dataclass(frozen=True)
class Standardization:
    """Per-column (mean, sd) applied before fitting."""

    means: Dict[str, float] = field(default_factory=dict)
    sds: Dict[str, float] = field(default_factory=dict)

    def location_scale(self, column: str) -> Tuple[float, float]:
        return self.means.get(column, 0.0), self.sds.get(column, 1.0)

    def back_transform_mean(self, column: str, estimate: float, weight_mean: float = 1.0) -> float:
        """Undo y' = (y - a) / b for an IPW mean.

        The Horvitz-Thompson mean of a + b y' is a * mean(delta / pi) + b * HT(y'),
        so ``weight_mean`` is (1/n) sum delta_i / pi_i; pass 1.0 for Hajek.
        """
        a, b = self.location_scale(column)
        return a * weight_mean + b * estimate

    def back_transform_response(self, phi: np.ndarray, h_columns: Tuple[str, ...], outcome: str) -> np.ndarray:
        """Map (alpha, beta) fitted on standardized data back to the data scale.

        Valid for h = intercept + columns and a constant g, where
        alpha0 + sum_j alpha_j u'_j + beta y' is affine in the raw columns.
        """
        phi = np.asarray(phi, dtype=float)
        alpha, beta = phi[:-1].copy(), phi[-1]
        a_y, b_y = self.location_scale(outcome)
        raw_beta = beta / b_y
        intercept = alpha[0] - raw_beta * a_y
        for j, column in enumerate(h_columns, start=1):
            a_u, b_u = self.location_scale(column)
            alpha[j] = alpha[j] / b_u
            intercept -= alpha[j] * a_u
        alpha[0] = intercept
        return np.append(alpha, raw_beta)

    def back_transform_outcome(self, gamma: np.ndarray, columns: Tuple[str, ...], outcome: str, family: str) -> np.ndarray:
        """Map a linear respondents' model (intercept + columns) back to the data scale.

        Normal: E[y | x] = a_y + b_y * eta'(x'), sigma2 scales by b_y^2.
        Bernoulli: only the covariates are rescaled.
        """
        gamma = np.asarray(gamma, dtype=float).copy()
        a_y, b_y = (0.0, 1.0) if family == "bernoulli" else self.location_scale(outcome)
        kappa = gamma[: len(columns) + 1]
        intercept = kappa[0]
        for j, column in enumerate(columns, start=1):
            a_u, b_u = self.location_scale(column)
            kappa[j] = kappa[j] / b_u
            intercept -= kappa[j] * a_u
        kappa[0] = intercept
        kappa = a_y * np.eye(1, kappa.size)[0] + b_y * kappa
        if family == "normal":
            return np.append(kappa, gamma[-1] * b_y ** 2)
        return kappa


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows (u, z, y-or-missing, delta) with column roles.

    ``frame`` holds the covariates, the outcome (NaN where missing) and the
    response indicator. Instruments are covariates designated as such; they
    must never enter a response model index.
    """

    frame: pd.DataFrame
    covariates: Tuple[str, ...]
    instruments: Tuple[str, ...]
    outcome: str = "y"
    delta: str = "delta"
    categorical: Tuple[str, ...] = ()
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        for name in ("covariates", "instruments", "categorical"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.instruments:
            raise SchemaError("at least one instrument column must be declared")
        unknown = [c for c in self.instruments + self.categorical if c not in self.covariates]
        if unknown:
            raise SchemaError(f"columns {unknown} are not declared covariates")
        needed = self.covariates + (self.outcome, self.delta)
        absent = [c for c in needed if c not in self.frame.columns]
        if absent:
            raise SchemaError(f"dataset lacks columns {absent}")
        if len(self.frame) < 1:
            raise SchemaError("dataset has no rows")
        delta = self.frame[self.delta].to_numpy(dtype=float)
        if not np.all((delta == 0.0) | (delta == 1.0)):
            raise SchemaError(f"response indicator '{self.delta}' must be 0 or 1")
        present = self.frame[self.outcome].notna().to_numpy()
        mismatch = np.flatnonzero(present != (delta == 1.0))
        if mismatch.size:
            row = int(mismatch[0])
            state = "present" if present[row] else "missing"
            raise SchemaError(f"row {row}: outcome {state} but {self.delta}={int(delta[row])}")
        if not present.any():
            raise SchemaError("dataset has no observed outcome")
        if self.frame.loc[:, list(self.covariates)].isna().any().any():
            raise SchemaError("covariates must be fully observed")

    @classmethod
    def from_csv(
        cls,
        path,
        covariates: Iterable[str],
        instruments: Iterable[str],
        outcome: str = "y",
        delta: str = "delta",
        categorical: Iterable[str] = (),
        source: str = None,
    ) -> "Dataset":
        """Read a header-ful CSV where a missing outcome is an empty field.

        ``source`` names the data in error messages when ``path`` is a buffer.
        """
        name = source or path
        try:
            frame = pd.read_csv(path, keep_default_na=False, na_values=[""])
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise SchemaError(f"cannot parse {name}: {e}")
        covariates = tuple(covariates)
        for column in covariates + (outcome, delta):
            if column not in frame.columns:
                raise SchemaError(f"{name}: missing column '{column}'")
            if not pd.api.types.is_numeric_dtype(frame[column]):
                raw = pd.to_numeric(frame[column], errors="coerce")
                bad = np.flatnonzero(raw.isna() & frame[column].notna())
                raise SchemaError(
                    f"{name}: line {int(bad[0]) + _CSV_LINE_OFFSET}: non-numeric value in '{column}'"
                )
        delta_values = frame[delta].to_numpy(dtype=float)
        present = frame[outcome].notna().to_numpy()
        for row in np.flatnonzero(present != (delta_values == 1.0)):
            line = int(row) + _CSV_LINE_OFFSET
            if present[row]:
                raise SchemaError(f"{name}: line {line}: outcome present where {delta}={delta_values[row]:g}")
            raise SchemaError(f"{name}: line {line}: outcome missing where {delta}={delta_values[row]:g}")
        return cls(frame, covariates, tuple(instruments), outcome, delta, tuple(categorical))

    def to_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        columns = list(self.covariates) + [self.outcome, self.delta]
        out = self.frame.loc[:, columns].copy()
        out[self.delta] = out[self.delta].astype(int)
        out.to_csv(path, index=False, na_rep="", float_format="%.12g")

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def observed_mask(self) -> np.ndarray:
        return self.frame[self.delta].to_numpy(dtype=float) == 1.0

    @property
    def n_observed(self) -> int:
        return int(self.observed_mask.sum())

    @property
    def n_missing(self) -> int:
        return self.n - self.n_observed

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.outcome].to_numpy(dtype=float)

    @property
    def delta_values(self) -> np.ndarray:
        return self.frame[self.delta].to_numpy(dtype=float)

    @property
    def observed(self) -> pd.DataFrame:
        return self.frame.loc[self.observed_mask]

    @property
    def missing(self) -> pd.DataFrame:
        return self.frame.loc[~self.observed_mask]

    @property
    def non_instruments(self) -> Tuple[str, ...]:
        return tuple(c for c in self.covariates if c not in self.instruments)

    def resample(self, indices: np.ndarray) -> "Dataset":
        frame = self.frame.iloc[np.asarray(indices)].reset_index(drop=True)
        return replace(self, frame=frame)

    def standardized(self, include_outcome: bool = True) -> "Dataset":
        """Center and scale the outcome and the non-categorical covariates."""
        columns = [c for c in self.covariates if c not in self.categorical]
        if include_outcome:
            columns.append(self.outcome)
        frame = self.frame.copy()
        means, sds = {}, {}
        for column in columns:
            values = frame[column]
            mean, sd = float(values.mean()), float(values.std())
            if not np.isfinite(sd) or sd == 0.0:
                logger.warning(f"column '{column}' is constant, left unscaled")
                sd = 1.0
            frame[column] = (values - mean) / sd
            means[column], sds[column] = mean, sd
        return replace(self, frame=frame, standardization=Standardization(means, sds))
