from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Tuple, Union

import numpy as np
import pandas as pd

from app.errors import ConfigError, SchemaError

Covariates = Union[pd.DataFrame, Mapping[str, float]]


def as_frame(x: Covariates) -> pd.DataFrame:
    """Accept a DataFrame or a single row given as a mapping."""
    if isinstance(x, pd.DataFrame):
        return x
    if isinstance(x, pd.Series):
        return x.to_frame().T
    return pd.DataFrame({key: np.atleast_1d(np.asarray(value, dtype=float)) for key, value in x.items()})


def _columns(frame: pd.DataFrame, columns: Tuple[str, ...]) -> np.ndarray:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"covariates missing columns {missing}")
    return frame.loc[:, list(columns)].to_numpy(dtype=float)


@dataclass(frozen=True)
class LinearBasis:
    """Intercept plus raw covariate columns."""

    columns: Tuple[str, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.intercept and not self.columns:
            raise ConfigError("a basis needs an intercept or at least one column")

    @property
    def names(self) -> Tuple[str, ...]:
        return (("(intercept)",) if self.intercept else ()) + self.columns

    @property
    def n_terms(self) -> int:
        return len(self.names)

    @property
    def is_constant(self) -> bool:
        return self.intercept and not self.columns

    def fitted(self, frame: pd.DataFrame) -> "LinearBasis":
        return self

    def design(self, x: Covariates) -> np.ndarray:
        frame = as_frame(x)
        parts = []
        if self.intercept:
            parts.append(np.ones((len(frame), 1)))
        if self.columns:
            parts.append(_columns(frame, self.columns))
        return np.hstack(parts)


def _wave_exp(frame: pd.DataFrame) -> np.ndarray:
    u = frame["u"].to_numpy(dtype=float)
    z = frame["z"].to_numpy(dtype=float)
    return z + np.cos(2.0 * np.pi * u) + np.exp(z + u)


# name -> (columns read, feature)
DERIVED_FEATURES: Dict[str, Tuple[Tuple[str, ...], Callable[[pd.DataFrame], np.ndarray]]] = {
    "wave_exp": (("u", "z"), _wave_exp),
}


@dataclass(frozen=True)
class DerivedBasis:
    """A single fixed nonlinear feature of the covariates, no intercept.

    Used for data-generating truths whose mean is not a linear form in raw
    covariates (the S4 mean z + cos(2 pi u) + exp(z + u)).
    """

    feature: str

    def __post_init__(self):
        if self.feature not in DERIVED_FEATURES:
            raise ConfigError(f"unknown derived feature '{self.feature}'")

    @property
    def columns(self) -> Tuple[str, ...]:
        return DERIVED_FEATURES[self.feature][0]

    @property
    def names(self) -> Tuple[str, ...]:
        return (self.feature,)

    @property
    def n_terms(self) -> int:
        return 1

    def fitted(self, frame: pd.DataFrame) -> "DerivedBasis":
        return self

    def design(self, x: Covariates) -> np.ndarray:
        frame = as_frame(x)
        columns, feature = DERIVED_FEATURES[self.feature]
        _columns(frame, columns)
        return feature(frame).reshape(-1, 1)


def full_column_rank(matrix: np.ndarray, rtol: float = 1e-10) -> bool:
    if matrix.shape[0] < matrix.shape[1]:
        return False
    singular = np.linalg.svd(matrix, compute_uv=False)
    return bool(singular.size) and singular[-1] > rtol * singular[0]
