"""Declarative model configuration: dotenv-format KEY=value files.

Lists are comma separated; TABLE holds one comma list per instrument level,
levels separated by ';'. Keys are read with ``dotenv_values`` so the same
files can sit next to the process-level .env settings.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, set_key

from app.errors import ConfigError
from app.models.bases import DerivedBasis, LinearBasis
from app.models.dataset import Dataset
from app.models.links import LinkFunction
from app.models.outcome import OutcomeModel
from app.models.response import ResponseModel
from app.numerics.splines import CRITERIA, SplineBasis

logger = logging.getLogger(__name__)

CONFIG_KEYS = (
    "SCENARIO",
    "KAPPA2",
    "LINK",
    "LINK_DF",
    "OUTCOME",
    "DELTA",
    "COVARIATES",
    "INSTRUMENTS",
    "CATEGORICAL",
    "RESPONSE_COLUMNS",
    "RESPONSE_G_COLUMNS",
    "TRANSFORM",
    "ALPHA",
    "BETA",
    "OUTCOME_FAMILY",
    "OUTCOME_BASIS",
    "OUTCOME_COLUMNS",
    "KAPPA",
    "SIGMA2",
    "SPLINE_DEGREE",
    "SPLINE_CRITERION",
    "TABLE",
    "PI",
    "STANDARDIZE",
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _split(value: str, sep: str = ",") -> List[str]:
    return [part.strip() for part in value.split(sep) if part.strip()]


@dataclass
class ModelConfig:
    values: Dict[str, str] = field(default_factory=dict)
    source: Optional[str] = None

    def __post_init__(self):
        unknown = sorted(k for k in self.values if k not in CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"{self.source or 'config'}: unknown keys {unknown}")
        empty = sorted(k for k, v in self.values.items() if v is None)
        if empty:
            raise ConfigError(f"{self.source or 'config'}: keys without a value {empty}")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        return cls(dict(dotenv_values(path)), str(path))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "ModelConfig":
        values = {}
        for key, value in mapping.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            values[str(key).upper()] = None if value is None else str(value)
        return cls(values)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("")
        for key in CONFIG_KEYS:
            if key in self.values:
                set_key(str(path), key, self.values[key], quote_mode="never")

    def digest(self) -> str:
        text = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    # -- raw accessors -----------------------------------------------------

    def get(self, key: str, default: str = None) -> Optional[str]:
        value = self.values.get(key)
        return default if value is None or value.strip() == "" else value.strip()

    def names(self, key: str, default: Tuple[str, ...] = ()) -> Tuple[str, ...]:
        value = self.get(key)
        return tuple(_split(value)) if value is not None else tuple(default)

    def floats(self, key: str) -> Optional[np.ndarray]:
        value = self.get(key)
        if value is None:
            return None
        try:
            return np.array([float(v) for v in _split(value)])
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers, got '{value}'")

    def number(self, key: str, default: float = None) -> Optional[float]:
        values = self.floats(key)
        if values is None:
            return default
        if values.size != 1:
            raise ConfigError(f"{key}: expected a single number")
        return float(values[0])

    def flag(self, key: str, default: bool) -> bool:
        value = self.get(key)
        if value is None:
            return default
        if value.lower() in _TRUE:
            return True
        if value.lower() in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got '{value}'")

    # -- roles -------------------------------------------------------------

    @property
    def outcome_column(self) -> str:
        return self.get("OUTCOME", "y")

    @property
    def delta_column(self) -> str:
        return self.get("DELTA", "delta")

    @property
    def covariates(self) -> Tuple[str, ...]:
        return self.names("COVARIATES")

    @property
    def instruments(self) -> Tuple[str, ...]:
        return self.names("INSTRUMENTS")

    @property
    def categorical(self) -> Tuple[str, ...]:
        return self.names("CATEGORICAL")

    @property
    def scenario(self) -> Optional[str]:
        return self.get("SCENARIO")

    @property
    def standardize(self) -> bool:
        return self.flag("STANDARDIZE", True)

    @property
    def spline_criterion(self) -> str:
        criterion = self.get("SPLINE_CRITERION", "aic").lower()
        if criterion not in CRITERIA:
            raise ConfigError(f"SPLINE_CRITERION must be one of {CRITERIA}")
        return criterion

    @property
    def is_categorical(self) -> bool:
        """Both the outcome and the instrument are categorical."""
        family = self.get("OUTCOME_FAMILY", "normal").lower()
        if family != "categorical" and self.get("TABLE") is None:
            return False
        return not self.instruments or set(self.instruments) <= set(self.categorical)

    def load_dataset(self, path, source: str = None) -> Dataset:
        if not self.covariates or not self.instruments:
            raise ConfigError("COVARIATES and INSTRUMENTS are required to read data")
        return Dataset.from_csv(
            path,
            self.covariates,
            self.instruments,
            self.outcome_column,
            self.delta_column,
            self.categorical,
            source=source,
        )

    # -- models ------------------------------------------------------------

    def links(self) -> List[LinkFunction]:
        df = self.number("LINK_DF")
        df = None if df is None else int(df)
        return [LinkFunction.parse(name, df) for name in self.names("LINK", ("logistic",))]

    def response(self, link: LinkFunction = None) -> ResponseModel:
        """Response model with ALPHA/BETA if given, zeros otherwise."""
        link = link or self.links()[0]
        default_h = tuple(c for c in self.covariates if c not in self.instruments)
        h_basis = LinearBasis(self.names("RESPONSE_COLUMNS", default_h))
        g_basis = LinearBasis(self.names("RESPONSE_G_COLUMNS"))
        return ResponseModel(
            link, h_basis, g_basis, self.get("TRANSFORM", "identity"), self.floats("ALPHA"), self.floats("BETA")
        )

    def outcome(self) -> OutcomeModel:
        """Respondents' model with KAPPA/SIGMA2 if given; a skeleton for fitting otherwise."""
        family = self.get("OUTCOME_FAMILY", "normal").lower()
        if family == "categorical":
            raise ConfigError("categorical outcomes are described by TABLE, not a respondents' model")
        columns = self.names("OUTCOME_COLUMNS", self.covariates)
        kind = self.get("OUTCOME_BASIS", "linear").lower()
        if kind == "linear":
            basis = LinearBasis(columns)
        elif kind == "spline":
            continuous = tuple(c for c in columns if c not in self.categorical)
            categorical = tuple(c for c in columns if c in self.categorical)
            degree = int(self.number("SPLINE_DEGREE", 3))
            basis = SplineBasis(continuous, categorical, degree=degree)
        elif kind.startswith("derived:"):
            basis = DerivedBasis(kind.split(":", 1)[1])
        else:
            raise ConfigError(f"OUTCOME_BASIS must be linear, spline or derived:<feature>, got '{kind}'")
        kappa = self.floats("KAPPA")
        if kappa is None:
            kappa = np.zeros(basis.n_terms)
        sigma2 = None
        if family == "normal":
            sigma2 = self.number("SIGMA2", 1.0)
        return OutcomeModel(family, basis, kappa, sigma2)

    def table(self) -> np.ndarray:
        """p1(y | z) with one row per y level and one column per z level."""
        value = self.get("TABLE")
        if value is None:
            raise ConfigError("categorical mode needs a TABLE")
        try:
            columns = [[float(v) for v in _split(group)] for group in _split(value, ";")]
        except ValueError:
            raise ConfigError(f"TABLE: expected numbers, got '{value}'")
        if len({len(c) for c in columns}) != 1:
            raise ConfigError("TABLE: every instrument level needs the same number of outcome levels")
        return np.array(columns).T

    def base_pi(self):
        pi = self.floats("PI")
        return 0.5 if pi is None else pi
