from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from app.errors import ConfigError

LINK_KINDS = ("logistic", "probit", "cauchy", "student_t")

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_PI = np.log(np.pi)


@dataclass(frozen=True)
class LinkFunction:
    """Strictly increasing cdf Psi used by the response mechanism.

    Every supported kind is symmetric about zero, so Psi(0) = 0.5 and
    1 - Psi(t) = Psi(-t). Cauchy is kept as its own kind (Student-t with one
    degree of freedom) because it is named in presets and reports.
    """

    kind: str = "logistic"
    df: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ConfigError(f"unknown link '{self.kind}', expected one of {LINK_KINDS}")
        if self.kind == "student_t":
            if self.df is None or int(self.df) != self.df or self.df < 1:
                raise ConfigError("student_t link needs a positive integer df")
        elif self.kind == "cauchy":
            if self.df not in (None, 1):
                raise ConfigError("cauchy link has df=1")
        elif self.df is not None:
            raise ConfigError(f"{self.kind} link takes no df")

    @classmethod
    def parse(cls, name: str, df: Optional[int] = None) -> "LinkFunction":
        key = name.strip().lower()
        if key.startswith("robit"):
            return cls("student_t", int(key[5:]) if key[5:] else df)
        if key in ("t", "student", "studentt"):
            key = "student_t"
        return cls(key, df if key == "student_t" else None)

    @property
    def degrees_of_freedom(self) -> Optional[int]:
        return 1 if self.kind == "cauchy" else self.df

    @property
    def label(self) -> str:
        if self.kind == "student_t":
            return f"StudentT({self.df})"
        return self.kind.capitalize()

    @property
    def tail(self) -> str:
        """Decay class of Psi(t) as t -> -inf."""
        return {"logistic": "exponential", "probit": "gaussian"}.get(self.kind, "polynomial")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            return special.expit(t)
        if self.kind == "probit":
            return special.ndtr(t)
        if self.kind == "cauchy":
            return np.arctan2(1.0, -t) / np.pi
        return special.stdtr(self.df, t)

    def log_cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            return -np.logaddexp(0.0, -t)
        if self.kind == "probit":
            return special.log_ndtr(t)
        if self.kind == "cauchy":
            return np.log(np.arctan2(1.0, -t)) - _LOG_PI
        return _student_t_log_cdf(self.df, t)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            return special.expit(t) * special.expit(-t)
        if self.kind == "probit":
            return np.exp(-0.5 * t * t - _LOG_SQRT_2PI)
        if self.kind == "cauchy":
            with np.errstate(over="ignore"):
                return 1.0 / (np.pi * (1.0 + t * t))
        return np.exp(_student_t_log_pdf(self.df, t))

    def dlog_cdf(self, t):
        """psi(t) / Psi(t), the derivative of log Psi."""
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            return special.expit(-t)
        if self.kind == "probit":
            return np.exp(-0.5 * t * t - _LOG_SQRT_2PI - special.log_ndtr(t))
        if self.kind == "cauchy":
            with np.errstate(over="ignore"):
                return 1.0 / ((1.0 + t * t) * np.arctan2(1.0, -t))
        return np.exp(_student_t_log_pdf(self.df, t) - _student_t_log_cdf(self.df, t))

    def odds_against(self, t):
        """(1 - Psi(t)) / Psi(t) = 1/Psi(t) - 1."""
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            with np.errstate(over="ignore"):
                return np.exp(-t)
        if self.kind == "cauchy":
            return np.arctan2(1.0, t) / np.arctan2(1.0, -t)
        return np.exp(self.log_cdf(-t) - self.log_cdf(t))


@lru_cache(maxsize=16)
def _student_t_log_norm(df: int) -> float:
    return special.gammaln(0.5 * (df + 1)) - special.gammaln(0.5 * df) - 0.5 * np.log(df * np.pi)


def _student_t_log_pdf(df: int, t: np.ndarray) -> np.ndarray:
    # log(1 + t^2 / df) without squaring t
    with np.errstate(divide="ignore"):
        log_ratio = 2.0 * np.log(np.abs(t)) - np.log(df)
    return _student_t_log_norm(df) - 0.5 * (df + 1) * np.logaddexp(0.0, log_ratio)


def _student_t_log_cdf(df: int, t: np.ndarray) -> np.ndarray:
    # left tail from stdtr; where it underflows, Psi(t) ~ psi(t) |t| / df
    left = -np.abs(t)
    tail = special.stdtr(df, left)
    with np.errstate(divide="ignore"):
        log_left = np.where(tail > 0.0, np.log(tail), _student_t_log_pdf(df, left) + np.log(np.abs(left) / df))
    return np.where(t <= 0.0, log_left, np.log1p(-tail))
