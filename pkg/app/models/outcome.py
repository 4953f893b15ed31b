from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import special

from app.errors import ConfigError, DomainError
from app.models.bases import Covariates, as_frame

FAMILIES = ("normal", "bernoulli")

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Respondents' law p(y | x, delta=1; gamma).

    ``basis`` is any object with ``design(frame)``, ``names`` and ``n_terms``:
    a LinearBasis, a fitted SplineBasis or a DerivedBasis. The natural
    parameter is the linear form eta = basis(x) @ kappa (identity link for the
    normal family, logit for Bernoulli), so the dispersion tau is sigma2 for
    the normal family and 1 for Bernoulli.
    """

    family: str
    basis: object
    kappa: np.ndarray
    sigma2: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unsupported outcome family '{self.family}'")
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float)).copy()
        if kappa.shape != (self.basis.n_terms,):
            raise ConfigError(f"kappa has {kappa.size} values, basis expects {self.basis.n_terms}")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)
        if self.family == "normal":
            if self.sigma2 is None or not np.isfinite(self.sigma2) or self.sigma2 <= 0:
                raise ConfigError("normal outcome needs sigma2 > 0")
            object.__setattr__(self, "sigma2", float(self.sigma2))
        elif self.sigma2 is not None:
            raise ConfigError("bernoulli outcome takes no sigma2")

    @property
    def is_discrete(self) -> bool:
        return self.family == "bernoulli"

    @property
    def support(self) -> Optional[Tuple[float, ...]]:
        return (0.0, 1.0) if self.is_discrete else None

    @property
    def dispersion(self) -> float:
        return self.sigma2 if self.family == "normal" else 1.0

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(self.basis.columns)

    @property
    def gamma(self) -> np.ndarray:
        if self.family == "normal":
            return np.append(self.kappa, self.sigma2)
        return self.kappa.copy()

    @property
    def gamma_names(self) -> Tuple[str, ...]:
        names = tuple(f"kappa[{name}]" for name in self.basis.names)
        return names + (("sigma2",) if self.family == "normal" else ())

    def with_gamma(self, gamma) -> "OutcomeModel":
        gamma = np.asarray(gamma, dtype=float)
        if self.family == "normal":
            return replace(self, kappa=gamma[:-1], sigma2=float(gamma[-1]))
        return replace(self, kappa=gamma)

    def natural_parameter(self, x: Covariates) -> np.ndarray:
        return self.basis.design(as_frame(x)) @ self.kappa

    def mean(self, x: Covariates) -> np.ndarray:
        eta = self.natural_parameter(x)
        return special.expit(eta) if self.is_discrete else eta

    def _check_support(self, y: np.ndarray) -> None:
        if self.is_discrete and not np.all((y == 0.0) | (y == 1.0)):
            bad = y[(y != 0.0) & (y != 1.0)]
            raise DomainError(f"bernoulli outcome is defined on {{0, 1}}, got {bad[0]:g}")
        if not np.all(np.isfinite(y)):
            raise DomainError("outcome values must be finite")

    def log_density(self, x: Covariates, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        self._check_support(y)
        eta = self.natural_parameter(x)
        if y.ndim == 2:
            eta = eta[:, None]
        if self.is_discrete:
            return y * eta - np.logaddexp(0.0, eta)
        resid = y - eta
        return -0.5 * (_LOG_2PI + np.log(self.sigma2) + resid * resid / self.sigma2)

    def density(self, x: Covariates, y) -> np.ndarray:
        return np.exp(self.log_density(x, y))

    def score(self, x: Covariates, y) -> np.ndarray:
        """Gradient of log p1 in gamma, one row per observation."""
        frame = as_frame(x)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self._check_support(y)
        X = self.basis.design(frame)
        eta = X @ self.kappa
        if self.is_discrete:
            return X * (y - special.expit(eta))[:, None]
        resid = y - eta
        d_kappa = X * (resid / self.sigma2)[:, None]
        d_sigma2 = -0.5 / self.sigma2 + 0.5 * resid * resid / self.sigma2 ** 2
        return np.hstack([d_kappa, d_sigma2[:, None]])

    def sample(self, x: Covariates, rng: np.random.Generator) -> np.ndarray:
        mean = self.mean(x)
        if self.is_discrete:
            return (rng.random(mean.shape) < mean).astype(float)
        return mean + np.sqrt(self.sigma2) * rng.standard_normal(mean.shape)


def outcome_density(model: OutcomeModel, x: Covariates, y):
    values = model.density(x, np.atleast_1d(np.asarray(y, dtype=float)))
    return float(values[0]) if values.size == 1 else values


def outcome_score(model: OutcomeModel, x: Covariates, y) -> np.ndarray:
    scores = model.score(x, y)
    return scores[0] if scores.shape[0] == 1 else scores
