from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from app.errors import ConfigError, DomainError
from app.models.bases import Covariates, LinearBasis, as_frame
from app.models.links import LinkFunction

TRANSFORMS = {"identity": lambda y: y}


def _frozen(values, size: int, name: str) -> np.ndarray:
    array = np.zeros(size) if values is None else np.atleast_1d(np.asarray(values, dtype=float)).copy()
    if array.shape != (size,):
        raise ConfigError(f"{name} has {array.size} values, basis expects {size}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ResponseModel:
    """P(delta=1 | u, y) = Psi(h(u; alpha) + g(u; beta) m(y)).

    h and g are linear forms over their bases; the default g is a constant
    scalar beta and the default m is the identity. The instrument never
    appears in either basis.
    """

    link: LinkFunction = field(default_factory=LinkFunction)
    h_basis: LinearBasis = field(default_factory=LinearBasis)
    g_basis: LinearBasis = field(default_factory=LinearBasis)
    transform: str = "identity"
    alpha: np.ndarray = None
    beta: np.ndarray = None

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform '{self.transform}'")
        object.__setattr__(self, "alpha", _frozen(self.alpha, self.h_basis.n_terms, "alpha"))
        object.__setattr__(self, "beta", _frozen(self.beta, self.g_basis.n_terms, "beta"))

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(self.h_basis.columns + self.g_basis.columns))

    @property
    def phi(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    @property
    def n_alpha(self) -> int:
        return self.h_basis.n_terms

    @property
    def param_names(self) -> Tuple[str, ...]:
        alphas = tuple(f"alpha{i}" for i in range(self.n_alpha))
        if self.g_basis.n_terms == 1:
            return alphas + ("beta",)
        return alphas + tuple(f"beta{i}" for i in range(self.g_basis.n_terms))

    def with_phi(self, phi) -> "ResponseModel":
        phi = np.asarray(phi, dtype=float)
        return replace(self, alpha=phi[: self.n_alpha], beta=phi[self.n_alpha:])

    def with_link(self, link: LinkFunction) -> "ResponseModel":
        return replace(self, link=link)

    def m(self, y):
        return TRANSFORMS[self.transform](np.asarray(y, dtype=float))

    def design(self, x: Covariates) -> Tuple[np.ndarray, np.ndarray]:
        frame = as_frame(x)
        return self.h_basis.design(frame), self.g_basis.design(frame)

    def linear_predictor_from(self, H: np.ndarray, G: np.ndarray, y) -> np.ndarray:
        """Predictor for design rows H, G and outcomes y of shape (n,) or (n, k)."""
        y = np.asarray(y, dtype=float)
        h = H @ self.alpha
        g = G @ self.beta
        if y.ndim == 2:
            t = h[:, None] + g[:, None] * self.m(y)
        else:
            t = h + g * self.m(y)
        bad = ~np.isfinite(t)
        if bad.any():
            row = int(np.flatnonzero(bad.reshape(len(t), -1).any(axis=1))[0])
            raise DomainError(f"non-finite linear predictor at row {row}")
        return t

    def linear_predictor(self, x: Covariates, y) -> np.ndarray:
        H, G = self.design(x)
        return self.linear_predictor_from(H, G, y)

    def prob(self, x: Covariates, y) -> np.ndarray:
        return self.link.cdf(self.linear_predictor(x, y))

    def log_prob(self, x: Covariates, y) -> np.ndarray:
        return self.link.log_cdf(self.linear_predictor(x, y))

    def score_from_design(self, H: np.ndarray, G: np.ndarray, y) -> np.ndarray:
        """d log pi / d phi; shape (n, d) for y of shape (n,), (n, k, d) for (n, k)."""
        y = np.asarray(y, dtype=float)
        ratio = self.link.dlog_cdf(self.linear_predictor_from(H, G, y))
        my = self.m(y)
        if y.ndim == 2:
            return np.concatenate(
                [H[:, None, :] * ratio[..., None], G[:, None, :] * (ratio * my)[..., None]], axis=-1
            )
        return np.hstack([H * ratio[:, None], G * (ratio * my)[:, None]])

    def score(self, x: Covariates, y) -> np.ndarray:
        H, G = self.design(x)
        return self.score_from_design(H, G, np.atleast_1d(np.asarray(y, dtype=float)))


def response_prob(model: ResponseModel, u: Covariates, y):
    """Psi(h(u; alpha) + g(u; beta) m(y)); a float for a single row."""
    if not (np.all(np.isfinite(model.alpha)) and np.all(np.isfinite(model.beta))):
        raise DomainError("response parameters must be finite")
    values = model.prob(u, np.atleast_1d(np.asarray(y, dtype=float)))
    return float(values[0]) if values.size == 1 else values
