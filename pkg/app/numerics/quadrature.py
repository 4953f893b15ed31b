import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy import stats

from app.errors import ConfigError, IntegrationError
from app.models.bases import Covariates, as_frame

logger = logging.getLogger(__name__)

RULE_KINDS = ("gauss_hermite", "adaptive_truncated", "exact_discrete")
MAX_ADAPTIVE_NODES = 5120


@dataclass(frozen=True)
class QuadratureRule:
    """How an integral over S_y against p1(y | x) is evaluated.

    gauss_hermite: n-point rule for the normal weight (exact for polynomials
    of degree <= 2n - 1).
    adaptive_truncated: Gauss-Legendre on the standardized window [lo, hi]
    (mean +/- k sd), doubling n until successive values agree to ``tol``.
    exact_discrete: sum over a finite support.
    """

    kind: str = "gauss_hermite"
    n_nodes: int = 60
    lo: float = -12.0
    hi: float = 12.0
    tol: float = 1e-10
    support: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ConfigError(f"unknown quadrature rule '{self.kind}'")
        if self.kind == "exact_discrete" and not self.support:
            raise ConfigError("exact_discrete rule needs a support")
        if self.kind != "exact_discrete" and self.n_nodes < 1:
            raise ConfigError("quadrature needs at least one node")

    @classmethod
    def gauss_hermite(cls, n_nodes: int = 60) -> "QuadratureRule":
        return cls("gauss_hermite", n_nodes=n_nodes)

    @classmethod
    def adaptive_truncated(cls, lo: float = -12.0, hi: float = 12.0, tol: float = 1e-10, n_nodes: int = 160):
        return cls("adaptive_truncated", n_nodes=n_nodes, lo=lo, hi=hi, tol=tol)

    @classmethod
    def exact_discrete(cls, support) -> "QuadratureRule":
        return cls("exact_discrete", n_nodes=len(support), support=tuple(float(s) for s in support))


@lru_cache(maxsize=32)
def gauss_hermite_nodes(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite knots and weights (weights sum to one)."""
    knots, weights = np.polynomial.hermite.hermgauss(n)
    knots = knots * np.sqrt(2.0)
    weights = weights / np.sqrt(np.pi)
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


@lru_cache(maxsize=32)
def gauss_legendre_nodes(a: float, b: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    knots, weights = np.polynomial.legendre.leggauss(n)
    knots = 0.5 * (b - a) * knots + 0.5 * (b + a)
    weights = 0.5 * (b - a) * weights
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


def default_rule(outcome, link=None) -> QuadratureRule:
    if outcome.is_discrete:
        return QuadratureRule.exact_discrete(outcome.support)
    if link is not None and link.tail == "polynomial":
        return QuadratureRule.adaptive_truncated()
    return QuadratureRule.gauss_hermite()


def outcome_nodes(outcome, x: Covariates, rule: QuadratureRule = None, n_nodes: int = None):
    """Nodes Y and weights W, both (rows, k), with sum_k W f(Y) ~ E1[f(y) | x]."""
    frame = as_frame(x)
    rule = rule or default_rule(outcome)
    rows = len(frame)
    if outcome.is_discrete:
        support = np.asarray(rule.support if rule.kind == "exact_discrete" else outcome.support)
        Y = np.broadcast_to(support, (rows, support.size)).copy()
        return Y, outcome.density(frame, Y)
    if rule.kind == "exact_discrete":
        raise ConfigError("exact_discrete rule needs a discrete outcome")
    n = n_nodes or rule.n_nodes
    if rule.kind == "gauss_hermite":
        knots, weights = gauss_hermite_nodes(n)
    else:
        knots, weights = gauss_legendre_nodes(float(rule.lo), float(rule.hi), n)
        weights = weights * stats.norm.pdf(knots)
    mean = outcome.mean(frame)
    Y = mean[:, None] + np.sqrt(outcome.sigma2) * knots[None, :]
    return Y, np.broadcast_to(weights, Y.shape)


def _evaluate(f: Callable, Y: np.ndarray) -> np.ndarray:
    values = np.broadcast_to(np.asarray(f(Y), dtype=float), Y.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        raise IntegrationError("integrand is not finite on a quadrature node", node=float(Y[bad][0]))
    return values


def _adaptive_sum(f: Callable, outcome, frame, rule: QuadratureRule) -> np.ndarray:
    n = rule.n_nodes
    Y, W = outcome_nodes(outcome, frame, rule, n)
    previous = (W * _evaluate(f, Y)).sum(axis=1)
    while True:
        n *= 2
        Y, W = outcome_nodes(outcome, frame, rule, n)
        values = _evaluate(f, Y)
        estimate = (W * values).sum(axis=1)
        if np.all(np.abs(estimate - previous) <= rule.tol * np.maximum(1.0, np.abs(estimate))):
            break
        if n >= MAX_ADAPTIVE_NODES:
            logger.warning(f"adaptive quadrature stopped at {n} nodes without reaching tol={rule.tol:g}")
            break
        previous = estimate
    # mass outside the window times the integrand at the window edges
    edges = np.abs(values[:, [0, -1]]).max(axis=1)
    remainder = (stats.norm.cdf(rule.lo) + stats.norm.sf(rule.hi)) * edges
    logger.debug(f"adaptive quadrature: {n} nodes, tail remainder <= {remainder.max():.3e}")
    if np.any(remainder > rule.tol * np.maximum(1.0, np.abs(estimate))):
        raise IntegrationError(
            f"mass outside the window [{rule.lo:g}, {rule.hi:g}] exceeds tol={rule.tol:g} "
            f"(tail remainder {remainder.max():.3e})"
        )
    return estimate


def integrate_over_y(f: Callable, outcome, x: Covariates, rule: QuadratureRule = None):
    """Approximate the integral of f(y) p1(y | x) dy (a sum for discrete y).

    ``f`` receives node arrays of shape (rows, k). Returns a float for a
    single covariate row and an array otherwise. The error is the rule's:
    zero for exact_discrete, the Gauss-Hermite remainder for smooth integrands
    with Gaussian-dominated tails, and ``tol`` plus the truncated tail mass for
    adaptive_truncated.
    """
    frame = as_frame(x)
    rule = rule or default_rule(outcome)
    if rule.kind == "adaptive_truncated" and not outcome.is_discrete:
        result = _adaptive_sum(f, outcome, frame, rule)
    else:
        Y, W = outcome_nodes(outcome, frame, rule)
        result = (W * _evaluate(f, Y)).sum(axis=1)
    return float(result[0]) if result.size == 1 else result
