"""Gompertz distribution with a defective (cure) regime.

Hazard h(t) = mu * exp(alpha * t).  For alpha > 0 this is the usual proper
Gompertz; for alpha < 0 the survival function no longer decays to zero but
plateaus at exp(mu / alpha), and that plateau is read as the fraction of the
population immune to the event.  alpha = 0 is the exponential limit.

All functions accept scalars or numpy arrays and broadcast like ufuncs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this |alpha| the closed forms lose digits to cancellation; switch to
# the exponential-limit series.
ALPHA_EPS = 1e-10
# Clamp for log-scale exponents: exp(700) is near the float64 ceiling.
LOG_CLAMP = 700.0


class InvalidParameterError(ValueError):
    """A parameter or argument is outside the function's domain of validity."""


class DomainError(ValueError):
    """The requested quantile lies outside the susceptible mass."""


@dataclass(frozen=True)
class GompertzParams:
    """Shape/rate pair for the (possibly defective) Gompertz hazard.

    alpha may have any sign: negative means defective (a cure plateau
    exists), zero the exponential limit, positive the proper distribution.
    mu must be strictly positive.
    """

    alpha: float
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.mu)):
            raise InvalidParameterError("alpha and mu must be finite")
        if self.mu <= 0.0:
            raise InvalidParameterError(f"mu must be > 0, got {self.mu}")

    @property
    def gamma0(self) -> float:
        """Log of the rate parameter (the scale reparametrization)."""
        return math.log(self.mu)

    @classmethod
    def from_gamma0(cls, alpha: float, gamma0: float) -> "GompertzParams":
        return cls(alpha=alpha, mu=math.exp(gamma0))


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidParameterError("t must be finite")
    if np.any(t < 0.0):
        raise InvalidParameterError("t must be nonnegative")
    return t


def growth_integral(alpha, t):
    """Integral of exp(alpha*u) over [0, t]: (exp(alpha*t) - 1) / alpha.

    Stable through alpha = 0, where it equals t.  The cumulative hazard is
    mu times this quantity.
    """
    alpha = np.asarray(alpha, dtype=float)
    t = np.asarray(t, dtype=float)
    at = alpha * t
    small = np.abs(alpha) < ALPHA_EPS
    # Series t*(1 + at/2 + at^2/6) covers the removable singularity.
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.expm1(np.minimum(at, LOG_CLAMP)) / alpha
    series = t * (1.0 + at / 2.0 + at * at / 6.0)
    out = np.where(small, series, direct)
    if out.ndim == 0:
        return float(out)
    return out


def growth_integral_dalpha(alpha, t):
    """Derivative of growth_integral with respect to alpha."""
    alpha = np.asarray(alpha, dtype=float)
    t = np.asarray(t, dtype=float)
    at = alpha * t
    small = np.abs(alpha) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        eat = np.exp(np.minimum(at, LOG_CLAMP))
        direct = (t * eat) / alpha - np.expm1(np.minimum(at, LOG_CLAMP)) / (alpha * alpha)
    # Series: t^2/2 + alpha t^3/3 + alpha^2 t^4/8.
    series = t * t * (0.5 + at / 3.0 + at * at / 8.0)
    out = np.where(small, series, direct)
    if out.ndim == 0:
        return float(out)
    return out


def log_growth_integral(alpha, t):
    """log of growth_integral, computed without overflow for large alpha*t.

    Defined for t > 0 (returns -inf at t = 0).
    """
    alpha = np.asarray(alpha, dtype=float)
    t = np.asarray(t, dtype=float)
    at = alpha * t
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        small = np.abs(alpha) < ALPHA_EPS
        series = np.log(t) + np.log1p(at / 2.0 + at * at / 6.0)
        log_abs_alpha = np.log(np.abs(alpha))
        # |expm1| keeps full precision for small and negative at.
        moderate = np.log(np.abs(np.expm1(np.minimum(at, 30.0)))) - log_abs_alpha
        # Large positive at: factor out exp(at).
        big = at + np.log1p(-np.exp(-np.abs(at))) - log_abs_alpha
    out = np.where(small, series, np.where(at <= 30.0, moderate, big))
    if out.ndim == 0:
        return float(out)
    return out


def hazard(t, p: GompertzParams):
    """h(t) = mu * exp(alpha * t)."""
    t = _check_time(t)
    out = p.mu * np.exp(np.minimum(p.alpha * t, LOG_CLAMP))
    if out.ndim == 0:
        return float(out)
    return out


def cumulative_hazard(t, p: GompertzParams):
    """H(t) = (mu/alpha) * (exp(alpha*t) - 1), with the alpha->0 limit mu*t.

    Clamped at exp(700) so proper-Gompertz tails cannot overflow downstream
    exponentials.
    """
    t = _check_time(t)
    out = np.minimum(p.mu * growth_integral(p.alpha, t), math.exp(LOG_CLAMP))
    if out.ndim == 0:
        return float(out)
    return out


def survival(t, p: GompertzParams):
    """S(t) = exp(-H(t)).  Bounded below by the cure fraction when alpha < 0."""
    out = np.exp(-np.asarray(cumulative_hazard(t, p)))
    if out.ndim == 0:
        return float(out)
    return out


def pdf(t, p: GompertzParams):
    """Density f(t) = h(t) * S(t).

    For alpha < 0 the total mass is 1 - exp(mu/alpha): the missing mass is
    the cured subpopulation.
    """
    t = _check_time(t)
    log_h = np.log(p.mu) + p.alpha * t
    out = np.exp(log_h - np.asarray(cumulative_hazard(t, p)))
    if out.ndim == 0:
        return float(out)
    return out


def cure_fraction(p: GompertzParams) -> float:
    """Plateau of the survival function: exp(mu/alpha) if alpha < 0, else 0.

    Returning exactly 0 in the proper regime lets callers treat "no
    plateau" uniformly.
    """
    if p.alpha < 0.0:
        return math.exp(p.mu / p.alpha)
    return 0.0


def susceptible_quantile(u, p: GompertzParams, eta: float = 0.0):
    """Invert F(t) = u for the rate mu*exp(eta): the event-time sampler's root.

    t = (1/alpha) * log(1 - alpha*log(1-u) / (mu*exp(eta))).  Valid for
    0 <= u strictly below the susceptible mass; beyond it the argument of the
    outer log is nonpositive and a DomainError is raised.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)) or np.any(u < 0.0) or np.any(u >= 1.0):
        raise InvalidParameterError("u must lie in [0, 1)")
    if not math.isfinite(eta):
        raise InvalidParameterError("eta must be finite")
    rate = p.mu * math.exp(eta)
    # -log(1-u) is the target cumulative hazard.
    target = -np.log1p(-u)
    if abs(p.alpha) < ALPHA_EPS:
        out = target / rate
    else:
        arg = 1.0 + p.alpha * target / rate
        if np.any(arg <= 0.0):
            raise DomainError(
                "u exceeds the susceptible mass 1 - exp(mu*exp(eta)/alpha)"
            )
        out = np.log(arg) / p.alpha
    if out.ndim == 0:
        return float(out)
    return out
