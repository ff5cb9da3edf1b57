"""
Exponential-power max-entropy family and entropy <-> L_p bound arithmetic.

For a fixed L_p norm ``mu`` the density

    f(x) = exp(-|x|^p / (p mu^p)) / (2 Gamma((p+1)/p) p^(1/p) mu)

maximizes differential entropy, with h = log2(2 Gamma((p+1)/p) (p e)^(1/p) mu).
The family is Laplace at p=1, Gaussian at p=2 and Uniform[-mu, mu] at p=inf.
All entropies are in bits.
"""
import math
from typing import Sequence, Union

import numpy as np
from scipy.special import gammainc, gammaln, logsumexp

from .rng import make_generator
from .schemas import MaxEntDistribution, as_pnorm

ArrayLike = Union[float, Sequence[float], np.ndarray]


def lp_constant(p) -> float:
    """2 Gamma((p+1)/p) (p e)^(1/p); exactly 2 at p=inf."""
    p = as_pnorm(p)
    if math.isinf(p):
        return 2.0
    return 2.0 * math.exp(gammaln((p + 1.0) / p) + (math.log(p) + 1.0) / p)


def maxent_entropy(p, mu: float) -> float:
    """Entropy in bits of the max-entropy law with L_p norm ``mu``."""
    if not mu > 0:
        raise ValueError(f"mu must be positive (got {mu})")
    return math.log2(lp_constant(p)) + math.log2(mu)


def entropy_to_lp_bound(h: float, p) -> float:
    """
    Smallest L_p norm compatible with entropy ``h`` bits.

    This is also the scale ``mu`` of the equality-case law. A -inf entropy
    (deterministic relation) yields a bound of 0.
    """
    c = lp_constant(p)
    if h == -math.inf:
        return 0.0
    return 2.0 ** h / c


def equality_case(h: float, p) -> MaxEntDistribution:
    """The law attaining the bound for entropy ``h`` under the L_p norm."""
    mu = entropy_to_lp_bound(h, p)
    if mu <= 0:
        raise ValueError("a -inf entropy has no equality-case density")
    return MaxEntDistribution(p=p, mu=mu)


def _log_normalizer(d: MaxEntDistribution) -> float:
    p = d.p
    return math.log(2.0 * d.mu) + gammaln((p + 1.0) / p) + math.log(p) / p


def pdf(d: MaxEntDistribution, x: ArrayLike):
    values = np.abs(np.asarray(x, dtype=float))
    if math.isinf(d.p):
        density = np.where(values <= d.mu, 1.0 / (2.0 * d.mu), 0.0)
    else:
        with np.errstate(over="ignore"):
            exponent = -((values / d.mu) ** d.p) / d.p
        density = np.exp(exponent - _log_normalizer(d))
    return float(density) if density.ndim == 0 else density


def cdf(d: MaxEntDistribution, x: ArrayLike):
    values = np.asarray(x, dtype=float)
    if math.isinf(d.p):
        result = np.clip((values + d.mu) / (2.0 * d.mu), 0.0, 1.0)
    else:
        with np.errstate(over="ignore"):
            t = (np.abs(values) / d.mu) ** d.p / d.p
        result = 0.5 + 0.5 * np.sign(values) * gammainc(1.0 / d.p, t)
    return float(result) if result.ndim == 0 else result


def second_moment(d: MaxEntDistribution) -> float:
    """E[x^2], used to embed non-Gaussian AR noise into a state-space model."""
    if math.isinf(d.p):
        return d.mu ** 2 / 3.0
    p = d.p
    return d.mu ** 2 * p ** (2.0 / p) * math.exp(gammaln(3.0 / p) - gammaln(1.0 / p))


def draw(d: MaxEntDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` variates from ``d`` using an existing generator."""
    if math.isinf(d.p):
        return rng.uniform(-d.mu, d.mu, size=n)
    u = rng.gamma(1.0 / d.p, 1.0, size=n)
    magnitude = d.mu * (d.p * u) ** (1.0 / d.p)
    sign = 2.0 * rng.integers(0, 2, size=n) - 1.0
    return sign * magnitude


def sample(d: MaxEntDistribution, n: int, seed: int) -> np.ndarray:
    """
    i.i.d. draws, deterministic for a fixed seed.

    With u ~ Gamma(1/p, 1), x = +-(p mu^p u)^(1/p) has the max-entropy law;
    p=inf draws Uniform[-mu, mu].
    """
    if n < 1:
        raise ValueError(f"n must be >= 1 (got {n})")
    return draw(d, n, make_generator(seed, "maxent", d.p, d.mu))


def empirical_lp_norm(samples: ArrayLike, p) -> float:
    """((1/n) sum |x_i|^p)^(1/p), evaluated in the log domain; max |x_i| at p=inf."""
    p = as_pnorm(p)
    values = np.abs(np.asarray(samples, dtype=float)).reshape(-1)
    if values.size == 0:
        raise ValueError("empirical_lp_norm needs at least one sample")
    if math.isinf(p):
        return float(values.max())
    if not values.any():
        return 0.0
    with np.errstate(divide="ignore"):
        logs = np.log(values)
    return float(math.exp((logsumexp(p * logs) - math.log(values.size)) / p))


def lp_norm_standard_error(samples: ArrayLike, p) -> float:
    """
    Monte-Carlo standard error of ``empirical_lp_norm``.

    Finite p uses the delta method on the sample mean of |x|^p. At p=inf the
    sample maximum only approaches the essential supremum from below; the
    spread of the ten largest |x| is used as its uncertainty scale.
    """
    p = as_pnorm(p)
    values = np.abs(np.asarray(samples, dtype=float)).reshape(-1)
    n = values.size
    if n < 2:
        return 0.0
    if math.isinf(p):
        top = np.sort(values)[-min(10, n):]
        return float(top[-1] - top[0])
    peak = values.max()
    if peak == 0:
        return 0.0
    powered = (values / peak) ** p
    moment = powered.mean()
    if moment == 0:
        return 0.0
    se_moment = powered.std(ddof=1) / math.sqrt(n)
    return float(peak * moment ** (1.0 / p - 1.0) * se_moment / p)
