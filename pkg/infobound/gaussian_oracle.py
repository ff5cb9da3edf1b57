"""
Closed-form ground truth for linear-Gaussian systems.

Inputs are treated as known side information: they shift the conditional
mean of every output but never its variance, so every entropy here depends
only on the model, the step index and which labels are observed.
"""
import logging
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_discrete_lyapunov, toeplitz

from .errors import OracleError, UnstableModelError
from .schemas import BayesLinearModel, LinearGaussianModel

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 1_000_000
SINGULAR_JITTER = 1e-12
_ZERO_VARIANCE = 1e-300


def gaussian_entropy_bits(variance: float) -> float:
    """0.5 log2(2 pi e v); -inf for a zero variance (deterministic output)."""
    if variance <= _ZERO_VARIANCE:
        return -math.inf
    return 0.5 * math.log2(2.0 * math.pi * math.e * variance)


def _require_stable(model: LinearGaussianModel) -> None:
    if not model.is_stable:
        raise UnstableModelError(
            f"state_transition must have spectral radius < 1 (got {model.spectral_radius:.6g})"
        )


def ar_state_space(coeffs: Sequence[float], noise_var: float,
                   initial_state_cov: Optional[np.ndarray] = None) -> LinearGaussianModel:
    """
    Companion-form embedding of y_k = sum_j a_j y_{k-j} + w_k, Var(w) = noise_var.

    The state holds (y_k, ..., y_{k-m+1}); the output reads its first entry
    without noise. ``initial_state_cov`` defaults to the stationary covariance.
    With no coefficients the process is white noise carried by the output noise.
    """
    coeffs = list(coeffs)
    if not coeffs:
        zero = np.zeros((1, 1))
        return LinearGaussianModel(
            state_transition=zero, state_noise_cov=zero, output_map=zero,
            output_noise_var=noise_var, initial_state_cov=zero,
        )
    m = len(coeffs)
    transition = np.zeros((m, m))
    transition[0, :] = coeffs
    transition[1:, :-1] = np.eye(m - 1)
    noise = np.zeros((m, m))
    noise[0, 0] = noise_var
    output_map = np.zeros((1, m))
    output_map[0, 0] = 1.0
    if initial_state_cov is None:
        if np.max(np.abs(np.linalg.eigvals(transition))) >= 1:
            raise UnstableModelError("AR coefficients must define a stable recursion")
        initial_state_cov = solve_discrete_lyapunov(transition, noise)
        initial_state_cov = 0.5 * (initial_state_cov + initial_state_cov.T)
    return LinearGaussianModel(
        state_transition=transition, state_noise_cov=noise, output_map=output_map,
        output_noise_var=0.0, initial_state_cov=initial_state_cov,
    )


def stationary_state_covariance(model: LinearGaussianModel) -> np.ndarray:
    _require_stable(model)
    cov = solve_discrete_lyapunov(model.state_transition, model.state_noise_cov)
    return 0.5 * (cov + cov.T)


def _measurement_update(model: LinearGaussianModel, cov: np.ndarray, variance: float) -> np.ndarray:
    if variance <= _ZERO_VARIANCE:
        return cov
    gain = cov @ model.output_map.T / variance
    cov = cov - gain @ model.output_map @ cov
    return 0.5 * (cov + cov.T)


def innovation_variances(model: LinearGaussianModel, length: int,
                         label_mask: Optional[Sequence[bool]] = None) -> np.ndarray:
    """
    One-step innovation variances for steps 0..length-1.

    Masked steps (``label_mask`` False) skip the measurement update, which
    conditions every later step on the observed labels only.
    """
    observed = np.ones(length, dtype=bool) if label_mask is None else np.asarray(label_mask, bool)
    cov = model.initial_state_cov.copy()
    out = np.empty(length)
    c = model.output_map
    for step in range(length):
        variance = (c @ cov @ c.T).item() + model.output_noise_var
        out[step] = max(variance, 0.0)
        if observed[step]:
            cov = _measurement_update(model, cov, variance)
        cov = model.state_transition @ cov @ model.state_transition.T + model.state_noise_cov
    return out


def finite_horizon_conditional_entropy(model: LinearGaussianModel, k: int) -> float:
    """h(y_k | y_0..y_{k-1}, x_0..x_k) in bits from the time-varying Riccati recursion."""
    if k < 0:
        raise ValueError(f"k must be >= 0 (got {k})")
    return gaussian_entropy_bits(innovation_variances(model, k + 1)[k])


def steady_state_innovation_variance(model: LinearGaussianModel) -> float:
    """Fixed point of the Riccati iteration started from the initial state covariance."""
    _require_stable(model)
    cov = model.initial_state_cov.copy()
    c = model.output_map
    for iteration in range(RICCATI_MAX_ITER):
        variance = (c @ cov @ c.T).item() + model.output_noise_var
        updated = _measurement_update(model, cov, variance)
        nxt = model.state_transition @ updated @ model.state_transition.T + model.state_noise_cov
        change = np.linalg.norm(nxt - cov)
        cov = nxt
        if change <= RICCATI_TOL * max(np.linalg.norm(cov), _ZERO_VARIANCE):
            logger.debug("Riccati iteration converged after %d steps", iteration + 1)
            return max((c @ cov @ c.T).item() + model.output_noise_var, 0.0)
    raise OracleError(f"Riccati iteration did not converge in {RICCATI_MAX_ITER} steps")


def conditional_entropy_rate(model: LinearGaussianModel) -> float:
    """Causally conditional entropy rate h_inf(y || x) in bits."""
    return gaussian_entropy_bits(steady_state_innovation_variance(model))


def szego_entropy_rate(spectral_density: Callable[[np.ndarray], np.ndarray], grid: int = 2 ** 16) -> float:
    """
    Entropy rate from the geometric mean of the spectral density.

    The one-step prediction variance is exp((1/2pi) int ln S(w) dw), with the
    integral taken by the trapezoidal rule on ``grid`` periodic points.
    """
    if grid < 2:
        raise ValueError("grid must have at least two points")
    omega = 2.0 * np.pi * np.arange(grid) / grid
    density = np.broadcast_to(np.asarray(spectral_density(omega), dtype=float), omega.shape)
    if not np.all(np.isfinite(density)) or np.any(density <= 0):
        raise OracleError("spectral density must be finite and strictly positive on the grid")
    return gaussian_entropy_bits(math.exp(float(np.mean(np.log(density)))))


def ar_spectral_density(coeffs: Sequence[float], noise_var: float) -> Callable[[np.ndarray], np.ndarray]:
    """S(w) = noise_var / |1 - sum_j a_j e^{-i j w}|^2."""
    coeffs = np.asarray(coeffs, dtype=float)

    def density(omega):
        lags = np.arange(1, coeffs.size + 1)
        transfer = 1.0 - np.exp(-1j * np.outer(omega, lags)) @ coeffs
        return noise_var / np.abs(transfer) ** 2

    return density


def ar_plus_noise_spectral_density(coeffs: Sequence[float], state_var: float,
                                   noise_var: float) -> Callable[[np.ndarray], np.ndarray]:
    """Spectrum of an AR process observed in white noise (an ARMA process)."""
    ar_density = ar_spectral_density(coeffs, state_var)
    return lambda omega: ar_density(omega) + noise_var


def output_covariance(model: LinearGaussianModel, k: int) -> np.ndarray:
    """Covariance of (y_0, ..., y_k) given the inputs, assembled directly."""
    m = model.state_dim
    a, c = model.state_transition, model.output_map
    state_covs = [model.initial_state_cov]
    for _ in range(k):
        prev = state_covs[-1]
        state_covs.append(a @ prev @ a.T + model.state_noise_cov)
    cov = np.zeros((k + 1, k + 1))
    for j in range(k + 1):
        propagated = state_covs[j]
        for i in range(j, k + 1):
            # Cov(s_i, s_j) = A^{i-j} Sigma_j
            cov[i, j] = cov[j, i] = (c @ propagated @ c.T).item()
            propagated = a @ propagated
        cov[j, j] += model.output_noise_var
    return cov


def _schur_variance(cov: np.ndarray, target: int, given: Sequence[int]) -> float:
    given = list(given)
    if not given:
        return float(cov[target, target])
    block = cov[np.ix_(given, given)]
    cross = cov[np.ix_(given, [target])]
    try:
        factor = cho_factor(block)
    except LinAlgError:
        jitter = SINGULAR_JITTER * np.trace(block)
        logger.warning("singular conditioning block regularized with %.3g jitter", jitter)
        factor = cho_factor(block + jitter * np.eye(len(given)))
    return float(cov[target, target] - (cross.T @ cho_solve(factor, cross)).item())


def brute_force_conditional_entropy(model: LinearGaussianModel, k: int,
                                    observed_labels: Optional[Iterable[int]] = None) -> float:
    """
    h(y_k | y_observed, x_0..x_k) by direct covariance assembly and Schur complement.

    Slow; kept as an independent oracle for the Riccati path.
    """
    observed = list(range(k)) if observed_labels is None else sorted(set(observed_labels))
    if any(index < 0 or index >= k for index in observed):
        raise ValueError(f"observed labels must lie in 0..{k - 1}")
    return gaussian_entropy_bits(_schur_variance(output_covariance(model, k), k, observed))


def masked_conditional_entropy(model: LinearGaussianModel, k: int, observed_labels: Iterable[int]) -> float:
    """h(y_k | y_i for i in observed_labels, x_0..x_k) in bits."""
    return brute_force_conditional_entropy(model, k, observed_labels)


def posterior(model: BayesLinearModel, train_inputs: np.ndarray, train_outputs: Optional[np.ndarray] = None):
    """
    Gaussian weight posterior (mean, covariance) after observing the rows.

    Uses the k x k form so a singular prior covariance needs no inversion.
    The mean is None when no outputs are given.
    """
    prior = model.weight_prior_cov
    inputs = np.asarray(train_inputs, dtype=float).reshape(-1, prior.shape[0])
    if inputs.shape[0] == 0:
        return (None if train_outputs is None else np.zeros(prior.shape[0])), prior.copy()
    gram = inputs @ prior @ inputs.T + model.noise_var * np.eye(inputs.shape[0])
    factor = cho_factor(gram)
    cross = prior @ inputs.T
    cov = prior - cross @ cho_solve(factor, cross.T)
    cov = 0.5 * (cov + cov.T)
    mean = None
    if train_outputs is not None:
        mean = cross @ cho_solve(factor, np.asarray(train_outputs, dtype=float).reshape(-1))
    return mean, cov


def generalization_conditional_entropy(model: BayesLinearModel, train_inputs: np.ndarray,
                                       test_input: np.ndarray,
                                       labeled: Optional[Sequence[bool]] = None) -> float:
    """
    h(y_test | x_test, y_1..y_k, x_1..x_k) in bits for Bayesian linear regression.

    ``labeled`` marks which training outputs are available; unlabeled inputs
    carry no information about the weights and drop out of the conditioning.
    """
    inputs = np.asarray(train_inputs, dtype=float).reshape(-1, model.input_dim)
    if labeled is not None:
        inputs = inputs[np.asarray(labeled, dtype=bool)]
    _, cov = posterior(model, inputs)
    x = np.asarray(test_input, dtype=float).reshape(-1)
    return gaussian_entropy_bits(float(x @ cov @ x) + model.noise_var)


def gaussian_conditional_mi(cov: np.ndarray, a: Sequence[int], b: Sequence[int],
                            given: Sequence[int] = ()) -> float:
    """I(A; B | G) in bits for jointly Gaussian variables with covariance ``cov``."""
    def logdet(indices):
        indices = list(indices)
        if not indices:
            return 0.0
        sign, value = np.linalg.slogdet(cov[np.ix_(indices, indices)])
        if sign <= 0:
            raise OracleError("covariance block is singular")
        return value

    a, b, given = list(a), list(b), list(given)
    nats = 0.5 * (logdet(a + given) + logdet(b + given) - logdet(given) - logdet(a + b + given))
    return nats / math.log(2.0)


def residual_autocovariance(true_coeff: float, model_coeff: float, noise_var: float,
                            max_lag: int) -> np.ndarray:
    """
    Autocovariance of e_k = y_k - b y_{k-1} for a stationary AR(1) y with
    coefficient a; the residual of a predictor using the wrong coefficient b.
    """
    a, b = true_coeff, model_coeff
    if abs(a) >= 1:
        raise UnstableModelError("AR(1) coefficient must satisfy |a| < 1")

    def gamma(h):
        return noise_var * a ** abs(h) / (1.0 - a * a)

    return np.array([(1 + b * b) * gamma(h) - b * gamma(h - 1) - b * gamma(h + 1)
                     for h in range(max_lag + 1)])


def gaussian_lag_mi(autocov: Sequence[float], lags: int) -> float:
    """I(e_t; e_{t-1}, ..., e_{t-lags}) in bits for a stationary Gaussian series."""
    autocov = np.asarray(autocov, dtype=float)
    if autocov.size < lags + 1:
        raise ValueError("autocovariance must cover every requested lag")
    cov = toeplitz(autocov[: lags + 1])
    return gaussian_conditional_mi(cov, [0], list(range(1, lags + 1)))
