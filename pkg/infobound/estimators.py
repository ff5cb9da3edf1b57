"""
k-nearest-neighbour estimators of entropy and (conditional) mutual information.

  - entropy_knn: Kozachenko-Leonenko estimator with the max-norm.
  - mutual_information: Kraskov-Stoegbauer-Grassberger (first algorithm).
  - conditional_mutual_information: Frenzel-Pompe conditioned KSG.
  - transfer_entropy / directed_information_rate: windowed CMI from an input
    process to an innovations process.

All values are in bits. Histories are truncated to the ``lag`` most recent
steps: full histories grow in dimension and defeat k-NN estimation, so the
windowed quantities approximate the full-history ones.
"""
import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import cKDTree
from scipy.special import digamma

from .errors import EstimatorError
from .rng import make_generator
from .schemas import EntropyEstimate

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_LAG = 5
DEFAULT_FOLDS = 10
DEFAULT_SHUFFLES = 200
JITTER_AMPLITUDE = 1e-10
_JITTER_STREAM = "tie-jitter"
_RANK_TOL = 1e-10

LN2 = math.log(2.0)


def as_samples(values) -> np.ndarray:
    """Coerce a sequence of scalars or vectors to an (n, d) float array."""
    array = np.asarray(values, dtype=float)
    if array.ndim == 0:
        raise EstimatorError("samples must be a sequence")
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise EstimatorError(f"samples must be vectors, got an array of shape {array.shape}")
    return array


def _aligned(*columns) -> list:
    arrays = [as_samples(column) for column in columns]
    n = arrays[0].shape[0]
    for array in arrays[1:]:
        if array.shape[0] != n:
            raise EstimatorError(f"sample columns are misaligned ({n} vs {array.shape[0]} rows)")
    if n < 2:
        raise EstimatorError("at least two samples are required")
    return arrays


def _check_k(n: int, k: int) -> None:
    if k < 1:
        raise EstimatorError(f"k must be >= 1 (got {k})")
    if n <= k:
        raise EstimatorError(f"need more samples than neighbours (n={n}, k={k})")


def _jitter(samples: np.ndarray) -> np.ndarray:
    """
    Break ties with noise of amplitude 1e-10 times the column scale.

    The noise stream is fixed per column position, so a block receives the
    same jitter in every joint and marginal space it appears in, and shifting
    a column leaves its jitter unchanged.
    """
    if samples.shape[1] == 0:
        return samples
    jittered = np.empty_like(samples)
    for j in range(samples.shape[1]):
        column = np.ascontiguousarray(samples[:, j])
        scale = column.std()
        if scale == 0:
            scale = abs(column[0]) or 1.0
        rng = make_generator(0, _JITTER_STREAM, j)
        jittered[:, j] = column + JITTER_AMPLITUDE * scale * rng.random(column.shape[0])
    return jittered


def _kth_distance(points: np.ndarray, k: int, workers: int = 1) -> np.ndarray:
    tree = cKDTree(points)
    distances, _ = tree.query(points, k=k + 1, p=np.inf, workers=workers)
    return distances[:, k]


def _count_within(points: np.ndarray, radii: np.ndarray, workers: int = 1) -> np.ndarray:
    """Points strictly closer than each radius (max-norm), the centre included."""
    if points.shape[1] == 0:
        return np.full(points.shape[0], points.shape[0], dtype=float)
    tree = cKDTree(points)
    counts = tree.query_ball_point(
        points, r=np.nextafter(radii, 0), p=np.inf, return_length=True, workers=workers
    )
    return np.asarray(counts, dtype=float)


def _kl_entropy_nats(points: np.ndarray, k: int, workers: int = 1) -> float:
    n, d = points.shape
    radii = _kth_distance(points, k, workers)
    with np.errstate(divide="ignore"):
        log_radii = np.log(2.0 * radii)
    return float(digamma(n) - digamma(k) + d * log_radii.mean())


def _subsample_std_error(estimate: Callable[[Sequence[np.ndarray]], float],
                         columns: Sequence[np.ndarray], k: int,
                         folds: int = DEFAULT_FOLDS) -> float:
    """Spread of the estimate over disjoint contiguous blocks."""
    n = columns[0].shape[0]
    folds = min(folds, n // (k + 1))
    if folds < 2:
        return 0.0
    bounds = np.linspace(0, n, folds + 1).astype(int)
    values = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        values.append(estimate([column[start:stop] for column in columns]))
    values = np.asarray(values)
    values = values[np.isfinite(values)]
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def _degenerate(n: int, k: int) -> EntropyEstimate:
    return EntropyEstimate(value=-math.inf, std_error=0.0, n_samples=n, k_neighbors=k, quantity="entropy")


def entropy_knn(samples, k: int = DEFAULT_K, workers: int = 1) -> EntropyEstimate:
    """Kozachenko-Leonenko differential entropy estimate in bits."""
    points = as_samples(samples)
    n = points.shape[0]
    _check_k(n, k)
    if np.ptp(points, axis=0).max() == 0:
        logger.debug("entropy_knn: all %d samples identical, returning -inf", n)
        return _degenerate(n, k)
    points = _jitter(points)

    def estimate(columns):
        return _kl_entropy_nats(columns[0], k, workers) / LN2

    return EntropyEstimate(
        value=estimate([points]),
        std_error=_subsample_std_error(estimate, [points], k),
        n_samples=n,
        k_neighbors=k,
        quantity="entropy",
    )


def _rank(samples: np.ndarray) -> int:
    if samples.shape[1] == 0:
        return 0
    centred = samples - samples.mean(axis=0)
    singular = np.linalg.svd(centred, compute_uv=False)
    if singular.size == 0 or singular[0] == 0:
        return 0
    return int(np.sum(singular > _RANK_TOL * singular[0]))


def conditional_entropy(y, z, k: int = DEFAULT_K, workers: int = 1) -> EntropyEstimate:
    """
    h(y|z) = h(y,z) - h(z) with matched k.

    A target that is a linear function of the conditioning samples (the joint
    sample covariance loses rank) is reported with the -inf sentinel.
    """
    target, given = _aligned(y, z)
    n = target.shape[0]
    _check_k(n, k)
    if np.ptp(target, axis=0).max() == 0:
        return _degenerate(n, k)
    joint = np.hstack([target, given])
    if _rank(joint) < _rank(given) + target.shape[1]:
        logger.debug("conditional_entropy: deterministic relation detected")
        return _degenerate(n, k)
    target, given = _jitter(target), _jitter(given)
    if given.shape[1] == 0:
        return entropy_knn(target, k, workers)

    def estimate(columns):
        t, g = columns
        return (_kl_entropy_nats(np.hstack([t, g]), k, workers)
                - _kl_entropy_nats(g, k, workers)) / LN2

    return EntropyEstimate(
        value=estimate([target, given]),
        std_error=_subsample_std_error(estimate, [target, given], k),
        n_samples=n,
        k_neighbors=k,
        quantity="entropy",
    )


def local_conditional_mutual_information(x, y, z=None, k: int = DEFAULT_K,
                                         workers: int = 1, jitter: bool = True) -> np.ndarray:
    """
    Per-sample terms of the KSG / Frenzel-Pompe estimator, in bits.

    With ``z`` empty this reduces to the first KSG mutual information
    estimator. The mean of the returned terms is the (C)MI estimate.
    """
    if z is None:
        a, b = _aligned(x, y)
        c = np.zeros((a.shape[0], 0))
    else:
        a, b, c = _aligned(x, y, z)
    n = a.shape[0]
    _check_k(n, k)
    if jitter:
        a, b, c = _jitter(a), _jitter(b), _jitter(c)
    radii = _kth_distance(np.hstack([a, b, c]), k, workers)
    n_ac = _count_within(np.hstack([a, c]), radii, workers)
    n_bc = _count_within(np.hstack([b, c]), radii, workers)
    if c.shape[1] == 0:
        local = digamma(k) + digamma(n) - (digamma(n_ac) + digamma(n_bc))
    else:
        n_c = _count_within(c, radii, workers)
        local = digamma(k) + digamma(n_c) - (digamma(n_ac) + digamma(n_bc))
    return local / LN2


def _cmi_estimate(x, y, z, k: int, workers: int) -> EntropyEstimate:
    columns = [as_samples(x), as_samples(y)] + ([] if z is None else [as_samples(z)])
    columns = _aligned(*columns)
    n = columns[0].shape[0]
    _check_k(n, k)
    columns = [_jitter(column) for column in columns]

    def estimate(parts):
        third = parts[2] if len(parts) == 3 else None
        return float(local_conditional_mutual_information(
            parts[0], parts[1], third, k, workers, jitter=False).mean())

    value = estimate(columns)
    if value < 0:
        logger.debug("negative (C)MI estimate %.4g bits retained raw", value)
    return EntropyEstimate(
        value=value,
        std_error=_subsample_std_error(estimate, columns, k),
        n_samples=n,
        k_neighbors=k,
    )


def mutual_information(x, y, k: int = DEFAULT_K, workers: int = 1) -> EntropyEstimate:
    """
    KSG mutual information in bits.

    Negative raw estimates are kept; ``EntropyEstimate.reported`` clips at 0.
    """
    return _cmi_estimate(x, y, None, k, workers)


def conditional_mutual_information(x, y, z, k: int = DEFAULT_K, workers: int = 1) -> EntropyEstimate:
    """I(x; y | z) by the conditioned KSG construction, in bits."""
    return _cmi_estimate(x, y, z, k, workers)


def lagged_windows(series, lag: int, include_current: bool) -> np.ndarray:
    """
    Row t holds series[t-lag .. t-1] (and series[t] when ``include_current``)
    for t = lag .. n-1, flattened oldest first.
    """
    values = as_samples(series)
    n, d = values.shape
    width = lag + 1 if include_current else lag
    if d == 0:
        return np.zeros((n - lag, 0))
    windows = sliding_window_view(values, (width, d))[:, 0]
    windows = windows[: n - lag]
    return windows.reshape(n - lag, width * d)


def _transfer_columns(inputs, innovations, lag: int, k: int):
    if lag < 1:
        raise EstimatorError(f"lag must be >= 1 (got {lag})")
    source, target = _aligned(inputs, innovations)
    n = target.shape[0]
    if n <= lag + k:
        raise EstimatorError(f"sequence length {n} must exceed lag + k = {lag + k}")
    source_history = lagged_windows(source, lag, include_current=True)
    target_history = lagged_windows(target, lag, include_current=False)
    present = target[lag:]
    return source_history, present, target_history


def transfer_entropy(inputs, innovations, lag: int = DEFAULT_LAG, k: int = DEFAULT_K,
                     workers: int = 1) -> EntropyEstimate:
    """
    I(x_{t-lag..t}; e_t | e_{t-lag..t-1}) averaged over time.

    An input process with no dimensions carries no information and yields an
    exact zero.
    """
    source_history, present, target_history = _transfer_columns(inputs, innovations, lag, k)
    n = present.shape[0]
    if source_history.shape[1] == 0:
        return EntropyEstimate(value=0.0, std_error=0.0, n_samples=n, k_neighbors=k)
    return conditional_mutual_information(source_history, present, target_history, k, workers)


def directed_information_rate(inputs, innovations, lag: int = DEFAULT_LAG, k: int = DEFAULT_K,
                              horizon: Optional[int] = None, workers: int = 1) -> EntropyEstimate:
    """
    Running Cesaro average of the per-step windowed CMI terms.

    Neighbour counts use the whole sequence; the average runs over the first
    ``horizon`` steps (all of them by default), and its standard error is the
    spread of the per-step terms over that horizon.
    """
    source_history, present, target_history = _transfer_columns(inputs, innovations, lag, k)
    n = present.shape[0]
    horizon = n if horizon is None else horizon
    if not 1 <= horizon <= n:
        raise EstimatorError(f"horizon must be in [1, {n}] (got {horizon})")
    if source_history.shape[1] == 0:
        return EntropyEstimate(value=0.0, std_error=0.0, n_samples=n, k_neighbors=k, horizon=horizon)
    local = local_conditional_mutual_information(source_history, present, target_history, k, workers)
    window = local[:horizon]
    running = np.cumsum(window) / np.arange(1, horizon + 1)
    std_error = float(window.std(ddof=1) / math.sqrt(horizon)) if horizon > 1 else 0.0
    return EntropyEstimate(value=float(running[-1]), std_error=std_error,
                           n_samples=n, k_neighbors=k, horizon=horizon)


def permutation_floor(x, y, z=None, k: int = DEFAULT_K, shuffles: int = DEFAULT_SHUFFLES,
                      seed: int = 0, quantile: float = 0.95, workers: int = 1) -> float:
    """
    Noise floor of the (C)MI estimator under independence.

    Rows of ``y`` are permuted (``x`` and ``z`` keep their alignment) and the
    ``quantile`` of the resulting estimates is returned.
    """
    columns = _aligned(*([x, y] if z is None else [x, y, z]))
    a, b = columns[0], columns[1]
    c = columns[2] if len(columns) == 3 else None
    _check_k(a.shape[0], k)
    rng = make_generator(seed, "permutation-floor")
    a = _jitter(a)
    c = None if c is None else _jitter(c)
    b = _jitter(b)
    null = np.empty(shuffles)
    for i in range(shuffles):
        shuffled = b[rng.permutation(b.shape[0])]
        null[i] = local_conditional_mutual_information(a, shuffled, c, k, workers, jitter=False).mean()
    return float(np.quantile(null, quantile))
