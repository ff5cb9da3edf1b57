"""
Synthetic processes whose bound-relevant entropies are known by construction.

Every generator is a pure function of its arguments and seed: randomness comes
from a Philox stream keyed by the generator tag, so a trajectory is fully
reproducible from (generator_tag, parameters, seed).
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError
from scipy.signal import lfilter

from . import maxent
from .errors import ConfigurationError, GenerationError, UnstableModelError
from .gaussian_oracle import ar_state_space, stationary_state_covariance
from .rng import make_generator
from .schemas import (
    BatchDataset,
    BayesLinearModel,
    InputProcess,
    LinearGaussianModel,
    MaxEntDistribution,
    ProcessSpec,
    Trajectory,
)

logger = logging.getLogger(__name__)

MIN_BURN_IN = 100
BURN_IN_FACTOR = 10
FLOAT_FORMAT = ".17g"

PathLike = Union[str, Path]


def companion_spectral_radius(coeffs: Sequence[float]) -> float:
    """Largest root modulus of z^m - a_1 z^{m-1} - ... - a_m; 0 for white noise."""
    coeffs = list(coeffs)
    if not coeffs:
        return 0.0
    return float(np.max(np.abs(np.roots([1.0] + [-a for a in coeffs]))))


def default_burn_in(coeffs: Sequence[float]) -> int:
    return max(MIN_BURN_IN, BURN_IN_FACTOR * len(coeffs))


def gen_ar(coeffs: Sequence[float], innovation: MaxEntDistribution, length: int, seed: int,
           burn_in: Optional[int] = None) -> Trajectory:
    """
    y_k = sum_j a_j y_{k-j} + w_k with w_k i.i.d. from ``innovation``.

    The first ``burn_in`` outputs are discarded; the last len(coeffs) of them
    become ``history``, the pre-sample labels a predictor may condition on.
    ``true_innovations`` holds the driving noise of the kept steps.
    """
    coeffs = [float(a) for a in coeffs]
    if length < 1:
        raise ConfigurationError(f"length must be >= 1 (got {length})")
    radius = companion_spectral_radius(coeffs)
    if radius >= 1.0:
        raise UnstableModelError(
            f"AR coefficients {coeffs} are unstable: companion spectral radius {radius:.6g} >= 1"
        )
    burn = default_burn_in(coeffs) if burn_in is None else int(burn_in)
    order = len(coeffs)
    if burn < order:
        raise ConfigurationError(f"burn_in must cover the AR memory of {order} steps")

    rng = make_generator(seed, "ar", *coeffs, innovation.p, innovation.mu)
    noise = maxent.draw(innovation, burn + length, rng)
    full = lfilter([1.0], [1.0] + [-a for a in coeffs], noise)
    if not np.all(np.isfinite(full)):
        raise GenerationError("AR recursion produced non-finite outputs")

    # given the pre-sample history only the current innovation is uncertain
    noise_var = maxent.second_moment(innovation)
    model = ar_state_space(coeffs, noise_var, initial_state_cov=_warm_start_cov(order, noise_var))
    logger.debug("generated AR(%d) trajectory: length=%d burn_in=%d seed=%d", order, length, burn, seed)
    return Trajectory(
        inputs=np.zeros((length, 0)),
        outputs=full[burn:],
        seed=seed,
        generator_tag="ar",
        parameters={"coeffs": coeffs, "innovation_p": "inf" if math.isinf(innovation.p) else innovation.p,
                    "innovation_mu": innovation.mu, "burn_in": burn},
        history=full[burn - order:burn],
        true_innovations=noise[burn:],
        model=model,
        innovation=innovation,
        coeffs=coeffs,
    )


def _warm_start_cov(order: int, noise_var: float) -> Optional[np.ndarray]:
    if order == 0:
        return None
    cov = np.zeros((order, order))
    cov[0, 0] = noise_var
    return cov


def ar_initial_state(coeffs: Sequence[float], history: Sequence[float]) -> np.ndarray:
    """
    Conditional mean of the companion state (y_0, y_{-1}, ..., y_{-m+1})
    given the pre-sample history (oldest first).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    order = coeffs.size
    if order == 0:
        return np.zeros(1)
    past = np.zeros(order)
    recent = np.asarray(history, dtype=float)[::-1][:order]
    past[: recent.size] = recent
    state = np.empty(order)
    state[0] = coeffs @ past
    state[1:] = past[: order - 1]
    return state


def _draw_inputs(process: InputProcess, length: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 0:
        return np.zeros((length, 0))
    shocks = rng.standard_normal((length, dim))
    if process.kind == "iid":
        return math.sqrt(process.variance) * shocks
    c = process.coeff
    # stationary AR(1) with marginal variance ``variance``
    scaled = shocks * math.sqrt(process.variance * (1.0 - c * c))
    scaled[0] = shocks[0] * math.sqrt(process.variance)
    return lfilter([1.0], [1.0, -c], scaled, axis=0)


def gen_lgssm(model: LinearGaussianModel, input_process: Optional[InputProcess], length: int,
              seed: int) -> Trajectory:
    """Simulate state, exogenous inputs and outputs of a linear-Gaussian model."""
    if length < 1:
        raise ConfigurationError(f"length must be >= 1 (got {length})")
    if not model.is_stable:
        raise UnstableModelError(
            f"state_transition must have spectral radius < 1 (got {model.spectral_radius:.6g})"
        )
    input_process = input_process or InputProcess()
    m, d = model.state_dim, model.input_dim
    rng = make_generator(seed, "lgssm")
    inputs = _draw_inputs(input_process, length, d, rng)
    state = rng.multivariate_normal(np.zeros(m), model.initial_state_cov, method="eigh")
    state_noise = rng.multivariate_normal(np.zeros(m), model.state_noise_cov, size=length, method="eigh")
    output_noise = math.sqrt(model.output_noise_var) * rng.standard_normal(length)

    a, b = model.state_transition, model.input_map
    c, dmap = model.output_map[0], model.output_input_map[0]
    outputs = np.empty(length)
    for step in range(length):
        x = inputs[step]
        outputs[step] = c @ state + dmap @ x + output_noise[step]
        state = a @ state + b @ x + state_noise[step]
    if not np.all(np.isfinite(outputs)):
        raise GenerationError("state-space simulation produced non-finite outputs")
    return Trajectory(
        inputs=inputs,
        outputs=outputs,
        seed=seed,
        generator_tag="lgssm",
        parameters={"input_process": input_process.model_dump()},
        model=model,
    )


def generate(spec: ProcessSpec, length: int, seed: int) -> Trajectory:
    """Trajectory for a process descriptor from a scenario file."""
    if spec.kind == "ar":
        innovation = MaxEntDistribution(p=spec.innovation_p, mu=spec.innovation_mu)
        return gen_ar(spec.coeffs, innovation, length, seed, burn_in=spec.burn_in)
    return gen_lgssm(spec.model, spec.input_process, length, seed)


def mask_labels(t: Trajectory, missing_rate: Optional[float] = None,
                indices: Optional[Iterable[int]] = None, seed: int = 0) -> Trajectory:
    """
    Copy of ``t`` with some labels flagged unavailable.

    Either ``round(missing_rate * n)`` steps chosen uniformly at random or the
    explicit ``indices`` are masked. Outputs are kept for scoring. With every
    label masked the pre-sample history is dropped as well, and an AR model
    starts from its stationary state covariance.
    """
    n = len(t)
    if (missing_rate is None) == (indices is None):
        raise ConfigurationError("give exactly one of missing_rate or indices")
    mask = np.ones(n, dtype=bool)
    if indices is not None:
        chosen = sorted(set(int(i) for i in indices))
        if chosen and (chosen[0] < 0 or chosen[-1] >= n):
            raise ConfigurationError(f"mask indices must lie in 0..{n - 1}")
        mask[chosen] = False
    else:
        if not 0.0 <= missing_rate <= 1.0:
            raise ConfigurationError(f"missing_rate must be in [0, 1] (got {missing_rate})")
        rng = make_generator(seed, "mask", missing_rate)
        count = int(round(missing_rate * n))
        mask[rng.choice(n, size=count, replace=False)] = False
    update = {"label_mask": mask}
    if not mask.any() and t.coeffs:
        update["history"] = np.zeros(0)
        if t.model is not None:
            stationary = stationary_state_covariance(t.model)
            update["model"] = t.model.model_copy(update={"initial_state_cov": stationary})
    return t.model_copy(update=update)


def gen_regression_batch(model: BayesLinearModel, k: int, seed: int,
                         true_weights: Optional[Sequence[float]] = None, trial: int = 0) -> BatchDataset:
    """
    k i.i.d. standard-Gaussian training rows and one held-out test pair.

    Weights are drawn from the prior unless ``true_weights`` is given;
    ``trial`` selects an independent stream under the same seed.
    """
    if k < 0:
        raise ConfigurationError(f"k must be >= 0 (got {k})")
    d = model.input_dim
    rng = make_generator(seed, "regression", trial)
    if true_weights is None:
        weights = rng.multivariate_normal(np.zeros(d), model.weight_prior_cov, method="eigh")
    else:
        weights = np.asarray(true_weights, dtype=float).reshape(-1)
        if weights.size != d:
            raise ConfigurationError(f"true_weights must have {d} entries")
    noise_std = math.sqrt(model.noise_var)
    train_inputs = rng.standard_normal((k, d))
    train_outputs = train_inputs @ weights + noise_std * rng.standard_normal(k)
    test_input = rng.standard_normal(d)
    test_output = float(test_input @ weights + noise_std * rng.standard_normal())
    return BatchDataset(train_inputs=train_inputs, train_outputs=train_outputs,
                        test_input=test_input, test_output=test_output, weights=weights)


def format_float(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


def write_trajectory_csv(t: Trajectory, path: PathLike) -> Path:
    """Columns: step, x_0..x_{n-1}, y, mask (1 = label available)."""
    path = Path(path)
    header = ["step"] + [f"x_{j}" for j in range(t.input_dim)] + ["y", "mask"]
    available = t.available
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for step in range(len(t)):
            row = [str(step)]
            row += [format_float(v) for v in t.inputs[step]]
            row += [format_float(t.outputs[step]), "1" if available[step] else "0"]
            writer.writerow(row)
    return path


def read_trajectory_csv(path: PathLike) -> Trajectory:
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ConfigurationError(f"cannot read trajectory {path}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    header = rows[0]
    if header[:1] != ["step"] or header[-2:] != ["y", "mask"]:
        raise ConfigurationError(f"{path}: expected columns step, x_0.., y, mask")
    n_inputs = len(header) - 3
    try:
        body = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed row ({exc})") from exc
    mask = body[:, -1] != 0
    return Trajectory(
        inputs=body[:, 1:1 + n_inputs],
        outputs=body[:, -2],
        label_mask=None if mask.all() else mask,
        generator_tag="external",
        parameters={"source": str(path)},
    )


def write_trajectory_json(t: Trajectory, path: PathLike) -> Path:
    """Full trajectory with generator metadata, model and history."""
    path = Path(path)
    path.write_text(t.model_dump_json(indent=2))
    return path


def read_trajectory_json(path: PathLike) -> Trajectory:
    path = Path(path)
    try:
        return Trajectory.model_validate_json(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read trajectory {path}: {exc}") from exc
    except ValidationError as exc:
        raise ConfigurationError(f"{path}: invalid trajectory ({exc.error_count()} errors)\n{exc}") from exc


def load_trajectory(path: PathLike) -> Trajectory:
    """Read a trajectory from JSON or CSV, chosen by suffix."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_trajectory_json(path)
    return read_trajectory_csv(path)


def trajectory_metadata(t: Trajectory) -> dict:
    """Generator tag, parameters and seed, as written next to a trajectory CSV."""
    return json.loads(t.model_dump_json(include={"seed", "generator_tag", "parameters", "coeffs", "innovation"}))
