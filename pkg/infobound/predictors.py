"""
Online prediction protocol and baseline learners.

At step k a predictor is handed x_k, asked for y_hat_k, and only then told
y_k (or ``None`` when the label is masked). Nothing else about the future is
ever visible to it, so the information set is exactly
(x_0..x_k, unmasked y_0..y_{k-1}) plus the pre-sample history.
"""
import csv
import logging
import math
from abc import ABC, abstractmethod
from collections import deque
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from filterpy.kalman import KalmanFilter

from .errors import ConfigurationError, PredictorError
from .processes import FLOAT_FORMAT, ar_initial_state
from .schemas import LinearGaussianModel, PredictionTrace, PredictorSpec, Trajectory

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e10
NLMS_EPS = 1e-8
RLS_FLAT_PRIOR = 1e8
# innovation variances at or below this are treated as noiseless outputs
_DEGENERATE_VARIANCE = 1e-300


class OnlinePredictor(ABC):
    """Stateful one-step-ahead predictor; one instance per run."""

    tag = "predictor"

    def start(self, input_dim: int, history: Sequence[float] = ()) -> None:
        """Reset internal state. ``history`` holds pre-sample outputs, oldest first."""

    @abstractmethod
    def predict(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def update(self, x: np.ndarray, y: Optional[float]) -> None:
        """Reveal y_k; ``None`` when the label is masked."""


class ZeroPredictor(OnlinePredictor):
    tag = "zero"

    def predict(self, x):
        return 0.0

    def update(self, x, y):
        pass


class LagBuffer:
    """Most recent outputs, newest first, with masked labels imputed."""

    def __init__(self, lags: int):
        self.lags = lags
        self.values = deque([0.0] * lags, maxlen=lags) if lags else deque(maxlen=0)

    def fill(self, history: Sequence[float]) -> None:
        self.values = deque([0.0] * self.lags, maxlen=self.lags) if self.lags else deque(maxlen=0)
        for value in list(history)[-self.lags:] if self.lags else []:
            self.values.appendleft(float(value))

    def push(self, value: float) -> None:
        if self.lags:
            self.values.appendleft(float(value))

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.values, dtype=float, count=self.lags)


class ArPredictor(OnlinePredictor):
    """
    Plug-in conditional mean sum_j a_j y_{k-j}.

    Masked labels are replaced by the predictor's own prediction.
    """

    def __init__(self, coeffs: Sequence[float]):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.tag = "ar"
        self._lags = LagBuffer(self.coeffs.size)
        self._last = 0.0

    def start(self, input_dim, history=()):
        self._lags.fill(history)

    def predict(self, x):
        self._last = float(self.coeffs @ self._lags.as_array()) if self.coeffs.size else 0.0
        return self._last

    def update(self, x, y):
        self._lags.push(self._last if y is None else y)


class KalmanPredictor(OnlinePredictor):
    """
    Time-varying Kalman one-step predictor built on ``filterpy``.

    Inputs enter as known control signals; masked steps skip the measurement
    update. With ``use_inputs=False`` the filter is blind to the input maps.
    With ``companion_history`` the initial state mean is read from the
    pre-sample history, for models in AR companion form.
    """

    def __init__(self, model: LinearGaussianModel, use_inputs: bool = True,
                 companion_history: bool = False, tag: str = "kalman"):
        self.model = model
        self.use_inputs = use_inputs
        self.companion_history = companion_history
        self.tag = tag
        self._filter: Optional[KalmanFilter] = None

    def start(self, input_dim, history=()):
        model = self.model
        if self.use_inputs and input_dim != model.input_dim:
            raise ConfigurationError(
                f"{self.tag}: model expects {model.input_dim} inputs, trajectory has {input_dim}"
            )
        m = model.state_dim
        kf = KalmanFilter(dim_x=m, dim_z=1, dim_u=model.input_dim if self.use_inputs else 0)
        kf.F = model.state_transition.copy()
        kf.H = model.output_map.copy()
        kf.Q = model.state_noise_cov.copy()
        kf.R = np.array([[model.output_noise_var]])
        kf.P = model.initial_state_cov.copy()
        kf.B = model.input_map.copy() if self.use_inputs and model.input_dim else None
        initial = np.zeros(m)
        if self.companion_history:
            initial = ar_initial_state(model.state_transition[0], history)
        kf.x = initial.reshape(m, 1)
        self._filter = kf
        self._feedthrough = model.output_input_map[0] if self.use_inputs else np.zeros(0)

    def _known_output(self, x: np.ndarray) -> float:
        if self._feedthrough.size == 0:
            return 0.0
        return float(self._feedthrough @ x)

    def predict(self, x):
        kf = self._filter
        return (kf.H @ kf.x).item() + self._known_output(x)

    def update(self, x, y):
        kf = self._filter
        if y is not None:
            variance = (kf.H @ kf.P @ kf.H.T).item() + float(kf.R[0, 0])
            # noiseless output with a known state carries no new information
            if variance > _DEGENERATE_VARIANCE:
                kf.update(np.array([[y - self._known_output(x)]]))
        if kf.B is not None:
            kf.predict(u=np.asarray(x, dtype=float).reshape(-1, 1))
        else:
            kf.predict()


class _LinearFeaturePredictor(OnlinePredictor):
    """Linear predictor on the feature vector [x_k; y_{k-1}, ..., y_{k-lags}]."""

    def __init__(self, dim: int, lags: int):
        if dim < 0 or lags < 0:
            raise ConfigurationError("dim and lags must be non-negative")
        self.dim = dim
        self.lags = lags
        self._lags = LagBuffer(lags)
        self.weights = np.zeros(dim + lags)
        self._last = 0.0
        self._features = np.zeros(dim + lags)

    def start(self, input_dim, history=()):
        if input_dim != self.dim:
            raise ConfigurationError(f"{self.tag}: configured for {self.dim} inputs, trajectory has {input_dim}")
        self._lags.fill(history)
        self.weights = np.zeros(self.dim + self.lags)
        self.reset()

    def reset(self) -> None:
        pass

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=float).reshape(-1), self._lags.as_array()])

    def predict(self, x):
        self._features = self.features(x)
        self._last = float(self.weights @ self._features) if self._features.size else 0.0
        return self._last

    def update(self, x, y):
        if y is not None and self._features.size:
            self.adapt(self._features, y - self._last)
            norm = np.linalg.norm(self.weights)
            if not math.isfinite(norm) or norm > DIVERGENCE_NORM:
                logger.warning("%s diverged: weight norm %.3g", self.tag, norm)
                raise PredictorError(f"{self.tag} diverged (weight norm {norm:.3g})")
        self._lags.push(self._last if y is None else y)

    def adapt(self, phi: np.ndarray, error: float) -> None:
        raise NotImplementedError


class RlsPredictor(_LinearFeaturePredictor):
    """Exponentially weighted recursive least squares."""

    def __init__(self, dim: int, forgetting: float = 1.0, ridge: float = 0.0, lags: int = 0):
        super().__init__(dim, lags)
        if not 0.0 < forgetting <= 1.0:
            raise ConfigurationError(f"forgetting must be in (0, 1] (got {forgetting})")
        if ridge < 0:
            raise ConfigurationError(f"ridge must be non-negative (got {ridge})")
        self.forgetting = forgetting
        self.ridge = ridge
        self.tag = "rls"
        self.reset()

    def reset(self):
        scale = RLS_FLAT_PRIOR if self.ridge == 0 else 1.0 / self.ridge
        self.P = scale * np.eye(self.dim + self.lags)

    def adapt(self, phi, error):
        p_phi = self.P @ phi
        gain = p_phi / (self.forgetting + phi @ p_phi)
        self.weights = self.weights + gain * error
        self.P = (self.P - np.outer(gain, p_phi)) / self.forgetting
        self.P = 0.5 * (self.P + self.P.T)


class LmsPredictor(_LinearFeaturePredictor):
    """Normalized LMS; stable for 0 < step_size < 2."""

    def __init__(self, dim: int, step_size: float, lags: int = 0):
        super().__init__(dim, lags)
        if not step_size > 0:
            raise ConfigurationError(f"step_size must be positive (got {step_size})")
        if step_size >= 2:
            logger.warning("normalized LMS step size %.3g is outside the stable range (0, 2)", step_size)
        self.step_size = step_size
        self.tag = "lms"

    def adapt(self, phi, error):
        self.weights = self.weights + self.step_size * error * phi / (NLMS_EPS + phi @ phi)


def zero_predictor() -> OnlinePredictor:
    return ZeroPredictor()


def ar_predictor(coeffs: Sequence[float]) -> OnlinePredictor:
    return ArPredictor(coeffs)


def kalman_predictor(model: LinearGaussianModel, use_inputs: bool = True,
                     companion_history: bool = False) -> OnlinePredictor:
    return KalmanPredictor(model, use_inputs=use_inputs, companion_history=companion_history)


def mismatched_kalman(model: LinearGaussianModel, state_transition,
                      companion_history: bool = False) -> OnlinePredictor:
    """Kalman predictor running on a misreported state transition matrix."""
    transition = np.atleast_2d(np.asarray(state_transition, dtype=float))
    if transition.shape != model.state_transition.shape:
        # a scalar replaces the leading row of a companion-form model
        if transition.size == 1 and model.state_dim > 1:
            row = model.state_transition.copy()
            row[0, :] = 0.0
            row[0, 0] = transition.item()
            transition = row
        else:
            raise ConfigurationError(f"state_transition must be {model.state_transition.shape}")
    wrong = model.model_copy(update={"state_transition": transition})
    return KalmanPredictor(wrong, companion_history=companion_history, tag="mismatched_kalman")


def rls_predictor(dim: int, forgetting: float = 1.0, ridge: float = 0.0, lags: int = 0) -> OnlinePredictor:
    return RlsPredictor(dim, forgetting=forgetting, ridge=ridge, lags=lags)


def lms_predictor(dim: int, step_size: float, lags: int = 0) -> OnlinePredictor:
    return LmsPredictor(dim, step_size=step_size, lags=lags)


def describe(spec: PredictorSpec) -> str:
    """Report label: the configured name, else e.g. ``lms(lags=1,step_size=0.5)``."""
    if spec.name:
        return spec.name
    if not spec.params:
        return spec.tag
    inner = ",".join(f"{key}={spec.params[key]}" for key in sorted(spec.params))
    return f"{spec.tag}({inner})"


def _require_model(spec: PredictorSpec, t: Trajectory) -> LinearGaussianModel:
    if t.model is None:
        raise ConfigurationError(f"predictor {spec.tag!r} needs a trajectory with a known model")
    return t.model


def predictor_from_spec(spec: PredictorSpec, t: Trajectory) -> OnlinePredictor:
    """Build a fresh predictor for ``t``; model-based predictors read ``t.model``."""
    params = dict(spec.params)
    companion = bool(t.coeffs)
    try:
        if spec.tag == "zero":
            predictor = zero_predictor()
        elif spec.tag == "ar":
            coeffs = params.get("coeffs", t.coeffs)
            if coeffs is None:
                raise ConfigurationError("ar predictor needs coeffs or an AR trajectory")
            predictor = ar_predictor(coeffs)
        elif spec.tag == "kalman":
            predictor = kalman_predictor(_require_model(spec, t), use_inputs=bool(params.get("use_inputs", True)),
                                         companion_history=companion)
        elif spec.tag == "mismatched_kalman":
            if "state_transition" not in params:
                raise ConfigurationError("mismatched_kalman needs a state_transition parameter")
            predictor = mismatched_kalman(_require_model(spec, t), params["state_transition"],
                                          companion_history=companion)
        elif spec.tag == "rls":
            predictor = rls_predictor(int(params.get("dim", t.input_dim)),
                                      forgetting=float(params.get("forgetting", 1.0)),
                                      ridge=float(params.get("ridge", 0.0)),
                                      lags=int(params.get("lags", 0)))
        elif spec.tag == "lms":
            if "step_size" not in params:
                raise ConfigurationError("lms needs a step_size parameter")
            predictor = lms_predictor(int(params.get("dim", t.input_dim)), float(params["step_size"]),
                                      lags=int(params.get("lags", 0)))
        else:
            raise ConfigurationError(f"unknown predictor tag {spec.tag!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid parameters for predictor {spec.tag!r}: {exc}") from exc
    predictor.tag = describe(spec)
    return predictor


def run_online(t: Trajectory, predictor: OnlinePredictor) -> PredictionTrace:
    """Drive ``predictor`` through ``t`` under the strict causal protocol."""
    available = t.available
    # pre-sample labels are labels too: an unsupervised run sees none of them
    predictor.start(t.input_dim, t.history if available.any() else ())
    n = len(t)
    predictions = np.empty(n)
    for step in range(n):
        x = t.inputs[step]
        y_hat = predictor.predict(x)
        if not math.isfinite(y_hat):
            raise PredictorError(f"{predictor.tag} produced a non-finite prediction at step {step}")
        predictions[step] = y_hat
        predictor.update(x, float(t.outputs[step]) if available[step] else None)
    return PredictionTrace(predictions=predictions, innovations=t.outputs - predictions,
                           predictor_tag=predictor.tag)


def write_trace_csv(t: Trajectory, trace: PredictionTrace, path: Union[str, Path]) -> Path:
    """Columns: step, y, y_hat, innovation."""
    if len(trace) != len(t):
        raise ConfigurationError("trace and trajectory lengths differ")
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["step", "y", "y_hat", "innovation"])
        for step in range(len(t)):
            writer.writerow([step, format(t.outputs[step], FLOAT_FORMAT),
                             format(trace.predictions[step], FLOAT_FORMAT),
                             format(trace.innovations[step], FLOAT_FORMAT)])
    return path


def read_trace_csv(path: Union[str, Path], predictor_tag: Optional[str] = None) -> PredictionTrace:
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ConfigurationError(f"cannot read trace {path}: {exc}") from exc
    if not rows or rows[0] != ["step", "y", "y_hat", "innovation"]:
        raise ConfigurationError(f"{path}: expected columns step, y, y_hat, innovation")
    try:
        body = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float).reshape(-1, 4)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed row ({exc})") from exc
    return PredictionTrace(predictions=body[:, 2], innovations=body[:, 3],
                           predictor_tag=predictor_tag or path.stem)
