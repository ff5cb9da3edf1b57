import math
from typing import Annotated, Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

Mode = Literal["supervised", "semi", "unsupervised", "generalization"]
EntropySource = Literal["oracle", "estimated"]


def _coerce_extended(value: Any) -> Any:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity", "+infinity", "∞"):
            return math.inf
        if text in ("-inf", "-infinity", "-∞"):
            return -math.inf
        return float(text)
    return value


def _extended_to_json(value: float) -> Any:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def as_pnorm(value: Any) -> float:
    """Validate an L_p exponent; ``inf`` (any spelling) maps to ``math.inf``."""
    p = float(_coerce_extended(value))
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"p must satisfy p >= 1 (got {value!r})")
    return math.inf if math.isinf(p) else p


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=float)


def _as_bool_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=bool)


def _as_matrix(value: Any) -> np.ndarray:
    return np.atleast_2d(np.asarray(value, dtype=float))


def _array_to_json(value: np.ndarray) -> list:
    return value.tolist()


# Extended reals serialize to "inf"/"-inf" in JSON instead of null.
ExtendedFloat = Annotated[
    float,
    BeforeValidator(_coerce_extended),
    PlainSerializer(_extended_to_json, when_used="json"),
]
PNorm = Annotated[ExtendedFloat, AfterValidator(as_pnorm)]
# Differential entropy in bits; may be negative, -inf marks a deterministic relation.
EntropyBits = ExtendedFloat
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(_array_to_json, when_used="json"),
]
BoolArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_bool_array),
    PlainSerializer(_array_to_json, when_used="json"),
]
Matrix = Annotated[
    np.ndarray,
    BeforeValidator(_as_matrix),
    PlainSerializer(_array_to_json, when_used="json"),
]


def _check_psd(name: str, matrix: np.ndarray) -> None:
    if matrix.size == 0:
        return
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.linalg.eigvalsh(matrix).min() < -1e-10 * scale:
        raise ValueError(f"{name} must be positive semidefinite")


class MaxEntDistribution(BaseModel):
    """Exponential-power law maximizing entropy for a fixed L_p norm ``mu``."""
    model_config = ConfigDict(frozen=True)

    p: PNorm
    mu: float = Field(..., gt=0)


class EntropyEstimate(BaseModel):
    """
    An estimated entropy or information quantity in bits.

    Only information quantities ((C)MI, transfer entropy) are clipped at zero
    for reporting; a negative differential entropy is a legitimate value.
    """
    value: EntropyBits
    quantity: Literal["entropy", "information"] = "information"
    std_error: float = Field(0.0, ge=0)
    n_samples: int
    k_neighbors: int
    horizon: Optional[int] = None

    @model_validator(mode="after")
    def _check_counts(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.n_samples <= self.k_neighbors:
            raise ValueError("n_samples must exceed k_neighbors")
        return self

    @property
    def is_degenerate(self) -> bool:
        return self.value == -math.inf

    @property
    def clipped(self) -> bool:
        """True when a raw (C)MI estimate fell below zero."""
        return self.quantity == "information" and self.value < 0

    @property
    def reported(self) -> float:
        return max(0.0, self.value) if self.quantity == "information" else self.value


class LinearGaussianModel(BaseModel):
    """
    Linear-Gaussian state-space process with exogenous inputs:

        s_{k+1} = A s_k + B x_k + v_k,   v_k ~ N(0, Q)
        y_k     = C s_k + D x_k + w_k,   w_k ~ N(0, r)
        s_0 ~ N(0, P0)
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    state_transition: Matrix
    state_noise_cov: Matrix
    output_map: Matrix
    output_noise_var: float = Field(0.0, ge=0)
    initial_state_cov: Matrix
    input_map: Optional[Matrix] = None
    output_input_map: Optional[Matrix] = None

    @model_validator(mode="after")
    def _check_dimensions(self):
        m = self.state_transition.shape[0]
        if self.state_transition.shape != (m, m):
            raise ValueError("state_transition must be square")
        for name in ("state_noise_cov", "initial_state_cov"):
            matrix = getattr(self, name)
            if matrix.shape != (m, m):
                raise ValueError(f"{name} must be {m}x{m}")
            _check_psd(name, matrix)
        if self.output_map.shape != (1, m):
            raise ValueError(f"output_map must be 1x{m}")
        if self.input_map is None and self.output_input_map is None:
            n = 0
        elif self.input_map is not None:
            n = self.input_map.shape[1] if self.input_map.size else 0
        else:
            n = self.output_input_map.shape[1]
        if self.input_map is None or self.input_map.size == 0:
            self.input_map = np.zeros((m, n))
        if self.output_input_map is None or self.output_input_map.size == 0:
            self.output_input_map = np.zeros((1, n))
        if self.input_map.shape != (m, n):
            raise ValueError(f"input_map must be {m}x{n}")
        if self.output_input_map.shape != (1, n):
            raise ValueError(f"output_input_map must be 1x{n}")
        return self

    @property
    def state_dim(self) -> int:
        return self.state_transition.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_map.shape[1]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.state_transition))))

    @property
    def is_stable(self) -> bool:
        return self.spectral_radius < 1.0


class BayesLinearModel(BaseModel):
    """Gaussian prior over regression weights with Gaussian observation noise."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight_prior_cov: Matrix
    noise_var: float = Field(..., gt=0)
    input_dim: Optional[int] = None

    @model_validator(mode="after")
    def _check_prior(self):
        d = self.weight_prior_cov.shape[0]
        if self.weight_prior_cov.shape != (d, d):
            raise ValueError("weight_prior_cov must be square")
        _check_psd("weight_prior_cov", self.weight_prior_cov)
        if self.input_dim is None:
            self.input_dim = d
        elif self.input_dim != d:
            raise ValueError(f"input_dim={self.input_dim} does not match prior dimension {d}")
        return self


class Trajectory(BaseModel):
    """Paired input vectors and scalar outputs, with an optional label mask."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: FloatArray
    outputs: FloatArray
    label_mask: Optional[BoolArray] = None
    seed: int = 0
    generator_tag: str = "external"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    # pre-sample outputs, part of every predictor's past information set
    history: FloatArray = Field(default_factory=lambda: np.zeros(0))
    true_innovations: Optional[FloatArray] = None
    model: Optional[LinearGaussianModel] = None
    innovation: Optional[MaxEntDistribution] = None
    coeffs: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_alignment(self):
        self.outputs = self.outputs.reshape(-1)
        n = self.outputs.shape[0]
        if self.inputs.size == 0:
            self.inputs = np.zeros((n, 0))
        elif self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != n:
            raise ValueError(f"inputs must have {n} rows to match outputs")
        if self.label_mask is not None and self.label_mask.shape != (n,):
            raise ValueError(f"label_mask must have length {n}")
        self.history = self.history.reshape(-1)
        return self

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def available(self) -> np.ndarray:
        """Boolean array, True where the label may be shown to a predictor."""
        if self.label_mask is None:
            return np.ones(len(self), dtype=bool)
        return self.label_mask


class BatchDataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    train_inputs: FloatArray
    train_outputs: FloatArray
    test_input: FloatArray
    test_output: float
    weights: Optional[FloatArray] = None

    @model_validator(mode="after")
    def _check_shapes(self):
        d = self.test_input.reshape(-1).shape[0]
        self.test_input = self.test_input.reshape(-1)
        self.train_inputs = self.train_inputs.reshape(-1, d)
        self.train_outputs = self.train_outputs.reshape(-1)
        if self.train_inputs.shape[0] != self.train_outputs.shape[0]:
            raise ValueError("train_inputs and train_outputs must have the same number of rows")
        return self


class PredictionTrace(BaseModel):
    """Per-step predictions and innovations from one predictor run."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    predictions: FloatArray
    innovations: FloatArray
    predictor_tag: str

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.predictions.shape != self.innovations.shape:
            raise ValueError("predictions and innovations must have equal length")
        return self

    def __len__(self) -> int:
        return self.predictions.shape[0]


class AchievabilityDiagnostics(BaseModel):
    """Estimated terms of the equality conditions of the bound."""
    innovation_mi: EntropyEstimate
    transfer_entropy: EntropyEstimate
    directed_information_rate: EntropyEstimate
    past_information: Optional[EntropyEstimate] = None
    density_fit_distance: float = Field(..., ge=0)
    density_reference: Optional[MaxEntDistribution] = None
    zero_thresholds: Dict[str, float] = Field(default_factory=dict)
    lag: int
    k: int

    @property
    def innovations_independent(self) -> bool:
        return self.innovation_mi.value <= self.zero_thresholds.get("innovation_mi", 0.0)

    @property
    def no_input_transfer(self) -> bool:
        return self.transfer_entropy.value <= self.zero_thresholds.get("transfer_entropy", 0.0)


class BoundReport(BaseModel):
    scenario: str = ""
    predictor: str
    seed: Optional[int] = None
    p: PNorm
    mode: Mode = "supervised"
    conditional_entropy: EntropyBits
    entropy_source: EntropySource
    entropy_note: str = ""
    lower_bound: float = Field(..., ge=0)
    empirical_lp: float = Field(..., ge=0)
    monte_carlo_se: float = Field(0.0, ge=0)
    gap: float
    valid: Optional[bool] = None
    empirical_is_lower_estimate: bool = False
    n_steps: int
    diagnostics: Optional[AchievabilityDiagnostics] = None
    bound_mean: Optional[float] = None
    bound_median: Optional[float] = None
    error_mean: Optional[float] = None
    error_median: Optional[float] = None


class ReportFailure(BaseModel):
    """A report that could not be produced; the rest of the run proceeds."""
    scenario: str = ""
    predictor: str
    seed: Optional[int] = None
    p: Optional[ExtendedFloat] = None
    mode: Mode = "supervised"
    error: str


class InputProcess(BaseModel):
    kind: Literal["iid", "ar"] = "iid"
    coeff: float = Field(0.0, gt=-1, lt=1)
    variance: float = Field(1.0, gt=0)


class ProcessSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal["ar", "lgssm"] = "ar"
    coeffs: List[float] = Field(default_factory=list)
    innovation_p: PNorm = 2.0
    innovation_mu: float = Field(1.0, gt=0)
    burn_in: Optional[int] = Field(None, ge=0)
    model: Optional[LinearGaussianModel] = None
    input_process: InputProcess = Field(default_factory=InputProcess)

    @model_validator(mode="after")
    def _check_model(self):
        if self.kind == "lgssm" and self.model is None:
            raise ValueError("an lgssm process needs a model")
        return self


class PredictorSpec(BaseModel):
    tag: str
    name: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)


class EstimatorSpec(BaseModel):
    k: int = Field(5, ge=1)
    lag: int = Field(5, ge=1)
    shuffles: int = Field(200, ge=1)
    diagnostics: bool = True


class MaskingSpec(BaseModel):
    missing_rate: float = Field(0.5, ge=0, le=1)
    indices: Optional[List[int]] = None


class ScenarioConfig(BaseModel):
    name: str = "scenario"
    length: int = Field(..., ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0])
    p_values: List[PNorm] = Field(..., min_length=1)
    modes: List[Mode] = Field(default_factory=lambda: ["supervised"])
    entropy_source: EntropySource = "oracle"
    process: ProcessSpec
    predictors: List[PredictorSpec] = Field(default_factory=list)
    estimator: EstimatorSpec = Field(default_factory=EstimatorSpec)
    masking: MaskingSpec = Field(default_factory=MaskingSpec)
    workers: int = Field(1, ge=1)

    @field_validator("seeds")
    @classmethod
    def _non_negative_seeds(cls, seeds: List[int]) -> List[int]:
        if any(seed < 0 for seed in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    @field_validator("modes")
    @classmethod
    def _online_modes(cls, modes: List[str]) -> List[str]:
        if "generalization" in modes:
            raise ValueError("generalization runs through generalization_experiment, not a scenario")
        return modes
