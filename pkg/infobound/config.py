"""
Environment settings and INI scenario files.

Settings come from the process environment after ``load_dotenv()``; a scenario
file is an INI document with [scenario], [process], [predictors],
[estimator] and [masking] sections. Matrices are written row by row, rows
separated by ';' and entries by ','. ``inf`` is the literal for p=inf.

    [scenario]
    name = ar1
    length = 20000
    seeds = 0, 1
    p = 2, inf
    modes = supervised, semi

    [process]
    kind = ar
    coeffs = 0.9
    innovation_p = 2
    innovation_mu = 1

    [predictors]
    plug_in = ar
    lms = lms step_size=0.5 lags=1
"""
import configparser
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError
from .gaussian_oracle import stationary_state_covariance
from .schemas import (
    EstimatorSpec,
    InputProcess,
    LinearGaussianModel,
    MaskingSpec,
    PredictorSpec,
    ProcessSpec,
    ScenarioConfig,
)

logger = logging.getLogger(__name__)

ENV_PREFIX = "INFOBOUND_"
DEFAULT_OUTPUT_DIR = "./infobound-out"
DEFAULT_SCENARIO = Path(__file__).with_name("default_scenario.ini")

PathLike = Union[str, Path]


class Settings(BaseModel):
    """Defaults shared by the CLI and library entry points."""
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    seed: int = Field(0, ge=0)
    k: int = Field(5, ge=1)
    lag: int = Field(5, ge=1)
    shuffles: int = Field(200, ge=1)
    workers: int = Field(1, ge=1)


def load_settings(env_file: Optional[PathLike] = None) -> Settings:
    """Read INFOBOUND_* variables, after loading a .env file if one is found."""
    load_dotenv(env_file)
    values = {}
    for field in Settings.model_fields:
        raw = os.getenv(ENV_PREFIX + field.upper())
        if raw is not None and raw.strip():
            values[field] = raw.strip()
    try:
        return Settings(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid {ENV_PREFIX}* environment settings:\n{exc}") from exc


def parse_scalar(text: str) -> Any:
    """int, float (decimal or scientific, 'inf'), bool, or the stripped string."""
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(lowered)
    except ValueError:
        return text


def parse_list(text: str) -> List[Any]:
    return [parse_scalar(item) for item in text.split(",") if item.strip()]


def parse_floats(text: str, key: str) -> List[float]:
    try:
        return [float(item.strip().lower()) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


def parse_matrix(text: str, key: str) -> np.ndarray:
    rows = [parse_floats(row, key) for row in text.split(";") if row.strip()]
    if not rows or len({len(row) for row in rows}) != 1:
        raise ConfigurationError(f"{key}: rows must have equal, non-zero length")
    return np.array(rows, dtype=float)


def parse_predictor(name: str, text: str) -> PredictorSpec:
    """``tag key=value key=value``; list values are comma-separated."""
    tokens = text.split()
    if not tokens:
        raise ConfigurationError(f"predictor {name!r} has no tag")
    params: Dict[str, Any] = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise ConfigurationError(f"predictor {name!r}: expected key=value, got {token!r}")
        items = parse_list(value)
        if not items:
            raise ConfigurationError(f"predictor {name!r}: {key} has no value")
        params[key] = items if "," in value else items[0]
    if "coeffs" in params and not isinstance(params["coeffs"], list):
        params["coeffs"] = [params["coeffs"]]
    return PredictorSpec(tag=tokens[0], name=name, params=params)


def _lgssm_model(section: configparser.SectionProxy) -> LinearGaussianModel:
    def matrix(key, default=None):
        return parse_matrix(section[key], key) if key in section else default

    transition = matrix("state_transition")
    if transition is None:
        raise ConfigurationError("[process] lgssm needs state_transition")
    m = transition.shape[0]
    fields = dict(
        state_transition=transition,
        state_noise_cov=matrix("state_noise_cov", np.eye(m)),
        output_map=matrix("output_map", np.eye(1, m)),
        output_noise_var=float(section.get("output_noise_var", "0")),
        initial_state_cov=np.zeros((m, m)),
        input_map=matrix("input_map"),
        output_input_map=matrix("output_input_map"),
    )
    initial = section.get("initial_state_cov", "stationary").strip().lower()
    model = LinearGaussianModel(**fields)
    if initial == "stationary":
        return model.model_copy(update={"initial_state_cov": stationary_state_covariance(model)})
    fields["initial_state_cov"] = parse_matrix(initial, "initial_state_cov")
    return LinearGaussianModel(**fields)


def _process(parser: configparser.ConfigParser) -> ProcessSpec:
    if not parser.has_section("process"):
        raise ConfigurationError("scenario file needs a [process] section")
    section = parser["process"]
    kind = section.get("kind", "ar").strip()
    values: Dict[str, Any] = {"kind": kind}
    if "coeffs" in section:
        values["coeffs"] = parse_floats(section["coeffs"], "coeffs")
    for key in ("innovation_p", "innovation_mu", "burn_in"):
        if key in section:
            values[key] = parse_scalar(section[key])
    if kind == "lgssm":
        values["model"] = _lgssm_model(section)
        values["input_process"] = InputProcess(
            kind=section.get("input_kind", "iid").strip(),
            coeff=float(section.get("input_coeff", "0")),
            variance=float(section.get("input_variance", "1")),
        )
    return ProcessSpec(**values)


def load_scenario(path: PathLike, settings: Optional[Settings] = None) -> ScenarioConfig:
    """Parse and validate a scenario file; ``settings`` fill estimator defaults."""
    path = Path(path)
    settings = settings or Settings()
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path):
            raise ConfigurationError(f"cannot read scenario file {path}")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc

    try:
        scenario = parser["scenario"] if parser.has_section("scenario") else {}
        estimator = parser["estimator"] if parser.has_section("estimator") else {}
        masking = parser["masking"] if parser.has_section("masking") else {}
        predictors = []
        if parser.has_section("predictors"):
            predictors = [parse_predictor(name, text) for name, text in parser["predictors"].items()]
        config = ScenarioConfig(
            name=scenario.get("name", path.stem),
            length=scenario.get("length"),
            seeds=parse_list(scenario.get("seeds", str(settings.seed))),
            p_values=[item.strip() for item in scenario.get("p", "2").split(",") if item.strip()],
            modes=[item.strip() for item in scenario.get("modes", "supervised").split(",") if item.strip()],
            entropy_source=scenario.get("entropy_source", "oracle").strip(),
            workers=scenario.get("workers", settings.workers),
            process=_process(parser),
            predictors=predictors,
            estimator=EstimatorSpec(
                k=estimator.get("k", settings.k),
                lag=estimator.get("lag", settings.lag),
                shuffles=estimator.get("shuffles", settings.shuffles),
                diagnostics=parse_scalar(str(estimator.get("diagnostics", "true"))),
            ),
            masking=MaskingSpec(
                missing_rate=masking.get("missing_rate", 0.5),
                indices=parse_list(masking["indices"]) if "indices" in masking else None,
            ),
        )
    except ValidationError as exc:
        raise ConfigurationError(f"{path}: invalid scenario:\n{exc}") from exc
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{path}: {exc}") from exc
    logger.debug("loaded scenario %s from %s", config.name, path)
    return config
