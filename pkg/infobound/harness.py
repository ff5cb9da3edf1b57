"""
Bound reports, achievability diagnostics and scenario runs.

A report compares the empirical L_p norm of a predictor's innovations with the
lower bound 2^h / lp_constant(p), where h is the conditional entropy of the
output given the predictor's information set. h comes either from the
closed-form oracle of the generating process or from k-NN estimates; only the
former carries a validity guarantee.
"""
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.stats import kstest

from . import estimators, gaussian_oracle, maxent
from .errors import ConfigurationError, EstimatorError, InfoBoundError, OracleError
from .predictors import describe, predictor_from_spec, run_online
from .processes import FLOAT_FORMAT, gen_regression_batch, generate, mask_labels
from .rng import make_generator
from .schemas import (
    AchievabilityDiagnostics,
    BayesLinearModel,
    BoundReport,
    EntropyEstimate,
    MaxEntDistribution,
    PredictionTrace,
    ReportFailure,
    ScenarioConfig,
    Trajectory,
    as_pnorm,
)

logger = logging.getLogger(__name__)

VALIDITY_SIGMAS = 3.0
STEADY_STATE_MIN_LENGTH = 200
RATE_SETTLED_TOL = 1e-9
MIN_SAMPLES_PER_WINDOW = 50
ESTIMATED_NOTE = "estimated, no validity guarantee"

Report = Union[BoundReport, ReportFailure]
PathLike = Union[str, Path]


def infer_mode(t: Trajectory) -> str:
    available = t.available
    if available.all():
        return "supervised"
    if not available.any():
        return "unsupervised"
    return "semi"


def pooled_bound(step_bounds: Sequence[float], p) -> float:
    """
    (mean_k b_k^p)^(1/p), the bound on the pooled empirical L_p norm implied
    by per-step bounds b_k; the largest b_k at p=inf.
    """
    p = as_pnorm(p)
    bounds = np.asarray(step_bounds, dtype=float)
    if math.isinf(p):
        return float(bounds.max())
    return maxent.empirical_lp_norm(bounds, p)


def bound_to_entropy(bound: float, p) -> float:
    """Entropy whose L_p bound equals ``bound``; -inf for a zero bound."""
    if bound <= 0:
        return -math.inf
    return math.log2(bound * maxent.lp_constant(p))


def oracle_step_entropies(t: Trajectory) -> Tuple[np.ndarray, str]:
    """
    Per-step h(y_k | available past labels, x_0..x_k) in bits.

    Supervised runs of at least STEADY_STATE_MIN_LENGTH steps switch to the
    stationary rate from the first step at which the Riccati variances have
    settled on it; earlier steps keep their finite-horizon entropies.
    """
    n = len(t)
    masked = not t.available.all()
    if t.innovation is not None and t.coeffs is not None and (not t.coeffs or not masked):
        # i.i.d. driving noise: the past pins down everything but w_k
        h = maxent.maxent_entropy(t.innovation.p, t.innovation.mu)
        return np.full(n, h), "oracle: innovation entropy"
    if t.model is None:
        raise OracleError(f"no closed-form entropy for a {t.generator_tag!r} trajectory")
    if t.innovation is not None and t.innovation.p != 2.0:
        raise OracleError("masked-label oracle entropies need Gaussian innovations")
    model = t.model
    if not t.available.any() and t.coeffs:
        # without any labels the AR state starts from its stationary law
        model = model.model_copy(update={"initial_state_cov": gaussian_oracle.stationary_state_covariance(model)})
    variances = gaussian_oracle.innovation_variances(model, n, t.label_mask)
    note = "oracle: finite horizon"
    if not masked and n >= STEADY_STATE_MIN_LENGTH:
        try:
            rate = gaussian_oracle.steady_state_innovation_variance(model)
        except OracleError as exc:
            logger.info("keeping finite-horizon entropies: %s", exc)
        else:
            unsettled = np.flatnonzero(np.abs(variances - rate) > RATE_SETTLED_TOL * max(rate, 1e-300))
            start = unsettled[-1] + 1 if unsettled.size else 0
            if start < n:
                logger.debug("innovation variance settles on the rate at step %d", start)
                variances[start:] = rate
                note = "oracle: steady-state rate"
    return np.array([gaussian_oracle.gaussian_entropy_bits(v) for v in variances]), note


def estimated_conditional_entropy(t: Trajectory, lag: int = estimators.DEFAULT_LAG,
                                  k: int = estimators.DEFAULT_K, workers: int = 1) -> EntropyEstimate:
    """k-NN estimate of h(y_k | y_{k-lag..k-1}, x_{k-lag..k})."""
    if not t.available.all():
        raise EstimatorError("estimated entropies need a fully labelled trajectory")
    if len(t) <= lag + k:
        raise EstimatorError(f"trajectory length {len(t)} must exceed lag + k = {lag + k}")
    past = estimators.lagged_windows(t.outputs, lag, include_current=False)
    inputs = estimators.lagged_windows(t.inputs, lag, include_current=True)
    return estimators.conditional_entropy(t.outputs[lag:], np.hstack([past, inputs]), k, workers)


def _check_aligned(t: Trajectory, trace: PredictionTrace) -> None:
    if len(trace) != len(t):
        raise ConfigurationError(f"trace has {len(trace)} steps, trajectory has {len(t)}")


def _equality_reference(h: float, p) -> Optional[MaxEntDistribution]:
    if not math.isfinite(h):
        return None
    return maxent.equality_case(h, p)


def _oracle_reference(t: Trajectory, p) -> Optional[MaxEntDistribution]:
    try:
        step_entropies, _ = oracle_step_entropies(t)
    except OracleError:
        return None
    p = as_pnorm(p)
    bound = pooled_bound([maxent.entropy_to_lp_bound(h, p) for h in step_entropies], p)
    return MaxEntDistribution(p=p, mu=bound) if bound > 0 else None


def bound_report(t: Trajectory, trace: PredictionTrace, p, entropy_source: str = "oracle", *,
                 lag: int = estimators.DEFAULT_LAG, k: int = estimators.DEFAULT_K,
                 mode: Optional[str] = None, scenario: str = "", seed: Optional[int] = None,
                 diagnostics: Optional[AchievabilityDiagnostics] = None,
                 workers: int = 1) -> BoundReport:
    """
    Entropy lower bound against the empirical L_p norm of the innovations.

    ``entropy_source`` is "oracle" (closed form from the generating process) or
    "estimated" (k-NN with ``lag`` windows). A -inf entropy yields bound 0.
    Diagnostics passed in get their density fit re-targeted at this report's
    equality-case law.
    """
    p = as_pnorm(p)
    _check_aligned(t, trace)
    if entropy_source == "oracle":
        step_entropies, note = oracle_step_entropies(t)
        bounds = [maxent.entropy_to_lp_bound(h, p) for h in step_entropies]
        lower_bound = pooled_bound(bounds, p)
        entropy = bound_to_entropy(lower_bound, p)
    elif entropy_source == "estimated":
        estimate = estimated_conditional_entropy(t, lag, k, workers)
        entropy, note = estimate.value, ESTIMATED_NOTE
        lower_bound = maxent.entropy_to_lp_bound(entropy, p)
    else:
        raise ConfigurationError(f"unknown entropy source {entropy_source!r}")
    if math.isinf(entropy):
        note += "; deterministic relation (entropy -inf, bound 0)"

    innovations = trace.innovations
    empirical = maxent.empirical_lp_norm(innovations, p)
    se = maxent.lp_norm_standard_error(innovations, p)
    gap = empirical - lower_bound
    valid = gap >= -VALIDITY_SIGMAS * se if entropy_source == "oracle" else None
    if valid is False:
        logger.warning("%s: empirical L_%s %.6g below oracle bound %.6g by more than %g SE",
                       trace.predictor_tag, p, empirical, lower_bound, VALIDITY_SIGMAS)
    if diagnostics is not None:
        diagnostics = with_density_fit(diagnostics, innovations, _equality_reference(entropy, p))
    return BoundReport(
        scenario=scenario,
        predictor=trace.predictor_tag,
        seed=t.seed if seed is None else seed,
        p=p,
        mode=mode or infer_mode(t),
        conditional_entropy=entropy,
        entropy_source=entropy_source,
        entropy_note=note,
        lower_bound=lower_bound,
        empirical_lp=empirical,
        monte_carlo_se=se,
        gap=gap,
        valid=valid,
        empirical_is_lower_estimate=math.isinf(p),
        n_steps=len(t),
        diagnostics=diagnostics,
    )


def density_fit_distance(innovations: np.ndarray, reference: MaxEntDistribution) -> float:
    """Kolmogorov-Smirnov sup-distance between the innovations and ``reference``."""
    return float(kstest(np.asarray(innovations, dtype=float), lambda x: maxent.cdf(reference, x)).statistic)


def with_density_fit(diagnostics: AchievabilityDiagnostics, innovations: np.ndarray,
                     reference: Optional[MaxEntDistribution]) -> AchievabilityDiagnostics:
    if reference is None:
        return diagnostics
    return diagnostics.model_copy(update={
        "density_reference": reference,
        "density_fit_distance": density_fit_distance(innovations, reference),
    })


def achievability_diagnostics(t: Trajectory, trace: PredictionTrace,
                              lag: int = estimators.DEFAULT_LAG, k: int = estimators.DEFAULT_K, *,
                              reference: Optional[MaxEntDistribution] = None, p=2.0,
                              shuffles: int = estimators.DEFAULT_SHUFFLES, seed: int = 0,
                              workers: int = 1) -> AchievabilityDiagnostics:
    """
    Estimated terms of the equality conditions.

    innovation_mi is I(e_k; e_{k-lag..k-1}); transfer_entropy and the directed
    information rate measure input-to-innovation flow; past_information is
    I(e_k; e_{k-lag..k-1}, x_{k-lag..k}), which the chain rule splits into
    the first two. Without ``reference`` the density fit targets the equality-case
    law of the oracle bound at ``p`` (mu = lower bound); a trajectory with no
    closed-form entropy falls back to the max-entropy law whose L_p norm
    matches the innovations.
    """
    _check_aligned(t, trace)
    n = len(t)
    required = MIN_SAMPLES_PER_WINDOW * (lag + 1)
    if n < required:
        raise EstimatorError(f"diagnostics at lag {lag} need at least {required} steps (got {n})")
    e = trace.innovations
    present = e[lag:]
    own_past = estimators.lagged_windows(e, lag, include_current=False)
    input_window = estimators.lagged_windows(t.inputs, lag, include_current=True)

    innovation_mi = estimators.mutual_information(present, own_past, k, workers)
    transfer = estimators.transfer_entropy(t.inputs, e, lag, k, workers)
    directed = estimators.directed_information_rate(t.inputs, e, lag, k, workers=workers)
    past_information = estimators.mutual_information(present, np.hstack([own_past, input_window]), k, workers)

    thresholds = {"innovation_mi": estimators.permutation_floor(present, own_past, k=k, shuffles=shuffles,
                                                                 seed=seed, workers=workers)}
    if input_window.shape[1]:
        floor = estimators.permutation_floor(present, input_window, own_past, k=k, shuffles=shuffles,
                                             seed=seed, workers=workers)
    else:
        floor = 0.0
    thresholds["transfer_entropy"] = floor
    thresholds["directed_information_rate"] = floor
    logger.debug("diagnostics for %s: mi=%.4g te=%.4g floors=%s",
                 trace.predictor_tag, innovation_mi.value, transfer.value, thresholds)

    if reference is None:
        reference = _oracle_reference(t, p)
    if reference is None:
        scale = maxent.empirical_lp_norm(e, p)
        reference = MaxEntDistribution(p=p, mu=scale) if scale > 0 else None
    return AchievabilityDiagnostics(
        innovation_mi=innovation_mi,
        transfer_entropy=transfer,
        directed_information_rate=directed,
        past_information=past_information,
        density_fit_distance=0.0 if reference is None else density_fit_distance(e, reference),
        density_reference=reference,
        zero_thresholds=thresholds,
        lag=lag,
        k=k,
    )


def scenario_trajectory(cfg: ScenarioConfig, seed: int, mode: str) -> Trajectory:
    """The trajectory a scenario unit scores, with the mode's label mask applied."""
    t = generate(cfg.process, cfg.length, seed)
    if mode == "semi":
        if cfg.masking.indices is not None:
            return mask_labels(t, indices=cfg.masking.indices)
        return mask_labels(t, missing_rate=cfg.masking.missing_rate, seed=seed)
    if mode == "unsupervised":
        return mask_labels(t, missing_rate=1.0, seed=seed)
    return t


def _run_unit(cfg: ScenarioConfig, seed: int, mode: str) -> List[Report]:
    """All reports for one (seed, mode); failures are recorded, never raised."""
    labels = [describe(spec) for spec in cfg.predictors]

    def failures(label, error, p_values=cfg.p_values):
        return [ReportFailure(scenario=cfg.name, predictor=label, seed=seed, p=p, mode=mode,
                              error=f"{type(error).__name__}: {error}") for p in p_values]

    try:
        t = scenario_trajectory(cfg, seed, mode)
    except (InfoBoundError, ValidationError, ValueError) as exc:
        logger.warning("scenario %s seed %d (%s): generation failed: %s", cfg.name, seed, mode, exc)
        return [failure for label in labels for failure in failures(label, exc)]

    reports: List[Report] = []
    for spec, label in zip(cfg.predictors, labels):
        try:
            trace = run_online(t, predictor_from_spec(spec, t))
        except (InfoBoundError, ValidationError, ValueError) as exc:
            logger.warning("scenario %s seed %d (%s): predictor %s failed: %s", cfg.name, seed, mode, label, exc)
            reports.extend(failures(label, exc))
            continue
        diagnostics = None
        if cfg.estimator.diagnostics:
            try:
                diagnostics = achievability_diagnostics(t, trace, cfg.estimator.lag, cfg.estimator.k,
                                                        shuffles=cfg.estimator.shuffles, seed=seed)
            except (InfoBoundError, ValueError) as exc:
                logger.warning("scenario %s: diagnostics skipped for %s: %s", cfg.name, label, exc)
        for p in cfg.p_values:
            try:
                reports.append(bound_report(t, trace, p, cfg.entropy_source, lag=cfg.estimator.lag,
                                            k=cfg.estimator.k, mode=mode, scenario=cfg.name, seed=seed,
                                            diagnostics=diagnostics))
            except (InfoBoundError, ValidationError, ValueError) as exc:
                logger.warning("scenario %s: report %s p=%s failed: %s", cfg.name, label, p, exc)
                reports.extend(failures(label, exc, [p]))
    return reports


def run_scenario(cfg: ScenarioConfig, workers: Optional[int] = None) -> List[Report]:
    """
    One report per (seed, mode, predictor, p), ordered by that key.

    Units keyed by (seed, mode) run concurrently when ``workers`` > 1.
    """
    if not cfg.predictors:
        return []
    units = [(seed, mode) for seed in cfg.seeds for mode in cfg.modes]
    workers = cfg.workers if workers is None else workers
    logger.info("running scenario %s: %d units, %d predictors, workers=%d",
                cfg.name, len(units), len(cfg.predictors), workers)
    if workers > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grouped = list(pool.map(lambda unit: _run_unit(cfg, *unit), units))
    else:
        grouped = [_run_unit(cfg, *unit) for unit in units]
    return [report for group in grouped for report in group]


def parse_learner(learner: str) -> Tuple[str, float]:
    """'bayes', 'zero' or 'ridge:<lambda>'."""
    name, _, argument = learner.partition(":")
    name = name.strip().lower()
    if name in ("bayes", "zero") and not argument:
        return name, 0.0
    if name == "ridge":
        try:
            strength = float(argument) if argument else 1.0
        except ValueError as exc:
            raise ConfigurationError(f"invalid ridge strength in {learner!r}") from exc
        if strength < 0:
            raise ConfigurationError("ridge strength must be non-negative")
        return name, strength
    raise ConfigurationError(f"unknown learner {learner!r} (expected bayes, zero or ridge:<lambda>)")


def _fit(kind: str, strength: float, model: BayesLinearModel, inputs: np.ndarray,
         outputs: np.ndarray) -> np.ndarray:
    d = model.input_dim
    if kind == "zero" or inputs.shape[0] == 0:
        return np.zeros(d)
    if kind == "bayes":
        mean, _ = gaussian_oracle.posterior(model, inputs, outputs)
        return mean
    if strength == 0:
        return np.linalg.lstsq(inputs, outputs, rcond=None)[0]
    return np.linalg.solve(inputs.T @ inputs + strength * np.eye(d), inputs.T @ outputs)


def _generalization_trial(model: BayesLinearModel, k: int, kind: str, strength: float, p,
                          seed: int, trial: int, missing_rate: float) -> Tuple[float, float]:
    data = gen_regression_batch(model, k, seed, trial=trial)
    labeled = np.ones(k, dtype=bool)
    if missing_rate > 0 and k:
        rng = make_generator(seed, "generalization-mask", trial)
        labeled[rng.choice(k, size=int(round(missing_rate * k)), replace=False)] = False
    weights = _fit(kind, strength, model, data.train_inputs[labeled], data.train_outputs[labeled])
    error = data.test_output - float(weights @ data.test_input)
    h = gaussian_oracle.generalization_conditional_entropy(model, data.train_inputs, data.test_input, labeled)
    return error, maxent.entropy_to_lp_bound(h, p)


def generalization_experiment(model: BayesLinearModel, k: int, learner: str = "bayes", trials: int = 1000,
                              p=2.0, seed: int = 0, *, missing_rate: float = 0.0, workers: int = 1,
                              scenario: str = "generalization") -> BoundReport:
    """
    Test error of a batch learner against the per-trial generalization bound.

    Each trial draws fresh weights, k training rows and a test pair. With
    ``missing_rate`` > 0 that share of training labels is hidden from both
    the learner and the bound. The reported bound is the power mean of the
    per-trial bounds, the quantity the pooled empirical L_p norm must exceed;
    mean and median of the per-trial bounds are reported alongside.
    """
    p = as_pnorm(p)
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1 (got {trials})")
    if not 0.0 <= missing_rate <= 1.0:
        raise ConfigurationError(f"missing_rate must be in [0, 1] (got {missing_rate})")
    kind, strength = parse_learner(learner)

    def trial(index):
        return _generalization_trial(model, k, kind, strength, p, seed, index, missing_rate)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(trial, range(trials)))
    else:
        results = [trial(index) for index in range(trials)]
    errors = np.array([error for error, _ in results])
    bounds = np.array([bound for _, bound in results])

    lower_bound = pooled_bound(bounds, p)
    empirical = maxent.empirical_lp_norm(errors, p)
    se = maxent.lp_norm_standard_error(errors, p)
    gap = empirical - lower_bound
    return BoundReport(
        scenario=scenario,
        predictor=learner,
        seed=seed,
        p=p,
        mode="generalization",
        conditional_entropy=bound_to_entropy(lower_bound, p),
        entropy_source="oracle",
        entropy_note="oracle: power mean of per-trial bounds",
        lower_bound=lower_bound,
        empirical_lp=empirical,
        monte_carlo_se=se,
        gap=gap,
        valid=gap >= -VALIDITY_SIGMAS * se,
        empirical_is_lower_estimate=math.isinf(p),
        n_steps=trials,
        bound_mean=float(bounds.mean()),
        bound_median=float(np.median(bounds)),
        error_mean=float(np.abs(errors).mean()),
        error_median=float(np.median(np.abs(errors))),
    )


def report_to_dict(report: Report) -> dict:
    data = json.loads(report.model_dump_json())
    data["status"] = "ok" if isinstance(report, BoundReport) else "failed"
    return data


def write_reports_json(reports: Iterable[Report], path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps([report_to_dict(r) for r in reports], indent=2) + "\n")
    return path


def read_reports_json(path: PathLike) -> List[Report]:
    path = Path(path)
    try:
        rows = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read reports {path}: {exc}") from exc
    if not isinstance(rows, list):
        raise ConfigurationError(f"{path}: expected a list of reports")
    reports: List[Report] = []
    try:
        for row in rows:
            status = row.pop("status", "ok")
            reports.append(BoundReport.model_validate(row) if status == "ok" else ReportFailure.model_validate(row))
    except (ValidationError, AttributeError) as exc:
        raise ConfigurationError(f"{path}: invalid report entry: {exc}") from exc
    return reports


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, FLOAT_FORMAT)
    return str(value)


CSV_COLUMNS = ["scenario", "predictor", "seed", "p", "mode", "status", "entropy", "entropy_source",
               "bound", "empirical", "se", "gap", "valid", "mi", "te", "error"]


def write_reports_csv(reports: Iterable[Report], path: PathLike) -> Path:
    """Flat table, one row per report or failure."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            if isinstance(r, ReportFailure):
                writer.writerow([_cell(v) for v in (r.scenario, r.predictor, r.seed, r.p, r.mode, "failed")]
                                + [""] * 9 + [r.error])
                continue
            d = r.diagnostics
            writer.writerow([_cell(v) for v in (
                r.scenario, r.predictor, r.seed, r.p, r.mode, "ok", r.conditional_entropy, r.entropy_source,
                r.lower_bound, r.empirical_lp, r.monte_carlo_se, r.gap, r.valid,
                None if d is None else d.innovation_mi.value,
                None if d is None else d.transfer_entropy.value, None,
            )])
    return path


def write_plot_data_csv(reports: Iterable[Report], path: PathLike) -> Path:
    """(bound, empirical) pairs per predictor and p, for external plotting."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["scenario", "predictor", "mode", "seed", "p", "lower_bound", "empirical_lp"])
        for r in reports:
            if isinstance(r, BoundReport):
                writer.writerow([_cell(v) for v in (r.scenario, r.predictor, r.mode, r.seed, r.p,
                                                    r.lower_bound, r.empirical_lp)])
    return path


def summary_table(reports: Sequence[Report]) -> str:
    """Fixed-width predictor x p table of bound, empirical norm and gap."""
    header = f"{'predictor':<36} {'mode':<12} {'seed':>5} {'p':>5} {'bound':>10} {'empirical':>10} {'gap':>10}"
    lines = [header, "-" * len(header)]
    for r in reports:
        p = _cell(r.p)
        if isinstance(r, ReportFailure):
            lines.append(f"{r.predictor:<36} {r.mode:<12} {_cell(r.seed):>5} {p:>5} FAILED: {r.error}")
        else:
            lines.append(f"{r.predictor:<36} {r.mode:<12} {_cell(r.seed):>5} {p:>5} "
                         f"{r.lower_bound:>10.4f} {r.empirical_lp:>10.4f} {r.gap:>10.4f}")
    return "\n".join(lines)
