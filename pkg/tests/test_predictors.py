"""
Tests for the online prediction protocol and the baseline learners.
"""
import logging

import numpy as np
import pytest
from filterpy.kalman import KalmanFilter

from infobound import gaussian_oracle, predictors
from infobound.errors import ConfigurationError, PredictorError
from infobound.processes import gen_ar, gen_lgssm, mask_labels
from infobound.rng import make_generator
from infobound.schemas import LinearGaussianModel, MaxEntDistribution, PredictorSpec, Trajectory

GAUSSIAN = MaxEntDistribution(p=2, mu=1.0)


def input_driven_model():
    return LinearGaussianModel(
        state_transition=[[0.8]], state_noise_cov=[[0.5]], output_map=[[1.0]], output_noise_var=0.2,
        initial_state_cov=[[0.5 / 0.36]], input_map=[[1.0]], output_input_map=[[0.5]],
    )


def regression_trajectory(n=4000, weights=(1.5, -2.0, 0.5), noise_std=0.1, seed=0):
    rng = make_generator(seed, "regression-trajectory")
    inputs = rng.standard_normal((n, len(weights)))
    outputs = inputs @ np.asarray(weights) + noise_std * rng.standard_normal(n)
    return Trajectory(inputs=inputs, outputs=outputs)


def mse(trace):
    return float(np.mean(trace.innovations ** 2))


class SpyPredictor(predictors.OnlinePredictor):
    """Records everything the protocol hands over."""

    tag = "spy"

    def __init__(self):
        self.events = []

    def start(self, input_dim, history=()):
        self.events.append(("start", input_dim, list(history)))

    def predict(self, x):
        self.events.append(("predict", np.array(x)))
        return 0.0

    def update(self, x, y):
        self.events.append(("update", y))


class NanPredictor(predictors.ZeroPredictor):
    def predict(self, x):
        return float("nan")


class TestProtocol:
    """Test run_online."""

    def test_labels_revealed_after_prediction(self):
        t = mask_labels(gen_ar([0.5], GAUSSIAN, 6, seed=0), indices=[2])
        spy = SpyPredictor()
        trace = predictors.run_online(t, spy)
        assert spy.events[0] == ("start", 0, list(t.history))
        kinds = [event[0] for event in spy.events[1:]]
        assert kinds == ["predict", "update"] * 6
        revealed = [event[1] for event in spy.events if event[0] == "update"]
        assert revealed[2] is None
        assert revealed[3] == t.outputs[3]
        np.testing.assert_array_equal(trace.innovations, t.outputs)

    def test_non_finite_prediction(self):
        t = gen_ar([0.5], GAUSSIAN, 5, seed=0)
        with pytest.raises(PredictorError):
            predictors.run_online(t, NanPredictor())

    def test_zero_predictor_innovations_are_outputs(self):
        t = gen_ar([0.5], GAUSSIAN, 50, seed=1)
        trace = predictors.run_online(t, predictors.zero_predictor())
        np.testing.assert_array_equal(trace.predictions, 0.0)
        assert trace.predictor_tag == "zero"

    def test_unsupervised_run_gets_no_history(self):
        t = mask_labels(gen_ar([0.5], GAUSSIAN, 6, seed=0), missing_rate=1.0)
        spy = SpyPredictor()
        predictors.run_online(t, spy)
        assert spy.events[0] == ("start", 0, [])
        assert all(event[1] is None for event in spy.events if event[0] == "update")


class TestAutoregressivePredictors:
    """Test the plug-in and Kalman predictors on AR trajectories."""

    def test_plug_in_recovers_true_innovations(self):
        t = gen_ar([0.5, -0.3], GAUSSIAN, 1000, seed=2)
        trace = predictors.run_online(t, predictors.ar_predictor(t.coeffs))
        np.testing.assert_allclose(trace.innovations, t.true_innovations, atol=1e-12)

    def test_kalman_on_companion_form_matches_plug_in(self):
        t = gen_ar([0.5, -0.3], GAUSSIAN, 1000, seed=3)
        plug_in = predictors.run_online(t, predictors.ar_predictor(t.coeffs))
        kalman = predictors.run_online(t, predictors.kalman_predictor(t.model, companion_history=True))
        np.testing.assert_allclose(kalman.predictions, plug_in.predictions, atol=1e-9)

    def test_masked_labels_increase_error(self):
        t = gen_ar([0.9], GAUSSIAN, 20000, seed=4)
        supervised = predictors.run_online(t, predictors.kalman_predictor(t.model, companion_history=True))
        semi = mask_labels(t, missing_rate=0.5, seed=4)
        masked = predictors.run_online(semi, predictors.kalman_predictor(t.model, companion_history=True))
        assert mse(masked) > 1.2 * mse(supervised)

    def test_plug_in_imputes_masked_labels(self):
        t = mask_labels(gen_ar([0.5], GAUSSIAN, 4, seed=5), indices=[1])
        trace = predictors.run_online(t, predictors.ar_predictor([0.5]))
        # y_1 is replaced by its own prediction 0.5 y_0
        assert trace.predictions[2] == pytest.approx(0.25 * t.outputs[0])

    def test_mismatched_residuals_are_correlated(self):
        t = gen_ar([0.9], GAUSSIAN, 20000, seed=6)
        trace = predictors.run_online(t, predictors.mismatched_kalman(t.model, 0.5, companion_history=True))
        e = trace.innovations
        expected = gaussian_oracle.residual_autocovariance(0.9, 0.5, 1.0, 1)
        assert np.corrcoef(e[1:], e[:-1])[0, 1] == pytest.approx(expected[1] / expected[0], abs=0.03)

    def test_mismatched_shape(self):
        t = gen_ar([0.5, -0.3], GAUSSIAN, 10, seed=0)
        with pytest.raises(ConfigurationError):
            predictors.mismatched_kalman(t.model, np.eye(3))


class TestKalmanWithInputs:
    """Test the Kalman predictor on an input-driven state-space model."""

    def setup_method(self):
        self.model = input_driven_model()
        self.t = gen_lgssm(self.model, None, 20000, seed=7)

    def test_innovation_variance_matches_riccati(self):
        trace = predictors.run_online(self.t, predictors.kalman_predictor(self.model))
        expected = gaussian_oracle.innovation_variances(self.model, len(self.t)).mean()
        assert mse(trace) == pytest.approx(expected, rel=0.05)

    def test_ignoring_inputs_costs_accuracy(self):
        informed = predictors.run_online(self.t, predictors.kalman_predictor(self.model))
        blind = predictors.run_online(self.t, predictors.kalman_predictor(self.model, use_inputs=False))
        assert mse(blind) > 1.2 * mse(informed)

    def test_input_dimension_mismatch(self):
        t = gen_ar([0.5], GAUSSIAN, 10, seed=0)
        with pytest.raises(ConfigurationError):
            predictors.run_online(t, predictors.kalman_predictor(self.model))

    def test_released_filter_signature(self, monkeypatch):
        def released(dim_x, dim_z, dim_u=0):
            return KalmanFilter(dim_x, dim_z, dim_u)

        monkeypatch.setattr(predictors, "KalmanFilter", released)
        t = gen_lgssm(self.model, None, 200, seed=7)
        for predictor in (predictors.kalman_predictor(self.model),
                          predictors.kalman_predictor(self.model, use_inputs=False),
                          predictors.mismatched_kalman(self.model, 0.5)):
            trace = predictors.run_online(t, predictor)
            assert np.all(np.isfinite(trace.predictions))


class TestCausality:
    """Predictions up to step k never depend on labels from step k on."""

    def setup_method(self):
        self.model = input_driven_model()
        self.t = gen_lgssm(self.model, None, 300, seed=8)

    @pytest.mark.parametrize("make", [
        lambda model: predictors.zero_predictor(),
        lambda model: predictors.ar_predictor([0.8]),
        predictors.kalman_predictor,
        lambda model: predictors.kalman_predictor(model, use_inputs=False),
        lambda model: predictors.mismatched_kalman(model, 0.5),
        lambda model: predictors.rls_predictor(1, forgetting=0.99, lags=1),
        lambda model: predictors.lms_predictor(1, step_size=0.05, lags=1),
    ])
    @pytest.mark.parametrize("k", [0, 17, 150])
    def test_future_labels_are_unseen(self, make, k):
        altered = self.t.outputs.copy()
        altered[k:] = make_generator(k, "altered-labels").uniform(-1e3, 1e3, altered.size - k)
        other = self.t.model_copy(update={"outputs": altered})
        original = predictors.run_online(self.t, make(self.model))
        changed = predictors.run_online(other, make(self.model))
        np.testing.assert_array_equal(original.predictions[:k + 1], changed.predictions[:k + 1])


class TestAdaptiveFilters:
    """Test RLS and normalized LMS."""

    def setup_method(self):
        self.t = regression_trajectory()
        self.weights = np.array([1.5, -2.0, 0.5])

    def test_rls_converges(self):
        rls = predictors.rls_predictor(3)
        predictors.run_online(self.t, rls)
        np.testing.assert_allclose(rls.weights, self.weights, atol=0.01)

    def test_rls_with_forgetting_and_ridge(self):
        rls = predictors.rls_predictor(3, forgetting=0.99, ridge=1.0)
        predictors.run_online(self.t, rls)
        np.testing.assert_allclose(rls.weights, self.weights, atol=0.05)

    def test_lms_converges(self):
        lms = predictors.lms_predictor(3, step_size=0.5)
        predictors.run_online(self.t, lms)
        np.testing.assert_allclose(lms.weights, self.weights, atol=0.15)

    def test_rls_lag_features(self):
        t = gen_ar([0.8], GAUSSIAN, 5000, seed=8)
        rls = predictors.rls_predictor(0, lags=1)
        predictors.run_online(t, rls)
        assert rls.weights[0] == pytest.approx(0.8, abs=0.04)

    def test_lms_divergence(self, caplog):
        with caplog.at_level(logging.WARNING, logger="infobound.predictors"):
            lms = predictors.lms_predictor(3, step_size=4.0)
            with pytest.raises(PredictorError):
                predictors.run_online(self.t, lms)
        assert "outside the stable range" in caplog.text
        assert "diverged" in caplog.text

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            predictors.rls_predictor(3, forgetting=0.0)
        with pytest.raises(ConfigurationError):
            predictors.rls_predictor(3, ridge=-1.0)
        with pytest.raises(ConfigurationError):
            predictors.lms_predictor(3, step_size=0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            predictors.run_online(self.t, predictors.rls_predictor(2))


class TestPredictorFromSpec:
    """Test predictor_from_spec and describe."""

    def setup_method(self):
        self.ar = gen_ar([0.9], GAUSSIAN, 50, seed=0)

    def test_labels(self):
        assert predictors.describe(PredictorSpec(tag="zero")) == "zero"
        assert predictors.describe(PredictorSpec(tag="lms", params={"step_size": 0.5, "lags": 1})) == \
            "lms(lags=1,step_size=0.5)"
        assert predictors.describe(PredictorSpec(tag="lms", name="slow", params={"step_size": 0.1})) == "slow"

    def test_builds_each_tag(self):
        specs = [
            PredictorSpec(tag="zero"),
            PredictorSpec(tag="ar"),
            PredictorSpec(tag="kalman"),
            PredictorSpec(tag="mismatched_kalman", params={"state_transition": 0.5}),
            PredictorSpec(tag="rls", params={"lags": 1}),
            PredictorSpec(tag="lms", params={"step_size": 0.5, "lags": 1}),
        ]
        for spec in specs:
            trace = predictors.run_online(self.ar, predictors.predictor_from_spec(spec, self.ar))
            assert trace.predictor_tag == predictors.describe(spec)
            assert np.all(np.isfinite(trace.predictions))

    def test_ar_spec_uses_trajectory_coefficients(self):
        plug_in = predictors.predictor_from_spec(PredictorSpec(tag="ar"), self.ar)
        trace = predictors.run_online(self.ar, plug_in)
        np.testing.assert_allclose(trace.innovations, self.ar.true_innovations, atol=1e-12)

    def test_configuration_errors(self):
        external = Trajectory(inputs=np.zeros((5, 0)), outputs=np.ones(5))
        with pytest.raises(ConfigurationError):
            predictors.predictor_from_spec(PredictorSpec(tag="oracle"), self.ar)
        with pytest.raises(ConfigurationError):
            predictors.predictor_from_spec(PredictorSpec(tag="lms"), self.ar)
        with pytest.raises(ConfigurationError):
            predictors.predictor_from_spec(PredictorSpec(tag="kalman"), external)
        with pytest.raises(ConfigurationError):
            predictors.predictor_from_spec(PredictorSpec(tag="ar"), external)
        with pytest.raises(ConfigurationError):
            predictors.predictor_from_spec(PredictorSpec(tag="rls", params={"forgetting": "fast"}), self.ar)


class TestTraceFiles:
    """Test trace CSV files."""

    def test_trace_csv(self, tmp_path):
        t = gen_ar([0.5], GAUSSIAN, 30, seed=1)
        trace = predictors.run_online(t, predictors.ar_predictor([0.5]))
        path = predictors.write_trace_csv(t, trace, tmp_path / "trace.csv")
        loaded = predictors.read_trace_csv(path, predictor_tag="ar")
        np.testing.assert_array_equal(loaded.predictions, trace.predictions)
        np.testing.assert_array_equal(loaded.innovations, trace.innovations)
        assert predictors.read_trace_csv(path).predictor_tag == "trace"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("step,y\n0,1\n")
        with pytest.raises(ConfigurationError):
            predictors.read_trace_csv(path)
