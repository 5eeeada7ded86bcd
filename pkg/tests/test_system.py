import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incstab.errors import DimensionError, DivergenceError, SignalError
from incstab.sets import Ball, Box
from incstab.system import (
    ControlSystem,
    InputSignal,
    constant_signal,
    integrate,
    lipschitz_estimate,
    random_signal,
    sup_norm_diff,
)


class TestControlSystem:
    def test_json_round_trip(self, linear):
        back = ControlSystem.from_dict(linear.to_dict())
        assert back.to_dict() == linear.to_dict()
        assert linear.to_dict() == {
            "name": "linear",
            "state_dim": 1,
            "input_dim": 1,
            "input_set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
            "field": ["-x1+u1"],
        }

    def test_ball_input_set(self):
        s = ControlSystem.from_dict(
            {"state_dim": 2, "input_dim": 2, "input_set": {"type": "ball", "radius": 2.0}, "field": ["u1", "u2"]}
        )
        assert isinstance(s.input_set, Ball) and s.input_set.dim == 2

    def test_field_dimension_errors(self):
        with pytest.raises(DimensionError):
            ControlSystem.from_dict({"state_dim": 2, "input_dim": 0, "field": ["-x1"]})
        with pytest.raises(DimensionError):
            ControlSystem.from_strings(["-x1 + u2"], Box.cube(-1, 1, 1))
        with pytest.raises(DimensionError):
            ControlSystem.from_strings(["-x1 + y1"])

    def test_batched_field(self, linear):
        x = np.array([[1.0], [2.0]])
        u = np.array([[0.5], [0.0]])
        np.testing.assert_array_equal(linear.f(x, u), [[-0.5], [-2.0]])


class TestIntegrate:
    def test_exponential_decay(self, decay):
        tr = integrate(decay, [1.0], None, horizon=1.0, step=1e-3)
        assert tr.x[-1, 0] == pytest.approx(np.exp(-1), abs=1e-6)
        assert tr.x[0, 0] == 1.0
        assert tr.t.shape == (1001,)

    def test_drift(self, drift):
        tr = integrate(drift, [0.0], constant_signal([0.5], 2.0), horizon=2.0)
        assert tr.x[-1, 0] == pytest.approx(-1.0, abs=1e-9)

    def test_blow_up(self):
        sq = ControlSystem.from_strings(["x1^2"])
        with pytest.raises(DivergenceError) as info:
            integrate(sq, [1.0], None, horizon=2.0)
        assert info.value.time == pytest.approx(1.0, abs=0.01)

    def test_horizon_not_multiple(self, decay):
        with pytest.raises(ValueError):
            integrate(decay, [1.0], None, horizon=1.0005, step=1e-3)

    def test_signal_too_short(self, linear):
        with pytest.raises(SignalError):
            integrate(linear, [0.0], constant_signal([0.1], 1.0, 0.5), horizon=2.0)

    def test_signal_outside_U(self, linear):
        with pytest.raises(SignalError):
            integrate(linear, [0.0], constant_signal([1.5], 1.0), horizon=1.0)

    def test_signal_grid_not_multiple_of_step(self, linear):
        with pytest.raises(SignalError):
            integrate(linear, [0.0], InputSignal(np.zeros((10, 1)), 0.00015), horizon=1e-3, step=1e-4)

    def test_piecewise_constant_input(self, linear):
        # closed form for u = 1 on [0, 1) and u = -1 on [1, 2)
        sig = InputSignal([[1.0], [-1.0]], 1.0)
        tr = integrate(linear, [0.0], sig, horizon=2.0)
        x1 = 1 - np.exp(-1)
        expected = -1 + (x1 + 1) * np.exp(-1)
        assert tr.x[-1, 0] == pytest.approx(expected, abs=1e-10)

    def test_rk4_order(self, linear):
        # oracle: closed form x(t) = u + (x0 - u) e^{-t}
        exact = 0.3 + (1.0 - 0.3) * np.exp(-2.0)
        errs = []
        for h in (0.1, 0.05):
            tr = integrate(linear, [1.0], constant_signal([0.3], 2.0), horizon=2.0, step=h)
            errs.append(abs(tr.x[-1, 0] - exact))
        assert 12 <= errs[0] / errs[1] <= 20

    def test_repeatable(self, linear, rng):
        sig = random_signal(linear.input_set, 3.0, 0.5, rng)
        a = integrate(linear, [0.4], sig, horizon=3.0)
        b = integrate(linear, [0.4], sig, horizon=3.0)
        assert np.array_equal(a.x, b.x)

    def test_batch_matches_single(self, linear, rng):
        sig = random_signal(linear.input_set, 2.0, 0.5, rng, batch=3)
        x0 = np.array([[0.1], [1.0], [-2.0]])
        batch = integrate(linear, x0, sig, horizon=2.0)
        for i in range(3):
            one = integrate(linear, x0[i], InputSignal(sig.values[:, i], 0.5), horizon=2.0)
            np.testing.assert_array_equal(batch.x[:, i], one.x)

    def test_csv(self, decay, tmp_path):
        tr = integrate(decay, [1.0], None, horizon=0.01, step=1e-3)
        tr.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,x1"
        assert len(lines) == 12
        assert lines[1] == "0.0,1.0"


class TestSignals:
    def test_sup_norm_examples(self):
        a = InputSignal([[0.3], [-0.5]], 1.0)
        b = InputSignal([[0.0], [0.0]], 1.0)
        assert sup_norm_diff(a, b) == 0.5
        assert sup_norm_diff(a, a) == 0.0
        assert sup_norm_diff(InputSignal([[1.0, 0.0]], 1.0), InputSignal([[0.0, 1.0]], 1.0)) == pytest.approx(np.sqrt(2))

    def test_grid_mismatch(self):
        with pytest.raises(SignalError):
            sup_norm_diff(InputSignal([[0.0]], 1.0), InputSignal([[0.0]], 0.5))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["box", "ball"]))
    def test_sampled_signals_stay_in_U(self, seed, kind):
        U = Box([-1.0, 0.0], [2.0, 0.5]) if kind == "box" else Ball(0.7, 2)
        sig = random_signal(U, 5.0, 0.25, np.random.default_rng(seed), batch=4)
        assert np.all(U.contains(sig.values))


class TestLipschitz:
    def test_linear(self, decay):
        assert lipschitz_estimate(decay, Box.cube(-1, 1, 1)) == pytest.approx(1.0, rel=0.05)

    def test_constant(self):
        assert lipschitz_estimate(ControlSystem.from_strings(["-1"]), Box.cube(-1, 1, 1)) == 0.0

    def test_square(self):
        sq = ControlSystem.from_strings(["x1^2"])
        assert lipschitz_estimate(sq, Box.cube(-1, 1, 1)) == pytest.approx(2.0, rel=0.05)

    def test_needs_samples(self, decay):
        with pytest.raises(ValueError):
            lipschitz_estimate(decay, Box.cube(-1, 1, 1), samples=10)
