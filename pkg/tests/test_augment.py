import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incstab.augment import (
    AugmentedSystem,
    augment_gas,
    augment_iss,
    disturbance_signal,
    integrate_augmented,
    sat,
)
from incstab.comparison import KInfFn
from incstab.errors import SignalError
from incstab.metric import Euclidean, Pullback
from incstab.sets import Ball, Box
from incstab.system import ControlSystem, InputSignal, constant_signal, integrate, random_signal

RHO16 = KInfFn.linear(1 / 16)


def _grid_argmin(u, U, per_axis=401):
    """Oracle: nearest point of U among a dense grid of its bounding box."""
    lo, hi = U.bounds()
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)))
    pts = pts[U.contains(pts)]
    return pts[np.argmin(np.linalg.norm(pts - u, axis=1))]


class TestSat:
    def test_box_clamp(self):
        U = Box.cube(-1, 1, 1)
        assert sat(np.array([1.5]), U)[0] == 1.0
        np.testing.assert_allclose(_grid_argmin(np.array([1.5]), U), [1.0])

    def test_ball_radial(self):
        U = Ball(2.0, 2)
        np.testing.assert_allclose(sat(np.array([3.0, 4.0]), U), [1.2, 1.6])
        np.testing.assert_allclose(_grid_argmin(np.array([3.0, 4.0]), U), [1.2, 1.6], atol=1e-2)

    def test_identity_inside(self):
        u = np.array([0.3, -0.2])
        assert np.array_equal(sat(u, Box.cube(-1, 1, 2)), u)
        assert np.array_equal(sat(u, Ball(1.0, 2)), u)
        assert np.array_equal(sat(np.zeros(2), Ball(1.0, 2)), np.zeros(2))

    @pytest.mark.parametrize("U", [Box([-1.0, 0.0], [2.0, 0.5]), Ball(0.7, 2)])
    def test_idempotent(self, U, rng):
        u = rng.normal(scale=3, size=(1000, 2))
        s = sat(u, U)
        assert np.array_equal(sat(s, U), s)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.sampled_from(["box", "ball"]))
def test_sat_nonexpansive_property(vals, kind):
    U = Box([-1.0, 0.0], [2.0, 0.5]) if kind == "box" else Ball(0.7, 2)
    a, b = np.array(vals).reshape(2, 2)
    assert np.linalg.norm(sat(a, U) - sat(b, U)) <= np.linalg.norm(a - b) + 1e-12


class TestGasMode:
    def test_field(self, linear):
        a = augment_gas(linear)
        assert a.n == 2 and a.m == 1
        assert a.to_dict()["field"] == ["-x1+u1", "-x2+u1"]
        np.testing.assert_array_equal(a.f(np.array([0.5, -1.0]), np.array([0.2])), [-0.3, 1.2])

    def test_decoupling_bitwise(self, linear, rng):
        sig = random_signal(linear.input_set, 3.0, 0.5, rng)
        run = integrate_augmented(augment_gas(linear), [0.4, -1.3], sig, 3.0, 1e-3, Euclidean())
        a = integrate(linear, [0.4], sig, 3.0)
        b = integrate(linear, [-1.3], sig, 3.0)
        assert np.array_equal(run.trajectory.x[:, :1], a.x)
        assert np.array_equal(run.trajectory.x[:, 1:], b.x)

    def test_trace_decays(self, decay):
        run = integrate_augmented(augment_gas(decay), [0.0, 2.0], None, 5.0, 1e-3, Euclidean())
        np.testing.assert_allclose(run.diagonal_distance, 2 * np.exp(-run.trajectory.t), atol=1e-10)

    def test_json_is_plain_system(self, linear):
        d = augment_gas(linear).to_dict()
        back = ControlSystem.from_dict(d)
        assert back.n == 2
        assert AugmentedSystem.from_dict(d).mode == "gas"


class TestIssMode:
    def test_hand_evaluated_field(self, linear):
        a = augment_iss(linear, Euclidean(), RHO16)
        u1, u2 = a.inputs(np.array([0.0, 2.0]), np.array([0.0, 1.0]))
        assert u1[0] == 0.125 and u2[0] == -0.125
        np.testing.assert_array_equal(a.f(np.array([0.0, 2.0]), np.array([0.0, 1.0])), [0.125, -2.125])

    def test_input_set_is_U_times_ball(self, linear):
        a = augment_iss(linear, Euclidean(), RHO16)
        assert a.m == 2
        assert bool(a.input_set.contains([1.0, -1.0]))
        assert not bool(a.input_set.contains([1.0, 1.1]))

    def test_zero_disturbance_reduces_to_gas(self, linear, rng):
        w1 = random_signal(linear.input_set, 2.0, 0.5, rng)
        w = InputSignal(np.concatenate([w1.values, np.zeros_like(w1.values)], axis=1), 0.5)
        iss = integrate_augmented(augment_iss(linear, Euclidean(), RHO16), [1.0, -1.0], w, 2.0)
        gas = integrate_augmented(augment_gas(linear), [1.0, -1.0], w1, 2.0, d=Euclidean())
        np.testing.assert_array_equal(iss.trajectory.x, gas.trajectory.x)

    def test_rejects_signal_outside_D(self, linear):
        a = augment_iss(linear, Euclidean(), RHO16)
        with pytest.raises(SignalError):
            integrate_augmented(a, [0.0, 1.0], constant_signal([0.0, 1.5], 1.0), 1.0)

    def test_saturation_active(self, linear):
        # inputs leave U before saturation: sat keeps them in [-1, 1]
        a = augment_iss(linear, Euclidean(), KInfFn.linear(10.0))
        u1, u2 = a.inputs(np.array([0.0, 2.0]), np.array([0.5, 1.0]))
        assert u1[0] == 1.0 and u2[0] == -1.0

    def test_json_exposes_construction(self, linear):
        d = augment_iss(linear, Euclidean(), RHO16).to_dict()
        assert d["field"] == ["-x1+sat([u1 + rho_dist*u2])[1]", "-x2+sat([u1 - rho_dist*u2])[1]"]
        assert d["construction"]["rho"] == {"family": "linear", "c": 0.0625}
        back = AugmentedSystem.from_dict(d)
        z, w = np.array([0.3, -0.4]), np.array([0.2, 0.5])
        np.testing.assert_array_equal(back.f(z, w), augment_iss(linear, Euclidean(), RHO16).f(z, w))

    def test_needs_inputs(self, decay):
        with pytest.raises(Exception):
            augment_iss(decay, Euclidean(), RHO16)


@pytest.mark.parametrize("mode", ["gas", "iss"])
def test_diagonal_invariance(mode, rng):
    sys2 = ControlSystem.from_strings(["-x1 + x2*u1", "-x2 - x1^3 + u2"], Ball(1.0, 2))
    d = Pullback.from_strings(["exp(x1)", "x2"])
    a = augment_gas(sys2) if mode == "gas" else augment_iss(sys2, d, KInfFn.linear(0.2))
    x0 = rng.uniform(-1, 1, (8, 2))
    z0 = np.concatenate([x0, x0], axis=1)
    if mode == "gas":
        sig = random_signal(sys2.input_set, 3.0, 0.5, rng, batch=8)
    else:
        sig = disturbance_signal(a, 3.0, 0.5, rng, batch=8)
    run = integrate_augmented(a, z0, sig, 3.0, 1e-3, d)
    assert np.max(run.diagonal_distance) <= 1e-9
