import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ropecloth.forces_kinematics import (ForceConfigError, Gravity, KinematicDriver, LateralSpring, RelativeDamping,
                                         RestAngle, Wind, eval_external_forces, sample_driver, total_gravity,
                                         validate_force_specs)
from ropecloth.rope_core import RopeChain


def two_chains(rng, m=3):
    out = []
    for c in range(2):
        x = np.array([[float(c), -0.3 * k, 0.0] for k in range(m + 1)])
        out.append(RopeChain.from_positions(x, mass=rng.uniform(0.5, 2.0, size=m), velocities=rng.normal(size=(m + 1, 3))))
    return out


def test_gravity_only(rng):
    chains = two_chains(rng)
    f = eval_external_forces(chains, [Gravity((0.0, -9.81, 0.0))])
    for ch, fc in zip(chains, f):
        np.testing.assert_array_equal(fc[1:], ch.mass[1:, None] * np.array([0.0, -9.81, 0.0]))
        assert np.all(fc[0] == 0.0)
    np.testing.assert_array_equal(total_gravity([Gravity((0, -9.81, 0)), Gravity((1, 0, 0), chains=(0,))]),
                                  [0.0, -9.81, 0.0])


def test_wind_matching_velocity_is_zero(rng):
    chains = two_chains(rng)
    wv = (0.4, 0.0, -1.0)
    for ch in chains:
        ch.v[:] = wv
    f = eval_external_forces(chains, [Wind(3.0, wv)])
    assert all(np.all(fc == 0.0) for fc in f)


def test_wind_drag_and_chain_selection(rng):
    chains = two_chains(rng)
    f = eval_external_forces(chains, [Wind(2.0, (1.0, 0.0, 0.0), chains=(1,))])
    assert np.all(f[0] == 0.0)
    np.testing.assert_allclose(f[1][1:], -2.0 * (chains[1].v[1:] - [1.0, 0.0, 0.0]))


def test_lateral_spring_hooke(rng):
    chains = two_chains(rng)
    rest = float(np.linalg.norm(chains[1].x[2] - chains[0].x[2]))
    spring = LateralSpring((0, 2), (1, 2), 50.0, rest)
    f = eval_external_forces(chains, [spring])
    assert np.all(f[0] == 0.0) and np.all(f[1] == 0.0)
    delta = 0.02
    chains[1].x[2] += [delta, 0.0, 0.0]  # bones lie along x, so this stretches by delta
    f = eval_external_forces(chains, [spring])
    np.testing.assert_allclose(f[0][2], [50.0 * delta, 0.0, 0.0], rtol=1e-12)
    np.testing.assert_array_equal(f[0][2], -f[1][2])


@given(st.integers(0, 10**6))
def test_lateral_springs_sum_to_zero(seed):
    r = np.random.default_rng(seed)
    chains = two_chains(r, 4)
    for ch in chains:
        ch.x[1:] += r.normal(scale=0.2, size=ch.x[1:].shape)
    specs = [LateralSpring((0, int(r.integers(1, 5))), (1, int(r.integers(1, 5))), float(r.uniform(0, 100)),
                           float(r.uniform(0, 2))) for _ in range(3)]
    f = eval_external_forces(chains, specs)
    total = f[0].sum(axis=0) + f[1].sum(axis=0)
    # each pair adds +f and -f to the same totals, so the sum cancels exactly per spring
    per_spring = [eval_external_forces(chains, [s]) for s in specs]
    for fs in per_spring:
        assert np.array_equal(fs[0].sum(axis=0) + fs[1].sum(axis=0), np.zeros(3))
    np.testing.assert_allclose(total, 0.0, atol=1e-12)


@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_forces_are_homogeneous_in_their_coefficients(seed, c):
    r = np.random.default_rng(seed)
    chains = two_chains(r)
    for cls in (Wind, RelativeDamping):
        one = eval_external_forces(chains, [cls(c)])
        two = eval_external_forces(chains, [cls(2.0 * c)])
        for a, b in zip(one, two):
            np.testing.assert_allclose(b, 2.0 * a, rtol=1e-14, atol=1e-300)


def test_relative_damping_acts_on_child_only(rng):
    chains = two_chains(rng)
    f = eval_external_forces(chains, [RelativeDamping(0.5)])
    for ch, fc in zip(chains, f):
        np.testing.assert_allclose(fc[1:], -0.5 * (ch.v[1:] - ch.v[:-1]))
        assert np.all(fc[0] == 0.0)


def test_validation_errors():
    sizes = [4, 4]
    validate_force_specs([Gravity(), Wind(1.0), RelativeDamping(0.1), LateralSpring((0, 1), (1, 3), 1.0, 0.1)],
                         sizes)
    bad = [RestAngle(), Wind(-1.0), RelativeDamping(-0.1), Gravity(chains=(2,)),
           LateralSpring((0, 0), (1, 1), 1.0, 0.1), LateralSpring((0, 1), (1, 4), 1.0, 0.1),
           LateralSpring((0, 1), (1, 1), -1.0, 0.1), LateralSpring((0, 1), (1, 1), 1.0, -0.1)]
    for spec in bad:
        with pytest.raises(ForceConfigError):
            validate_force_specs([spec], sizes)


# -- driver ------------------------------------------------------------------------------------

def test_constant_driver():
    d = KinematicDriver.fixed([1.0, 2.0, 3.0])
    x, v, a = sample_driver(d, 0.7, 0.01)
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])
    assert np.all(v == 0.0) and np.all(a == 0.0)
    d = KinematicDriver([0.0, 1.0, 2.0], [[1, 2, 3]] * 3)
    x, v, a = sample_driver(d, 1.3, 0.01)
    np.testing.assert_allclose(v, 0.0, atol=1e-12)
    np.testing.assert_allclose(a, 0.0, atol=1e-9)


def test_linear_driver():
    u = np.array([0.5, -1.0, 2.0])
    d = KinematicDriver.from_function(lambda t: u * t, 0.0, 2.0, 5)
    x, v, a = sample_driver(d, 0.9, 1.0 / 60.0)
    np.testing.assert_allclose(x, 0.9 * u, atol=1e-12)
    np.testing.assert_allclose(v, u, atol=1e-9)
    np.testing.assert_allclose(a, 0.0, atol=1e-9)


def test_quadratic_driver_recovers_acceleration():
    acc = np.array([0.0, -3.0, 1.5])
    d = KinematicDriver.from_function(lambda t: 0.5 * acc * t * t, 0.0, 2.0, 7)
    for t in (0.3, 1.0, 1.7):
        _, v, a = sample_driver(d, t, 1.0 / 120.0)
        np.testing.assert_allclose(a, acc, rtol=1e-6)
        np.testing.assert_allclose(v, acc * t, rtol=1e-9)


def test_driver_is_c1_at_knots():
    rng = np.random.default_rng(5)
    times = np.array([0.0, 0.4, 1.0, 1.3, 2.0])
    d = KinematicDriver(times, rng.normal(size=(5, 3)))
    for k in times[1:-1]:
        for h in (1e-4, 1e-6):
            assert np.linalg.norm(d.position(k + h) - d.position(k - h)) < 1e3 * h
        left = (d.position(k) - d.position(k - 1e-6)) / 1e-6
        right = (d.position(k + 1e-6) - d.position(k)) / 1e-6
        np.testing.assert_allclose(left, right, atol=1e-4)


def test_driver_clamps_and_validates():
    d = KinematicDriver([0.0, 1.0], [[0, 0, 0], [1, 0, 0]])
    np.testing.assert_array_equal(d.position(-5.0), [0, 0, 0])
    np.testing.assert_array_equal(d.position(5.0), [1, 0, 0])
    with pytest.raises(ValueError):
        KinematicDriver([0.0, 0.0], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError):
        KinematicDriver([0.0, 1.0], [[0, 0, 0]])
