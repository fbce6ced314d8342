import numpy as np
import pytest

from cmtrack.examples import EXAMPLES, load_example, paper2d
from cmtrack.expr import DomainError
from cmtrack.model import ErrorDynamics, ModelError, SampledSignal, SystemModel

from oracles import central_jacobian


def test_paper2d_field_and_telescoping():
    dyn = ErrorDynamics(paper2d("0.5").model)
    for t in (0.0, 1.3, 7.0):
        assert np.array_equal(dyn.F([0, 0], [0], t), [0.0, 0.0])
    e, v, w = np.array([0.3, -0.7]), np.array([0.2]), 0.5
    expected = [e[0] * w + e[1] + v[0], e[1] + v[0]]
    assert np.allclose(dyn.error_field(e, v, 2.0), expected, rtol=0, atol=1e-15)


def test_paper2d_jacobians_exact():
    dyn = ErrorDynamics(paper2d("sin(t)").model)
    for t in np.linspace(0, 5, 7):
        assert np.array_equal(dyn.jacobian_A(t), [[np.sin(t), 1.0], [0.0, 1.0]])
        assert np.array_equal(dyn.jacobian_B(t), [[1.0], [1.0]])


def test_paper2d_remainder_zero(rng):
    dyn = ErrorDynamics(paper2d("-2").model)
    for _ in range(20):
        e, v = rng.normal(size=2), rng.normal(size=1)
        assert np.max(np.abs(dyn.remainder(e, v, rng.uniform(0, 10)))) <= 1e-14


def test_chained3_field_jacobians_remainder():
    dyn = ErrorDynamics(load_example("chained3").model)
    assert np.array_equal(dyn.F([1, 1, 1], [0, 0], 0.0), [0, 0, 0])
    assert np.array_equal(dyn.A(3.0), np.zeros((3, 3)))
    assert np.array_equal(dyn.B(3.0), [[1, 0], [0, 1], [0, 0]])
    e, v = np.array([0.4, -0.3, 2.0]), np.array([0.7, 0.1])
    assert np.allclose(dyn.remainder(e, v, 0.0), [0, 0, e[1] * v[0]], atol=1e-16)


def test_lti_constant_matrices():
    dyn = ErrorDynamics(load_example("lti").model)
    A0, B0 = dyn.A(0.0), dyn.B(0.0)
    assert np.array_equal(A0, [[0, 1], [2, -1]])
    assert np.array_equal(B0, np.eye(2))
    for t in (1.0, 17.5):
        assert np.array_equal(dyn.A(t), A0) and np.array_equal(dyn.B(t), B0)


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_symbolic_jacobians_match_finite_differences(name):
    dyn = ErrorDynamics(load_example(name).model)
    n, m = dyn.n, dyn.m
    for t in np.linspace(0, 20, 20):
        JA = central_jacobian(lambda e: dyn.F(e, np.zeros(m), t), np.zeros(n))
        JB = central_jacobian(lambda v: dyn.F(np.zeros(n), v, t), np.zeros(m))
        A, B = dyn.A(t), dyn.B(t)
        assert np.max(np.abs(A - JA)) <= 1e-6 * max(1.0, np.max(np.abs(A)))
        assert np.max(np.abs(B - JB)) <= 1e-6 * max(1.0, np.max(np.abs(B)))


def test_pendulum_remainder_taylor_bound(rng):
    dyn = ErrorDynamics(load_example("pendulum2").model)
    for _ in range(500):
        e = rng.normal(size=2)
        e *= rng.uniform(0, 1) / np.linalg.norm(e)
        t = rng.uniform(0, 20)
        r = np.linalg.norm(dyn.remainder(e, [0.0, 0.0], t))
        assert r <= 0.5 * np.dot(e, e) + 1e-15


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_trajectory_consistency(name):
    assert load_example(name).model.max_trajectory_residual(20.0, 400) <= 1e-8


def test_inconsistent_trajectory_detected():
    model = SystemModel(["u1"], ["t"], ["0"])
    assert model.max_trajectory_residual(1.0, 10) == pytest.approx(1.0)


def test_dimension_validation():
    with pytest.raises(ModelError):
        SystemModel(["u1"], ["0"], ["0", "0"])  # m > n
    with pytest.raises(ModelError):
        SystemModel(["x1 + u1", "x2"], ["0"], ["0"])  # x_d wrong length
    with pytest.raises(ModelError):
        SystemModel(["x1 + q"], ["0"], ["0"])  # unknown variable
    with pytest.raises(ModelError):
        SystemModel(["x1 + u1"], ["x1"], ["0"])  # x_d must be in t only


def test_domain_error_names_component():
    dyn = ErrorDynamics(SystemModel(["u1", "ln(x2) + u2"], ["0", "1"], ["0", "0"]))
    with pytest.raises(DomainError, match="f 1"):
        dyn.F([0.0, -2.0], [0.0, 0.0], 0.0)


def test_sampled_disturbance():
    w = SampledSignal([0, 1, 2], [0.0, 2.0, 0.0])
    assert w(0.5) == 1.0 and w(5.0) == 0.0 and w(-1) == 0.0
    model = SystemModel(["x1*w1 + u1"], ["0"], ["0"], [w])
    dyn = ErrorDynamics(model)
    assert dyn.A(1.0)[0, 0] == 2.0
    with pytest.raises(ModelError):
        SampledSignal([0, 0], [1, 2])


def test_frame_bookkeeping():
    model = load_example("pendulum2").model
    dyn = ErrorDynamics(model)
    fr = dyn.frame(1.25)
    assert np.array_equal(fr.xd, model.x_d(1.25))
    assert np.array_equal(fr.f_ref, model.f(fr.xd, fr.ud, fr.w, 1.25))
