import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmtrack.examples import load_example, paper2d
from cmtrack.model import ErrorDynamics, SystemModel
from cmtrack.simulate import (
    integrate_closed_loop,
    integrate_E_dynamics,
    probe_delta,
    reference_error_path,
    rk4,
    rk4_step,
    scalar_linear_solution,
    sinusoid_reference_controller,
)
from cmtrack.synthesis import FeedbackLaw, HurwitzSpec, associate_feedback

from conftest import make_law
from oracles import chained3_x3


def _lin_err(dt, lam=(-1.0, -2.0), T=2.0):
    lam = np.array(lam)
    y0 = np.array([1.0, -0.5])
    t, Y = rk4(lambda t, y: lam * y, y0, T, dt)
    return np.max(np.abs(Y - np.exp(np.outer(t, lam)) * y0))


def test_rk4_fourth_order():
    ratio = _lin_err(2e-2) / _lin_err(1e-2)
    assert 14.0 <= ratio <= 18.0


def test_rk4_time_dependent_rhs():
    # y' = cos t, y(0) = 0
    t, Y = rk4(lambda t, y: np.array([math.cos(t)]), np.zeros(1), 3.0, 1e-2)
    assert np.max(np.abs(Y[:, 0] - np.sin(t))) <= 1e-9


def test_rk4_grid_is_exact_multiples():
    t, _ = rk4(lambda t, y: -y, np.ones(1), 1.0, 0.1)
    assert len(t) == 11 and np.array_equal(t, np.arange(11) * 0.1)


@pytest.mark.parametrize("T, dt", [(1.0, 0.0), (1.0, -0.1), (0.01, 0.1)])
def test_rk4_rejects_bad_steps(T, dt):
    with pytest.raises(ValueError):
        rk4(lambda t, y: y, np.ones(1), T, dt)


def test_rk4_step_accepts_precomputed_slope():
    fun = lambda t, y: -2 * y
    y = np.array([1.3])
    assert np.array_equal(rk4_step(fun, 0.0, y, 0.1), rk4_step(fun, 0.0, y, 0.1, k1=fun(0.0, y)))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 0.5), st.floats(-2, 2))
def test_rk4_scalar_linear_accuracy(a, y0):
    t, Y = rk4(lambda t, y: a * y, np.array([y0]), 1.0, 1e-2)
    assert abs(Y[-1, 0] - y0 * math.exp(a)) <= 1e-8 * max(1.0, abs(y0))


def test_reference_error_path():
    spec = HurwitzSpec((-1.0, -3.0), 0.1)
    t = np.array([0.0, 0.5, 2.0])
    P = reference_error_path([2.0, 1.0], spec, t)
    assert P.shape == (3, 2)
    assert np.allclose(P[:, 0], 2 * np.exp(-t), rtol=1e-15)
    assert np.allclose(P[:, 1], np.exp(-3 * t), rtol=1e-15)
    assert np.array_equal(reference_error_path([2.0, 1.0], spec, 0.0), [2.0, 1.0])


def test_scalar_linear_solution_constant_coefficients():
    # y' = -y + 1 -> 1 - exp(-t)
    t = np.linspace(0, 5, 1001)
    y = scalar_linear_solution(t, -np.ones_like(t), np.ones_like(t))
    assert np.max(np.abs(y - (1 - np.exp(-t)))) <= 1e-9


def test_scalar_linear_solution_time_varying():
    # y' = cos(t) y + cos(t) -> exp(sin t) - 1
    t = np.linspace(0, 6, 2001)
    y = scalar_linear_solution(t, np.cos(t), np.cos(t))
    assert np.max(np.abs(y - (np.exp(np.sin(t)) - 1))) <= 1e-9


def test_sinusoid_controller():
    u = sinusoid_reference_controller([1.0, 2.0, 3.0], math.pi / 2)
    assert u == pytest.approx([-1.0 + 3.0, -2.0 - 9.0 * math.cos(math.pi / 2)], abs=1e-15)
    assert np.array_equal(sinusoid_reference_controller([1.0, 2.0, 3.0], 0.0), [-1.0, -2.0 - 9.0])
    with pytest.raises(ValueError):
        sinusoid_reference_controller([1.0, 2.0], 0.0)


# -- closed loop -----------------------------------------------------------

def test_lti_closed_loop_follows_exponential():
    dyn, law = make_law(load_example("lti"))
    x0 = np.array([1.0, -1.0])
    res = integrate_closed_loop(dyn, x0, law, 3.0, 1e-2)
    assert res.completed and res.E is None and res.etilde is None
    ref = reference_error_path(x0, law.hurwitz, res.t)
    assert np.max(np.abs(res.e - ref)) <= 1e-8
    assert np.all(res.fp_iters == 1) and np.all(res.gamma_obs == 0.0)


def test_bookkeeping_pendulum():
    spec = load_example("pendulum2")
    dyn, law = make_law(spec)
    res = integrate_closed_loop(dyn, spec.x0, law, 1.0, 1e-2)
    assert len(res.t) == 101 and res.x.shape == (101, 2) and res.u.shape == (101, 2)
    for k in (0, 37, 100):
        fr = dyn.frame(res.t[k])
        assert np.array_equal(res.e[k], res.x[k] - fr.xd)
    assert np.allclose(res.e0, [0.006, 0.008], atol=1e-15)
    assert np.all(res.residual <= 1e-10 * (1 + res.err_norm))


@pytest.mark.parametrize("name", ["lti", "pendulum2", "paper2d", "chained3", "driftless2"])
def test_start_on_reference_stays_there(name):
    spec = load_example(name)
    dyn, law = make_law(spec)
    res = integrate_closed_loop(dyn, spec.model.x_d(0.0), law, 1.0, 1e-2)
    assert res.completed
    # a moving reference still picks up RK4 truncation error, O(dt^4)
    tol = 1e-9 if name == "pendulum2" else 0.0
    assert np.max(res.err_norm) <= tol
    if res.E is not None:
        assert np.max(np.abs(res.E)) <= 1e-12


def test_chained3_matches_closed_form_and_gap():
    dyn, law = make_law(load_example("chained3"), (-1.0, -1.0, -1.0))
    x0 = np.ones(3)
    res = integrate_closed_loop(dyn, x0, law, 3.0, 1e-2)
    assert res.completed
    assert np.max(np.abs(res.x[:, 2] - chained3_x3(res.t, x0, -1.0, -1.0))) <= 1e-8
    assert res.E.shape == res.e.shape
    assert res.E_crosscheck <= 1e-8


def test_gap_dynamics_need_association():
    _, law = make_law(load_example("chained3"))
    dyn = ErrorDynamics(load_example("chained3").model)
    with pytest.raises(ValueError):
        integrate_E_dynamics(dyn, law, 1.0, 0.1)
    assoc = associate_feedback(law, np.zeros(3))
    t, E = integrate_E_dynamics(dyn, assoc, 1.0, 0.1)
    assert np.array_equal(E, np.zeros((11, 3)))


def test_external_controller_path():
    dyn = ErrorDynamics(load_example("chained3").model)
    res = integrate_closed_loop(dyn, np.ones(3), None, 1.0, 1e-2, controller=sinusoid_reference_controller)
    assert res.completed and np.all(np.isnan(res.fp_iters))
    assert np.array_equal(res.u[0], sinusoid_reference_controller(np.ones(3), 0.0))


def test_input_validation():
    dyn, law = make_law(load_example("lti"))
    with pytest.raises(ValueError):
        integrate_closed_loop(dyn, [1.0], law, 1.0, 0.1)
    with pytest.raises(ValueError):
        integrate_closed_loop(dyn, [1.0, 0.0], None, 1.0, 0.1)


def _sin_law():
    model = SystemModel(["-x1 + sin(u1)"], ["0"], ["0"])
    dyn = ErrorDynamics(model)
    return dyn, FeedbackLaw(dyn, HurwitzSpec((-2.0,), 0.1))


def test_solver_failure_truncates():
    dyn, law = _sin_law()
    res = integrate_closed_loop(dyn, [3.0], law, 1.0, 1e-2)
    assert res.status == "solver_failure" and not res.completed
    assert res.failure_t == 0.0 and len(res.t) == 0
    assert "contraction" in res.message.lower() or "converge" in res.message.lower()


def test_domain_error_truncates():
    # ln(x1 + 1) is undefined at the start x1 = -2
    model = SystemModel(["u1 + 0*ln(x1 + 1)"], ["0"], ["0"])
    dyn = ErrorDynamics(model)
    law = FeedbackLaw(dyn, HurwitzSpec((-1.0,), 0.1))
    res = integrate_closed_loop(dyn, [-2.0], law, 1.0, 1e-2)
    assert res.status == "domain_error" and res.failure_t == 0.0


def test_probe_delta_sin_input():
    # fixed point exists while |(1 + lam) e| = |e| < 1
    dyn, law = _sin_law()
    delta, capped = probe_delta(dyn, law, [1.0], 2.0, 1e-2, upper=2.0)
    assert not capped and 0.9 <= delta < 1.0
    delta, capped = probe_delta(dyn, law, [1.0], 2.0, 1e-2, upper=0.5)
    assert capped and delta == 0.5


def test_csv_format_and_determinism(tmp_path):
    dyn, law = make_law(paper2d("-2"), (-1.0, -1.0))
    runs = [integrate_closed_loop(dyn, [1.0, 1.0], law, 0.5, 1e-2) for _ in range(2)]
    path = tmp_path / "trace.csv"
    text = runs[0].to_csv(path)
    assert path.read_text() == text == runs[1].to_csv()
    header = text.splitlines()[0].split(",")
    assert header[:7] == ["t", "x1", "x2", "e1", "e2", "u1", "etilde1"]
    assert header[-4:] == ["err_norm", "fp_iters", "gamma_obs", "residual"]
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    names, cols = runs[0].columns()
    assert data.shape == cols.shape
    # %.17g round-trips exactly
    assert np.array_equal(data, cols)
