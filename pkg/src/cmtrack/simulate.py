"""Fixed-step RK4 simulation of the closed loop and of the gap dynamics.

The feedback is re-solved at every RK4 stage, so the plant sees the
continuous law rather than a zero-order hold.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .expr import DomainError
from .model import ErrorDynamics
from .synthesis import (
    ContractionFailure,
    FeedbackLaw,
    HurwitzSpec,
    SingularB,
    associate_feedback,
    estimate_contraction,
)


def rk4_step(fun, t: float, y: np.ndarray, dt: float, k1=None, t_next=None) -> np.ndarray:
    """One classical RK4 step.

    ``t_next`` lets the caller pass the grid time ``(k+1) dt`` exactly, so
    per-time caches hit on the next step (``t + dt`` can differ in the last bit).
    """
    if t_next is None:
        t_next = t + dt
    t_mid = 0.5 * (t + t_next)
    if k1 is None:
        k1 = fun(t, y)
    k2 = fun(t_mid, y + 0.5 * dt * k1)
    k3 = fun(t_mid, y + 0.5 * dt * k2)
    k4 = fun(t_next, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(fun, y0, T: float, dt: float):
    """Integrate ``y' = fun(t, y)`` on ``t_k = k dt``; returns ``(t, Y)``."""
    steps = _n_steps(T, dt)
    t = np.arange(steps + 1) * dt
    Y = np.empty((steps + 1, len(y0)))
    Y[0] = y0
    for k in range(steps):
        Y[k + 1] = rk4_step(fun, t[k], Y[k], dt, t_next=t[k + 1])
    return t, Y


def _n_steps(T: float, dt: float) -> int:
    if not dt > 0 or not T >= dt:
        raise ValueError(f"need dt > 0 and T >= dt (T={T}, dt={dt})")
    return int(round(T / dt))


def reference_error_path(e0, spec: HurwitzSpec, t) -> np.ndarray:
    """``exp(D t) e0`` componentwise; ``t`` may be a scalar or an array."""
    e0 = np.asarray(e0, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.exp(np.multiply.outer(t, spec.diag)) * e0


def scalar_linear_solution(t, a, h) -> np.ndarray:
    """Solve ``y' = a(t) y + h(t)``, ``y(0) = 0``, by variation of constants.

    ``y(t) = exp(W(t)) * int_0^t h(s) exp(-W(s)) ds`` with ``W = int_0 a``;
    both integrals use composite Simpson on the sample grid ``t``.
    """
    t = np.asarray(t, dtype=float)
    W = cumulative_simpson(np.asarray(a, dtype=float), x=t, initial=0.0)
    inner = cumulative_simpson(np.asarray(h, dtype=float) * np.exp(-W), x=t, initial=0.0)
    return np.exp(W) * inner


def sinusoid_reference_controller(x, t) -> np.ndarray:
    """Time-varying sinusoidal law for the three-state chained system."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError("sinusoid controller is defined for 3-state chained systems only")
    return np.array([-x[0] + x[2] * math.sin(t), -x[1] - x[2] ** 2 * math.cos(t)])


@dataclass
class SimulationResult:
    t: np.ndarray
    x: np.ndarray
    e: np.ndarray
    u: np.ndarray
    fp_iters: np.ndarray
    gamma_obs: np.ndarray
    residual: np.ndarray
    e0: np.ndarray
    dt: float
    T: float
    status: str = "completed"
    failure_t: float | None = None
    message: str = ""
    etilde: np.ndarray | None = None
    E: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def err_norm(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def E_crosscheck(self) -> float:
        """``max_t |(etilde - e) - E|``; the two routes to the gap must agree."""
        if self.E is None:
            return math.nan
        k = min(len(self.E), len(self.e))
        return float(np.max(np.linalg.norm(self.etilde[:k] - self.e[:k] - self.E[:k], axis=1)))

    def columns(self) -> tuple[list[str], np.ndarray]:
        n, m = self.x.shape[1], self.u.shape[1]
        names = ["t"] + [f"x{i+1}" for i in range(n)] + [f"e{i+1}" for i in range(n)]
        names += [f"u{i+1}" for i in range(m)]
        blocks = [self.t[:, None], self.x, self.e, self.u]
        if self.E is not None:
            k = len(self.t)
            names += [f"etilde{i+1}" for i in range(n)] + [f"E{i+1}" for i in range(n)]
            blocks += [self.etilde[:k], self.E[:k]]
        names += ["err_norm", "fp_iters", "gamma_obs", "residual"]
        blocks += [self.err_norm[:, None], self.fp_iters[:, None], self.gamma_obs[:, None], self.residual[:, None]]
        return names, np.hstack(blocks)

    def to_csv(self, path=None) -> str:
        names, data = self.columns()
        buf = io.StringIO()
        np.savetxt(buf, data, delimiter=",", fmt="%.17g", header=",".join(names), comments="")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def integrate_closed_loop(
    dyn: ErrorDynamics,
    x0,
    law: FeedbackLaw | None,
    T: float,
    dt: float,
    controller=None,
    with_E: bool = True,
    diagnostics: bool = True,
) -> SimulationResult:
    """Simulate ``x' = f(x, u_d + v*(x - x_d, t), w, t)`` with classical RK4.

    ``controller(x, t) -> u`` replaces the synthesized law when given (used
    for comparison runs). For an augmented law that is not yet tied to e(0),
    the association is done here with ``e0 = x0 - x_d(0)``. On a solver or
    domain failure the result is truncated and ``status`` says why.
    """
    model = dyn.model
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},)")
    steps = _n_steps(T, dt)
    e0 = x0 - model.x_d(0.0)
    if controller is None:
        if law is None:
            raise ValueError("need a feedback law or a controller")
        if law.mode == "augmented" and law.e0 is None:
            law = associate_feedback(law, e0)

    def control(t, x, diagnose):
        if controller is not None:
            return np.asarray(controller(x, t), dtype=float), None
        fr = dyn.frame(t)
        v, diag = law.solve(x - fr.xd, t)
        return fr.ud + v, diag

    def rhs(t, x):
        u, _ = control(t, x, False)
        fr = dyn.frame(t)
        return model.f(x, u, fr.w, t)

    times = np.arange(steps + 1) * dt
    X = np.empty((steps + 1, model.n))
    Ev = np.empty_like(X)
    U = np.empty((steps + 1, model.m))
    iters = np.full(steps + 1, np.nan)
    gam = np.full(steps + 1, np.nan)
    res = np.full(steps + 1, np.nan)

    status, fail_t, msg = "completed", None, ""
    stored = 0
    x = x0.copy()
    try:
        for k in range(steps + 1):
            t = float(times[k])
            fr = dyn.frame(t)
            u, diag = control(t, x, diagnostics)
            X[k], Ev[k], U[k] = x, x - fr.xd, u
            if diag is not None:
                iters[k], res[k] = diag.iterations, diag.residual
                if diagnostics:
                    gam[k] = estimate_contraction(x - fr.xd, t, law, diag.full).gamma
            stored = k + 1
            if k == steps:
                break
            k1 = model.f(x, u, fr.w, t)
            x = rk4_step(rhs, t, x, dt, k1=k1, t_next=float(times[k + 1]))
            if not np.all(np.isfinite(x)):
                raise DomainError(f"state became non-finite after t={t:.6g}")
    except (ContractionFailure, SingularB) as exc:
        status, fail_t, msg = "solver_failure", float(times[stored]) if stored <= steps else float(T), str(exc)
    except DomainError as exc:
        status, fail_t, msg = "domain_error", float(times[min(stored, steps)]), str(exc)

    result = SimulationResult(
        t=times[:stored], x=X[:stored], e=Ev[:stored], u=U[:stored],
        fp_iters=iters[:stored], gamma_obs=gam[:stored], residual=res[:stored],
        e0=e0, dt=dt, T=T, status=status, failure_t=fail_t, message=msg,
    )
    if controller is None and law.mode == "augmented":
        result.etilde = reference_error_path(law.e0, law.hurwitz, result.t)
        if with_E and stored > 0:
            _, E = integrate_E_dynamics(dyn, law, times[stored - 1], dt) if stored > 1 else (None, np.zeros((1, model.n)))
            result.E = E
    return result


def integrate_E_dynamics(dyn: ErrorDynamics, law: FeedbackLaw, T: float, dt: float):
    """Integrate the gap ``E = etilde - e`` between ideal and actual error.

    ``E' = Ft(et, vt*(et), t) - F(et - E, v*(et - E, t), t)``, ``E(0) = 0``,
    with ``et(t) = exp(D t) e0``. Returns ``(t, E)``.
    """
    if law.mode != "augmented" or law.e0 is None:
        raise ValueError("gap dynamics need an augmented law associated with e(0)")
    aug = law.dynamics

    def rhs(t, E):
        et = law.reference_error(t)
        ideal = aug.frame(t).field(et, law.path_control(t))
        e = et - E
        v, _ = law.solve(e, t)
        return ideal - dyn.frame(t).field(e, v)

    return rk4(rhs, np.zeros(dyn.n), T, dt)


def probe_delta(
    dyn: ErrorDynamics,
    law: FeedbackLaw,
    direction,
    T: float,
    dt: float,
    upper: float = 1.0,
    steps: int = 8,
) -> tuple[float, bool]:
    """Largest tested ``|e(0)|`` along ``direction`` whose run completes.

    Bisection with ``steps`` halvings on ``[0, upper]``. Returns
    ``(delta, capped)`` where ``capped`` means ``upper`` itself succeeded.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    x_d0 = dyn.model.x_d(0.0)

    def ok(radius):
        e0 = radius * d
        lw = associate_feedback(law, e0) if law.mode == "augmented" else law
        run = integrate_closed_loop(dyn, x_d0 + e0, lw, T, dt, with_E=False, diagnostics=False)
        return run.completed

    if ok(upper):
        return float(upper), True
    lo, hi = 0.0, float(upper)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, False
