"""Plant description and tracking-error dynamics.

Variables follow a fixed naming convention: states ``x1..xn``, inputs
``u1..um``, disturbances ``w1..wp`` and time ``t``. The desired trajectory
``(x_d, u_d)`` and the disturbance are functions of ``t`` only.

Shifting the plant along the desired trajectory gives the error field::

    F(e, v, t) = f(e + x_d(t), v + u_d(t), w(t), t) - f(x_d(t), u_d(t), w(t), t)

with linear part ``A(t) e + B(t) v`` (exact Jacobians at the origin) and
remainder ``r = F - A e - B v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .expr import Expression, compile_vector, differentiate, free_variables, parse


class ModelError(ValueError):
    pass


class Signal(Protocol):
    def __call__(self, t: float) -> float: ...


class ExprSignal:
    """Scalar signal given by an expression in ``t``."""

    def __init__(self, expr: Expression | str):
        self.expr = parse(expr) if isinstance(expr, str) else expr
        extra = free_variables(self.expr) - {"t"}
        if extra:
            raise ModelError(f"signal {self.expr} may only depend on t, found {sorted(extra)}")
        self._fn = compile_vector([self.expr], ["t"], label="signal")

    def __call__(self, t):
        return float(self._fn(t)[0])

    def derivative(self) -> "ExprSignal":
        return ExprSignal(differentiate(self.expr, "t"))

    def __repr__(self):
        return f"ExprSignal({str(self.expr)!r})"


class SampledSignal:
    """Piecewise-linear interpolation of samples; held constant outside the range."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or self.times.size < 2:
            raise ModelError("sampled signal needs matching 1-D arrays with at least 2 samples")
        if np.any(np.diff(self.times) <= 0):
            raise ModelError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("sampled signal contains non-finite values")

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    def __repr__(self):
        return f"SampledSignal({self.times.size} samples)"


def _as_exprs(items: Sequence[Expression | str]) -> tuple[Expression, ...]:
    return tuple(parse(s) if isinstance(s, str) else s for s in items)


class SystemModel:
    """Plant ``xdot = f(x, u, w(t), t)`` with desired trajectory and disturbance.

    Parameters
    ----------
    f : sequence of expressions (or source strings), length n
    xd, ud : expressions in ``t`` for the desired state (n) and input (m)
    w : disturbance signals (p); strings are parsed as expressions in ``t``
    """

    def __init__(self, f, xd, ud, w=(), name: str = ""):
        self.name = name
        self.f_exprs = _as_exprs(f)
        self.n = len(self.f_exprs)
        self.m = len(ud)
        self.p = len(w)
        if self.n < 1:
            raise ModelError("need at least one state")
        if not 1 <= self.m <= self.n:
            raise ModelError(f"need 1 <= m <= n, got n={self.n}, m={self.m}")
        if len(xd) != self.n:
            raise ModelError(f"x_d has {len(xd)} components, expected {self.n}")

        self.state_names = [f"x{i + 1}" for i in range(self.n)]
        self.input_names = [f"u{i + 1}" for i in range(self.m)]
        self.dist_names = [f"w{i + 1}" for i in range(self.p)]
        args = self.state_names + self.input_names + self.dist_names + ["t"]
        for i, e in enumerate(self.f_exprs):
            extra = free_variables(e) - set(args)
            if extra:
                raise ModelError(f"f{i + 1} uses unknown variables {sorted(extra)}")

        self.xd_signals = [s if callable(s) and not isinstance(s, str) else ExprSignal(s) for s in xd]
        self.ud_signals = [s if callable(s) and not isinstance(s, str) else ExprSignal(s) for s in ud]
        self.w_signals = [s if callable(s) and not isinstance(s, str) else ExprSignal(s) for s in w]
        for s in self.xd_signals + self.ud_signals:
            if not isinstance(s, ExprSignal):
                raise ModelError("x_d and u_d must be expressions in t")

        self.jx_exprs = [[differentiate(fi, x) for x in self.state_names] for fi in self.f_exprs]
        self.ju_exprs = [[differentiate(fi, u) for u in self.input_names] for fi in self.f_exprs]
        self._f = compile_vector(self.f_exprs, args, label="f")
        self._jx = compile_vector([d for row in self.jx_exprs for d in row], args, label="df/dx")
        self._ju = compile_vector([d for row in self.ju_exprs for d in row], args, label="df/du")
        self._xd = compile_vector([s.expr for s in self.xd_signals], ["t"], label="x_d")
        self._ud = compile_vector([s.expr for s in self.ud_signals], ["t"], label="u_d")
        self._xd_dot = compile_vector(
            [differentiate(s.expr, "t") for s in self.xd_signals], ["t"], label="dx_d/dt"
        )

    # -- plant ------------------------------------------------------------
    def f(self, x, u, w, t) -> np.ndarray:
        return self._f(*x, *u, *w, t)

    def jac_x(self, x, u, w, t) -> np.ndarray:
        return self._jx(*x, *u, *w, t).reshape(self.n, self.n)

    def jac_u(self, x, u, w, t) -> np.ndarray:
        return self._ju(*x, *u, *w, t).reshape(self.n, self.m)

    # -- signals ----------------------------------------------------------
    def x_d(self, t) -> np.ndarray:
        return self._xd(t)

    def u_d(self, t) -> np.ndarray:
        return self._ud(t)

    def w(self, t) -> np.ndarray:
        return np.array([s(t) for s in self.w_signals], dtype=float)

    def x_d_dot(self, t) -> np.ndarray:
        return self._xd_dot(t)

    def trajectory_residual(self, t) -> float:
        """``|d/dt x_d - f(x_d, u_d, w, t)|`` at ``t``."""
        return float(np.linalg.norm(self.x_d_dot(t) - self.f(self.x_d(t), self.u_d(t), self.w(t), t)))

    def max_trajectory_residual(self, T: float, N: int = 200) -> float:
        return max(self.trajectory_residual(t) for t in np.linspace(0.0, T, N))

    def __repr__(self):
        return f"SystemModel({self.name or 'unnamed'}, n={self.n}, m={self.m}, p={self.p})"


@dataclass(frozen=True, eq=False)
class Frame:
    """Error dynamics frozen at one time instant.

    Holds the reference point and the exact Jacobians so that repeated
    evaluations of ``F`` at the same ``t`` (fixed-point iterations, RK
    stages) do not redo that work.
    """

    model: SystemModel
    t: float
    xd: np.ndarray
    ud: np.ndarray
    w: np.ndarray
    f_ref: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def n_controls(self) -> int:
        return self.B.shape[1]

    def __post_init__(self):
        # derived constants; set once since the dataclass is frozen
        mag = 1.0 + float(np.linalg.norm(self.xd) + np.linalg.norm(self.ud) + np.linalg.norm(self.f_ref))
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "_tail", (*self.w.tolist(), self.t))

    def field(self, e, v) -> np.ndarray:
        return self.model._f(*(self.xd + e).tolist(), *(self.ud + v).tolist(), *self._tail) - self.f_ref

    def remainder(self, e, v) -> np.ndarray:
        return self.field(e, v) - self.A @ e - self.B @ v

    def jac_v_field(self, e, v) -> np.ndarray:
        """Exact Jacobian of ``F`` in ``v`` at ``(e, v)``."""
        return self.model.jac_u(self.xd + e, self.ud + v, self.w, self.t)


class ErrorDynamics:
    """Tracking-error field of a :class:`SystemModel`.

    ``frame(t)`` is memoised (the cache is keyed by the float ``t``); frames
    are immutable so sharing them across callers is safe.
    """

    def __init__(self, model: SystemModel, cache_size: int = 64):
        self.model = model
        self.n = model.n
        self.m = model.m
        self.frame = lru_cache(maxsize=cache_size)(self._make_frame)

    def _make_frame(self, t: float) -> Frame:
        mdl = self.model
        t = float(t)
        xd, ud, w = mdl.x_d(t), mdl.u_d(t), mdl.w(t)
        return Frame(
            model=mdl, t=t, xd=xd, ud=ud, w=w,
            f_ref=mdl.f(xd, ud, w, t),
            A=mdl.jac_x(xd, ud, w, t),
            B=mdl.jac_u(xd, ud, w, t),
        )

    def F(self, e, v, t) -> np.ndarray:
        return self.frame(t).field(np.asarray(e, dtype=float), np.asarray(v, dtype=float))

    def A(self, t) -> np.ndarray:
        return self.frame(t).A

    def B(self, t) -> np.ndarray:
        return self.frame(t).B

    def remainder(self, e, v, t) -> np.ndarray:
        return self.frame(t).remainder(np.asarray(e, dtype=float), np.asarray(v, dtype=float))

    error_field = F
    jacobian_A = A
    jacobian_B = B
