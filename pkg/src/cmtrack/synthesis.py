"""Feedback synthesis by a contraction-mapping fixed point.

For a chosen diagonal Hurwitz matrix ``D`` the feedback ``v*(e, t)`` is the
solution of ``F(e, v, t) = D e``, i.e. the fixed point of::

    K_e(v) = -B(t)^-1 [A(t) e + r(e, v, t) - D e]

Substituting ``r = F - A e - B v`` gives ``K_e(v) = v - B^-1 (F(e, v) - D e)``,
which is how it is evaluated here (same map, fewer cancellations). With that
feedback the closed-loop error obeys ``de/dt = D e`` exactly.

Underactuated plants are handled on the augmented dynamics
(:mod:`cmtrack.augment`); the law applied to the real plant keeps the first m
components, with the virtual components pinned to their values along the
reference error path ``exp(D t) e(0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .augment import AugmentedErrorDynamics, rank_tolerance
from .model import ErrorDynamics

NOISE = 1e-14


def _norm(v) -> float:
    # np.linalg.norm has noticeable call overhead for the short vectors used here
    return math.sqrt(float(v @ v))


class SynthesisError(ValueError):
    pass


class EigenvalueBoundError(SynthesisError):
    pass


class ContractionFailure(RuntimeError):
    """Fixed-point iteration did not contract; the error left the contraction ball."""


class SingularB(RuntimeError):
    def __init__(self, t: float, detail: str = ""):
        self.t = t
        super().__init__(f"input matrix numerically singular at t={t:.6g}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class HurwitzSpec:
    eigenvalues: tuple[float, ...]
    margin: float
    source: str = "auto"

    def __post_init__(self):
        if not all(lam < 0 for lam in self.eigenvalues):
            raise EigenvalueBoundError(f"eigenvalues must be negative, got {self.eigenvalues}")

    @property
    def diag(self) -> np.ndarray:
        return np.array(self.eigenvalues, dtype=float)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.diag))


def select_delta(
    lambda_star: float,
    alpha: float,
    n: int,
    margin: float = 0.1,
    eigenvalues=None,
) -> HurwitzSpec:
    """Choose (or validate) the closed-loop eigenvalues.

    Requires ``2 max(lambda*/alpha, lambda*) + max_i lambda_i <= -margin``.
    In auto mode every eigenvalue is set to the largest admissible value.
    """
    if not margin > 0:
        raise SynthesisError(f"margin must be positive, got {margin}")
    if lambda_star < 0 or not alpha > 0:
        raise SynthesisError("need lambda* >= 0 and alpha > 0")
    threshold = 2.0 * max(lambda_star / alpha, lambda_star)
    if eigenvalues is None:
        return HurwitzSpec(tuple([-(threshold + margin)] * n), margin, "auto")
    eig = tuple(float(x) for x in eigenvalues)
    if len(eig) != n:
        raise SynthesisError(f"need {n} eigenvalues, got {len(eig)}")
    bound = -(threshold + margin)
    if max(eig) > bound:
        raise EigenvalueBoundError(
            f"largest eigenvalue {max(eig):.6g} violates bound {bound:.6g} "
            f"(2*max(lambda*/alpha, lambda*) = {threshold:.6g}, margin = {margin:.6g})"
        )
    return HurwitzSpec(eig, margin, "user")


def matrix_exp_diag(spec: HurwitzSpec | np.ndarray, t: float) -> np.ndarray:
    diag = spec.diag if isinstance(spec, HurwitzSpec) else np.asarray(spec, dtype=float)
    return np.diag(np.exp(diag * t))


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    ratios: tuple[float, ...]
    residual: float
    full: np.ndarray | None = None


@dataclass(frozen=True)
class ContractionParams:
    gamma: float
    eta: float
    tol_fp: float
    max_iter: int
    a: float
    a_prime: float
    delta: float

    @property
    def contracting(self) -> bool:
        return self.gamma < 1.0


def _fixed_point(frame, Binv, target, e, v, pin, tol_fp, max_iter, floor=0.0):
    """Iterate ``v <- v - Binv (F(e, v) - target)``; components ``v[-len(pin):]`` stay pinned.

    ``floor`` is the absolute roundoff level of a step; differences below it
    count as converged and are not used as contraction ratios.
    """
    k_pin = 0 if pin is None else len(pin)
    if k_pin:
        v[-k_pin:] = pin
    ne = _norm(e)
    ratios = []
    prev = None
    expanding = 0
    for k in range(1, max_iter + 1):
        v_new = v - Binv @ (frame.field(e, v) - target)
        if k_pin:
            v_new[-k_pin:] = pin
        diff = _norm(v_new - v)
        if not math.isfinite(diff):
            raise ContractionFailure(f"iterate became non-finite after {k} steps at t={frame.t:.6g}")
        scale = _norm(v_new) + ne
        noise = NOISE * scale + floor
        if prev is not None and prev > noise and diff > noise:
            rho = diff / prev
            ratios.append(rho)
            expanding = expanding + 1 if rho >= 1.0 else 0
            if expanding >= 3:
                raise ContractionFailure(
                    f"iteration expanding (ratio {rho:.3g}) at t={frame.t:.6g}, |e|={ne:.3g}"
                )
        v = v_new
        if diff <= max(tol_fp * scale, noise):
            return v, k, tuple(ratios)
        prev = diff
    raise ContractionFailure(f"no convergence in {max_iter} iterations at t={frame.t:.6g}, |e|={ne:.3g}")


class FeedbackLaw:
    """State feedback ``v*(e, t)`` defined implicitly by the fixed point.

    Parameters
    ----------
    dynamics : ErrorDynamics or AugmentedErrorDynamics
        Fully actuated dynamics, or the augmented dynamics of an
        underactuated plant.
    hurwitz : HurwitzSpec
        Target closed-loop error dynamics.
    e0 : array, optional
        Initial error. Required to evaluate an augmented law on the real
        plant (see :func:`associate_feedback`).
    tol_fp : float
        Successive-iterate tolerance, relative to ``|v| + |e|``.
    radius : float
        Largest ``|e|`` the law accepts.
    """

    def __init__(
        self,
        dynamics,
        hurwitz: HurwitzSpec,
        e0=None,
        tol_fp: float = 1e-12,
        max_iter: int = 100,
        radius: float = math.inf,
        tol_residual: float = 1e-10,
        delta_probe: float = math.nan,
    ):
        self.dynamics = dynamics
        self.hurwitz = hurwitz
        self.n = dynamics.n
        self.m = getattr(dynamics, "m_original", dynamics.m)
        if len(hurwitz.eigenvalues) != self.n:
            raise SynthesisError("eigenvalue count does not match state dimension")
        self.e0 = None if e0 is None else np.array(e0, dtype=float)
        self.tol_fp = tol_fp
        self.max_iter = max_iter
        self.radius = radius
        self.tol_residual = tol_residual
        self.delta_probe = delta_probe
        self._lam = hurwitz.diag
        self.context = lru_cache(maxsize=64)(self._context)
        self.path_control = lru_cache(maxsize=64)(self._path_control)

    @property
    def mode(self) -> str:
        return "augmented" if isinstance(self.dynamics, AugmentedErrorDynamics) else "fully_actuated"

    def replace(self, **changes) -> "FeedbackLaw":
        kw = dict(
            dynamics=self.dynamics, hurwitz=self.hurwitz, e0=self.e0, tol_fp=self.tol_fp,
            max_iter=self.max_iter, radius=self.radius, tol_residual=self.tol_residual,
            delta_probe=self.delta_probe,
        )
        kw.update(changes)
        return FeedbackLaw(**kw)

    def _context(self, t: float):
        """Per-time solver data: frame, ``B^-1``, roundoff floor, start-iterate gain."""
        frame = self.dynamics.frame(t)
        B = frame.B
        U, s, Vt = np.linalg.svd(B)
        tol = rank_tolerance(s, B.shape)
        if s[-1] <= tol:
            rank = int(np.sum(s > tol))
            raise SingularB(float(t), f"rank {rank}, sigma_min {s[-1]:.3g}")
        Binv = (Vt.T / s) @ U.T
        # F is a difference of O(|x_d|) quantities, so its roundoff is absolute
        floor = NOISE * math.sqrt(float(np.sum(s**-2.0))) * frame.magnitude
        gain = Binv @ (frame.A - np.diag(self._lam))
        return frame, Binv, floor, gain

    def inverse(self, t: float) -> np.ndarray:
        return self.context(float(t))[1]

    def reference_error(self, t: float) -> np.ndarray:
        if self.e0 is None:
            raise SynthesisError("law has no initial error attached")
        return np.exp(self._lam * t) * self.e0

    def _check(self, e):
        e = np.asarray(e, dtype=float)
        if e.shape != (self.n,):
            raise ValueError(f"error vector must have shape ({self.n},)")
        if self.radius < math.inf and _norm(e) > self.radius:
            raise ContractionFailure(f"|e|={_norm(e):.3g} outside probe radius {self.radius:.3g}")
        return e

    def _run(self, e, t, v0, pin):
        frame, Binv, floor, gain = self.context(t)
        ne = _norm(e)
        if ne == 0.0:
            k = frame.n_controls
            return np.zeros(k), SolveDiagnostics(0, (), 0.0, np.zeros(k))
        target = self._lam * e
        v = -(gain @ e) if v0 is None else np.array(v0, dtype=float)
        v, iters, ratios = _fixed_point(frame, Binv, target, e, v, pin, self.tol_fp, self.max_iter, floor)
        full = v if pin is None else v - Binv @ (frame.field(e, v) - target)
        residual = _norm(frame.field(e, full) - target)
        if residual > self.tol_residual * (1.0 + ne):
            raise ContractionFailure(f"residual {residual:.3g} above tolerance at t={frame.t:.6g}")
        return full, SolveDiagnostics(iters, ratios, residual, full)

    def solve_full(self, e, t, v0=None):
        """Fixed point of the (possibly augmented) dynamics: all control components."""
        return self._run(self._check(e), float(t), v0, None)

    def _path_control(self, t: float) -> np.ndarray:
        v, _ = self._run(self.reference_error(t), t, None, None)
        v.setflags(write=False)
        return v

    def virtual_path(self, t: float) -> np.ndarray:
        """Virtual components of the augmented law along ``exp(D t) e0``."""
        return self.path_control(float(t))[self.m:]

    def solve(self, e, t, v0=None):
        """Control correction ``v*`` (length m) for the real plant and diagnostics."""
        e = self._check(e)
        t = float(t)
        if self.mode == "fully_actuated":
            return self._run(e, t, v0, None)
        if self.e0 is None:
            raise SynthesisError("augmented law must be associated with e(0) before use")
        v, diag = self._run(e, t, v0, self.virtual_path(t))
        return v[: self.m], diag

    def __call__(self, e, t) -> np.ndarray:
        return self.solve(e, t)[0]


def synthesize(
    dyn: ErrorDynamics,
    report,
    eigenvalues=None,
    margin: float = 0.1,
    columns=None,
    **solver,
) -> FeedbackLaw:
    """Build the feedback law from an assumption report.

    For m < n the returned law lives on the augmented dynamics and still has
    to be tied to an initial error with :func:`associate_feedback`.
    """
    if not report.rank.passed:
        raise SynthesisError(
            f"rank condition fails (first at t={report.rank.first_violation_t:.6g}); cannot synthesize"
        )
    spec = select_delta(report.lambda_star, report.alpha, dyn.n, margin, eigenvalues)
    dynamics = dyn if dyn.m == dyn.n else AugmentedErrorDynamics(dyn, columns)
    return FeedbackLaw(dynamics, spec, **solver)


def associate_feedback(law: FeedbackLaw, e0) -> FeedbackLaw:
    """Tie an augmented law to ``e(0)``: virtual inputs follow ``exp(D t) e0``."""
    e0 = np.asarray(e0, dtype=float)
    if e0.shape != (law.n,):
        raise ValueError(f"e0 must have shape ({law.n},)")
    return law.replace(e0=e0)


def solve_feedback(e, t, law: FeedbackLaw):
    return law.solve(e, t)


def estimate_contraction(e, t, law: FeedbackLaw, v=None) -> ContractionParams:
    """Observed contraction constant ``|| B^-1 J_v r ||_F`` at the fixed point.

    ``J_v r = J_v F - B`` uses the exact symbolic input Jacobian of the plant.
    """
    e = np.asarray(e, dtype=float)
    if v is None:
        v = law.solve_full(e, t)[0]
    frame = law.dynamics.frame(t)
    Binv = law.inverse(float(t))
    J = frame.jac_v_field(e, v) - frame.B
    gamma = float(np.linalg.norm(Binv @ J))
    beta = float(np.linalg.norm(Binv))
    eta = math.inf if gamma == 0.0 else beta * (1.0 - gamma) / gamma
    ne, nv = float(np.linalg.norm(e)), float(np.linalg.norm(v))
    return ContractionParams(
        gamma=gamma, eta=eta, tol_fp=law.tol_fp, max_iter=law.max_iter,
        a=max(nv, ne), a_prime=ne, delta=law.delta_probe,
    )


def bound_vstar(e, t, report, gamma: float, law: FeedbackLaw) -> float:
    """A priori bound on ``|v*(e, t)|`` from the fitted remainder constants.

    ``(|B^-1 A| |e| + |B^-1| beta3 |e|^alpha + |B^-1| |D| |e|) / (1 - gamma)``
    with Frobenius norms taken at ``t``.
    """
    if gamma >= 1.0:
        raise ValueError(f"bound requires gamma < 1, got {gamma}")
    ne = float(np.linalg.norm(e))
    if ne > report.kappa:
        raise ValueError(f"|e|={ne:.3g} exceeds kappa={report.kappa:.3g}")
    frame = law.dynamics.frame(t)
    Binv = law.inverse(float(t))
    ninv = float(np.linalg.norm(Binv))
    total = (
        float(np.linalg.norm(Binv @ frame.A)) * ne
        + ninv * report.beta3 * ne**report.alpha
        + ninv * law.hurwitz.frobenius * ne
    )
    return total / (1.0 - gamma)
