"""Empirical stability classification of simulated tracking errors.

All verdicts describe a finite horizon only. ``asymptotic`` needs the error
to reach ``tol_asym`` with a non-increasing envelope; ``lyapunov_stable``
needs it to stay within ``C |e(0)|``; ``attenuated`` needs it inside an
``eps`` ball after ``T_hold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .simulate import SimulationResult, integrate_closed_loop

ORDER = ("asymptotic", "lyapunov_stable", "attenuated", "diverging")
N_WINDOWS = 5
PROBE_DT = 1e-2


@dataclass(frozen=True)
class StabilityVerdict:
    kind: str
    lambda_fit: float
    final_error: float
    final_gap: float | None
    tol_asym: float
    bound_C: float
    eps: float | None = None
    hold: float | None = None
    note: str = ""
    probes: tuple = field(default=(), compare=False)

    @property
    def label(self) -> str:
        if self.kind == "attenuated":
            return f"attenuated(eps={self.eps:.6g}, T={self.hold:.6g})"
        return self.kind

    def __str__(self):
        return self.label

    def to_text(self) -> str:
        rows = [
            ("verdict", self.label),
            ("verdict.scope", "empirical, finite horizon"),
            ("lambda_fit", f"{self.lambda_fit:.12g}"),
            ("final_error", f"{self.final_error:.12g}"),
            ("final_gap", "n/a" if self.final_gap is None else f"{self.final_gap:.12g}"),
            ("tol_asym", f"{self.tol_asym:.6g}"),
            ("lyapunov_bound_C", f"{self.bound_C:.6g}"),
        ]
        if self.eps is not None:
            rows.append(("eps", f"{self.eps:.6g}"))
            rows.append(("hold", f"{self.hold:.6g}"))
        for i, p in enumerate(self.probes):
            rows.append((f"probe{i + 1}", p))
        if self.note:
            rows.append(("note", self.note))
        return "\n".join(f"{k} = {v}" for k, v in rows) + "\n"


def fit_decay_rate(t, err) -> float:
    """Least-squares slope of ``ln |e|`` over the last half of the horizon."""
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = (t >= 0.5 * t[-1]) & (err > 0)
    if keep.sum() < 2:
        return -math.inf if np.all(err[t >= 0.5 * t[-1]] == 0) else math.nan
    tt, ly = t[keep], np.log(err[keep])
    tc = tt - tt.mean()
    return float(tc @ (ly - ly.mean()) / (tc @ tc))


def envelope_decreasing(t, err, slack: float) -> bool:
    """Window maxima over the last half never increase by more than ``slack``."""
    t = np.asarray(t, dtype=float)
    tail = np.asarray(err, dtype=float)[t >= 0.5 * t[-1]]
    if tail.size < N_WINDOWS:
        return False
    peaks = [w.max() for w in np.array_split(tail, N_WINDOWS)]
    return all(b <= a * (1 + 1e-9) + slack for a, b in zip(peaks, peaks[1:]))


def classify(
    result: SimulationResult,
    eps: float | None = None,
    hold: float | None = None,
    bound_C: float = 10.0,
) -> StabilityVerdict:
    """Verdict for a single trajectory."""
    err = result.err_norm
    e0 = float(np.linalg.norm(result.e0))
    tol = 1e-6 * max(1.0, e0)
    gap = None
    if result.E is not None and len(result.E) and len(err):
        gap = float(np.linalg.norm(result.E[-1]))
    base = dict(
        lambda_fit=fit_decay_rate(result.t, err) if len(err) > 1 else math.nan,
        final_error=float(err[-1]) if len(err) else math.nan, final_gap=gap, tol_asym=tol, bound_C=bound_C,
        eps=eps, hold=hold,
    )
    if not result.completed:
        return StabilityVerdict("diverging", note=f"run stopped early: {result.status} at t={result.failure_t}", **base)
    if err[-1] <= tol and envelope_decreasing(result.t, err, 1e-3 * tol):
        return StabilityVerdict("asymptotic", **base)
    if np.max(err) <= bound_C * e0:
        return StabilityVerdict("lyapunov_stable", **base)
    if eps is not None:
        h = 0.0 if hold is None else hold
        after = err[result.t >= h]
        if after.size and np.all(after <= eps):
            return StabilityVerdict("attenuated", **{**base, "hold": h})
    return StabilityVerdict("diverging", **base)


def weakest(kinds) -> str:
    return max(kinds, key=ORDER.index)


def classify_with_probes(
    dyn,
    law,
    x0,
    T: float,
    dt: float,
    eps: float | None = None,
    hold: float | None = None,
    bound_C: float = 10.0,
    controller=None,
    nominal: SimulationResult | None = None,
) -> tuple[StabilityVerdict, SimulationResult]:
    """Classify the nominal run, then confirm ``asymptotic`` on nearby starts.

    A single trajectory can converge by accident (paper2d without disturbance
    from ``e(0) = (1, 1)``). When the nominal run looks asymptotic, the
    initial error is also placed along each coordinate axis with the same
    norm; the reported verdict is the weakest one seen. Probe runs use the
    step ``max(dt, 1e-2)``; they only decide the qualitative class.
    """
    x0 = np.asarray(x0, dtype=float)
    if nominal is None:
        nominal = integrate_closed_loop(dyn, x0, law, T, dt, controller=controller)
    verdict = classify(nominal, eps, hold, bound_C)
    if verdict.kind != "asymptotic":
        return verdict, nominal
    e0 = nominal.e0
    r = float(np.linalg.norm(e0))
    if r == 0:
        return verdict, nominal
    base_law = None if law is None else law.replace(e0=None)
    x_d0 = dyn.model.x_d(0.0)
    kinds, notes = [verdict.kind], []
    for i in range(dyn.n):
        d = np.zeros(dyn.n)
        d[i] = r
        run = integrate_closed_loop(
            dyn, x_d0 + d, base_law, T, max(dt, PROBE_DT), controller=controller,
            with_E=False, diagnostics=False,
        )
        v = classify(run, eps, hold, bound_C)
        kinds.append(v.kind)
        notes.append(f"e0 = {r:.6g} * axis{i + 1}: {v.label}, final |e| = {v.final_error:.3g}")
    kind = weakest(kinds)
    note = "" if kind == verdict.kind else "nominal run converged but a probe start did not"
    return replace(verdict, kind=kind, probes=tuple(notes), note=note), nominal
