"""Grid-based estimation of the growth constants behind the synthesis.

Everything here is a finite-grid heuristic: a bound that holds on the sampled
times and probe points is reported as ``verified-on-grid``, never as proven
for all t >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentedErrorDynamics, numerical_rank
from .expr import DomainError
from .model import ErrorDynamics

SAFETY = 1e-9
ZERO_REMAINDER = 1e-14


@dataclass(frozen=True)
class Status:
    ok: bool
    t: float | None = None
    detail: str = ""

    def __str__(self):
        if self.ok:
            return "verified-on-grid"
        where = "" if self.t is None else f"t={self.t:.6g}, "
        return f"violated({where}{self.detail})"


@dataclass(frozen=True)
class RankReport:
    required: int
    min_rank: int
    min_sigma: float
    first_violation_t: float | None

    @property
    def passed(self) -> bool:
        return self.first_violation_t is None


@dataclass
class AssumptionReport:
    gamma_xd: float
    gamma_ud: float
    gamma_w: float
    rank: RankReport
    beta1: float
    beta2: float
    lambda_star: float
    alpha: float
    beta3: float
    kappa: float
    status: dict[str, Status]
    T_check: float
    N_check: int
    augmented: bool = False
    slopes: tuple[float, float] = (0.0, 0.0)
    extras: dict = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        """Eigenvalue bound ``2 max(lambda*/alpha, lambda*)``; Re(lambda_i) must stay below minus this."""
        return 2.0 * max(self.lambda_star / self.alpha, self.lambda_star)

    @property
    def passed(self) -> bool:
        return all(s.ok for s in self.status.values())

    def to_text(self) -> str:
        rows = [
            ("mode", "augmented" if self.augmented else "fully-actuated"),
            ("T_check", self.T_check),
            ("N_check", self.N_check),
            ("gamma_xd", self.gamma_xd),
            ("gamma_ud", self.gamma_ud),
            ("gamma_w", self.gamma_w),
            ("rank_B.min", self.rank.min_rank),
            ("rank_B.required", self.rank.required),
            ("rank_B.min_sigma", self.rank.min_sigma),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda_star", self.lambda_star),
            ("alpha", self.alpha),
            ("beta3", self.beta3),
            ("kappa", self.kappa),
            ("eigenvalue_threshold", self.threshold),
        ]
        rows += [(f"assumption.{k}", v) for k, v in self.status.items()]
        rows += [(k, v) for k, v in self.extras.items()]
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in rows) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def time_grid(T_check: float, N_check: int) -> np.ndarray:
    if not T_check > 0 or N_check < 2:
        raise ValueError("need T_check > 0 and N_check >= 2")
    return np.linspace(0.0, float(T_check), int(N_check))


def check_A1(model, T_check: float, N_check: int = 200) -> tuple[float, float, float]:
    """Sup norms of ``x_d``, ``u_d`` and ``w`` over the grid."""
    g = np.zeros(3)
    for t in time_grid(T_check, N_check):
        vals = (model.x_d(t), model.u_d(t), model.w(t))
        for i, v in enumerate(vals):
            if not np.all(np.isfinite(v)):
                raise DomainError(f"non-finite trajectory value at t={t:.6g}")
            g[i] = max(g[i], float(np.linalg.norm(v)))
    return float(g[0]), float(g[1]), float(g[2])


def check_rank_B(dyn, T_check: float, N_check: int = 200) -> RankReport:
    n, m = dyn.n, dyn.m
    required = n if m == n else m
    min_rank, min_sigma, first = required, math.inf, None
    for t in time_grid(T_check, N_check):
        rank, smin, _ = numerical_rank(dyn.B(t))
        min_rank = min(min_rank, rank)
        min_sigma = min(min_sigma, smin)
        if rank != required and first is None:
            first = float(t)
    return RankReport(required, min_rank, float(min_sigma), first)


def loglinear_slope(t, y) -> float:
    """Least-squares slope of ``ln y`` against ``t``."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    if np.ptp(ly) == 0.0 or t.size < 2:
        return 0.0
    tc = t - t.mean()
    return float(tc @ (ly - ly.mean()) / (tc @ tc))


def exponential_prefactor(t, y, lam: float) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0
    return float((1.0 + SAFETY) * np.max(y * np.exp(-lam * np.asarray(t, dtype=float))))


def fit_exponential_bound(t, y) -> tuple[float, float]:
    """Fit ``y_k <= beta * exp(lambda* t_k)`` with ``lambda* >= 0``.

    ``lambda*`` is the clamped least-squares slope of ``ln y``; ``beta`` is
    the smallest prefactor making the bound hold on every sample, inflated by
    a relative safety factor of 1e-9.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("exponential bound needs finite positive samples")
    lam = max(0.0, loglinear_slope(t, y))
    return exponential_prefactor(t, y, lam), lam


def estimate_remainder_growth(
    dyn,
    T_check: float,
    N_check: int = 200,
    kappa_probe: float = 1.0,
    n_radii: int = 12,
    n_directions: int = 32,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Fit ``|r(e, 0, t)| <= beta3 |e|^alpha`` on ``|e| <= kappa_probe``.

    Returns ``(alpha, beta3, kappa)``. ``alpha`` is the log-log slope of the
    worst-case remainder against the radius, clamped to (0, 2].
    """
    if not kappa_probe > 0:
        raise ValueError("kappa_probe must be positive")
    base = getattr(dyn, "base", dyn)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, base.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(1e-4 * kappa_probe, kappa_probe, n_radii)
    v0 = np.zeros(base.m)
    worst = np.zeros(n_radii)
    samples = []
    for t in time_grid(T_check, N_check):
        fr = base.frame(t)
        for k, rho in enumerate(radii):
            for d in dirs:
                val = float(np.linalg.norm(fr.remainder(rho * d, v0)))
                worst[k] = max(worst[k], val)
                samples.append((rho, val))
    if worst.max() < ZERO_REMAINDER:
        return 2.0, 0.0, float(kappa_probe)
    usable = worst >= ZERO_REMAINDER
    if usable.sum() >= 2:
        lr, lw = np.log(radii[usable]), np.log(worst[usable])
        lc = lr - lr.mean()
        slope = float(lc @ (lw - lw.mean()) / (lc @ lc))
    else:
        slope = 2.0
    alpha = min(2.0, max(slope, 1e-6))
    rho, val = np.array(samples).T
    beta3 = float((1.0 + SAFETY) * np.max(val / rho**alpha))
    return alpha, beta3, float(kappa_probe)


def check_assumptions(
    dyn: ErrorDynamics,
    T_check: float,
    N_check: int = 200,
    kappa_probe: float = 1.0,
    augmented: AugmentedErrorDynamics | None = None,
    seed: int = 0,
) -> AssumptionReport:
    """Estimate all constants and certify them on the grid.

    For underactuated plants pass the augmented dynamics (or let a default
    orthonormal-complement augmentation be built); its square input matrix
    takes the place of ``B`` in the inverse-norm bounds.
    """
    model = dyn.model
    grid = time_grid(T_check, N_check)
    status: dict[str, Status] = {}

    try:
        gxd, gud, gw = check_A1(model, T_check, N_check)
        status["A1"] = Status(True)
    except DomainError as exc:
        gxd = gud = gw = math.inf
        status["A1"] = Status(False, None, str(exc))

    rank = check_rank_B(dyn, T_check, N_check)
    status["A2"] = (
        Status(True)
        if rank.passed
        else Status(False, rank.first_violation_t, f"rank {rank.min_rank} != {rank.required}")
    )

    square = dyn
    if dyn.m < dyn.n and rank.passed:
        square = augmented if augmented is not None else AugmentedErrorDynamics(dyn)

    inv_norm, inv_a_norm, sqrt_n_ok, singular_t = [], [], True, None
    if rank.passed:
        for t in grid:
            Bs = square.B(t)
            r, _, _ = numerical_rank(Bs)
            if r < dyn.n:
                singular_t = float(t)
                break
            Binv = np.linalg.inv(Bs)
            ni = float(np.linalg.norm(Binv))
            inv_norm.append(ni)
            inv_a_norm.append(float(np.linalg.norm(Binv @ square.A(t))))
            lhs = math.sqrt(dyn.n)
            if lhs > float(np.linalg.norm(Bs)) * ni * (1 + 1e-12):
                sqrt_n_ok = False

    if rank.passed and singular_t is None:
        y1, y2 = np.array(inv_norm), np.array(inv_a_norm)
        s1 = loglinear_slope(grid, y1)
        pos = y2 > 0
        s2 = loglinear_slope(grid[pos], y2[pos]) if pos.sum() >= 2 else 0.0
        lam = max(0.0, s1, s2)
        beta1 = exponential_prefactor(grid, y1, lam)
        beta2 = exponential_prefactor(grid, y2, lam)
        envelope = np.exp(lam * grid)
        ok3 = bool(np.all(y1 <= beta1 * envelope)) and sqrt_n_ok
        ok4 = bool(np.all(y2 <= beta2 * envelope))
        status["A3"] = Status(True) if ok3 else Status(False, None, "fitted bound not certified")
        status["A4"] = Status(True) if ok4 else Status(False, None, "fitted bound not certified")
    else:
        s1 = s2 = lam = 0.0
        beta1 = beta2 = math.inf
        why = "input matrix singular" if rank.passed else "rank condition fails"
        at = singular_t if singular_t is not None else rank.first_violation_t
        status["A3"] = Status(False, at, why)
        status["A4"] = Status(False, at, why)

    try:
        alpha, beta3, kappa = estimate_remainder_growth(dyn, T_check, N_check, kappa_probe, seed=seed)
        status["A5"] = Status(True)
    except DomainError as exc:
        alpha, beta3, kappa = 2.0, math.inf, kappa_probe
        status["A5"] = Status(False, None, str(exc))

    extras = {
        "sqrt_n_check": "pass" if (sqrt_n_ok and inv_norm) else "n/a" if not inv_norm else "fail",
        "trajectory_residual": model.max_trajectory_residual(T_check, N_check),
    }
    if square is not dyn:
        extras["augmentation"] = getattr(square.columns, "source", "custom")
    return AssumptionReport(
        gamma_xd=gxd, gamma_ud=gud, gamma_w=gw, rank=rank,
        beta1=beta1, beta2=beta2, lambda_star=lam,
        alpha=alpha, beta3=beta3, kappa=kappa,
        status=status, T_check=float(T_check), N_check=int(N_check),
        augmented=square is not dyn, slopes=(s1, s2), extras=extras,
    )
