"""Virtual-input augmentation for underactuated plants (m < n).

The input matrix ``B(t)`` (n x m) is completed to an invertible square
``Bt(t) = [B(t) | L(t)]`` by n - m extra columns. The augmented error field is
``Ft(e, vt) = F(e, vt[:m]) + L(t) vt[m:]``; its remainder equals the original
remainder evaluated on the first m components, since the virtual inputs enter
linearly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .expr import Expression, compile_vector, free_variables, parse
from .model import ErrorDynamics, Frame, ModelError


class RankDeficient(ValueError):
    pass


def rank_tolerance(s: np.ndarray, shape) -> float:
    """``max(sigma_max, 1) * dim * eps``.

    The floor at 1 makes a matrix whose largest singular value is itself at
    roundoff level (e.g. ``cos(pi/2)`` as a 1x1 B) count as rank deficient.
    """
    return max(float(s[0]), 1.0) * max(shape) * np.finfo(float).eps


def numerical_rank(M: np.ndarray) -> tuple[int, float, float]:
    """Return ``(rank, sigma_min, tol)`` from the singular values of ``M``."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0:
        return 0, 0.0, 0.0
    tol = rank_tolerance(s, M.shape)
    return int(np.sum(s > tol)), float(s[-1]), float(tol)


def _align(Q: np.ndarray, prev: np.ndarray) -> np.ndarray:
    # orthogonal Procrustes: rotate Q within its span to best match prev;
    # for one column this is plain sign alignment
    U, _, Vt = np.linalg.svd(Q.T @ prev)
    return Q @ (U @ Vt)


def _canonical_signs(Q: np.ndarray) -> np.ndarray:
    Q = Q.copy()
    for j in range(Q.shape[1]):
        col = Q[:, j]
        k = int(np.argmax(np.abs(col) > np.abs(col).max() * (1 - 1e-12)))
        if col[k] < 0:
            Q[:, j] = -col
    return Q


def augment(B: np.ndarray, prev_columns: np.ndarray | None = None):
    """Complete ``B`` with an orthonormal basis of the complement of its range.

    Returns ``(L, Bt, cond)`` with ``Bt = [B | L]``. Without ``prev_columns``
    each column is signed so that its largest-magnitude entry (first one on
    ties) is positive; with them, the basis is rotated to maximise the
    column-wise inner products so that ``L(t)`` varies continuously.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    if m >= n:
        raise ValueError(f"augmentation needs m < n (got n={n}, m={m})")
    rank, smin, _ = numerical_rank(B)
    if rank < m:
        raise RankDeficient(f"rank B = {rank} < m = {m}")
    U, _, _ = np.linalg.svd(B, full_matrices=True)
    Q = U[:, m:]
    if prev_columns is None:
        Q = _canonical_signs(Q)
    else:
        Q = _align(Q, np.asarray(prev_columns, dtype=float).reshape(n, n - m))
    Bt = np.hstack([B, Q])
    return Q, Bt, float(np.linalg.cond(Bt))


class ComplementColumns:
    """Default virtual-input columns: orthonormal complement of range B(t).

    Each evaluation is aligned against the complement at t = 0 rather than the
    previous call, so the columns are a pure function of t. This keeps them
    continuous as long as the complement turns by less than 90 degrees from
    its initial position.
    """

    source = "orthonormal-complement"

    def __init__(self, dyn: ErrorDynamics):
        self._L0 = augment(dyn.B(0.0))[0]

    def __call__(self, t: float, B: np.ndarray) -> np.ndarray:
        return augment(B, self._L0)[0]


class FixedColumns:
    """User-supplied columns ``l_{m+1}(t) .. l_n(t)``, each a list of n expressions in t."""

    source = "user"

    def __init__(self, columns: Sequence[Sequence[Expression | str]], n: int):
        cols = [[parse(c) if isinstance(c, str) else c for c in col] for col in columns]
        for col in cols:
            if len(col) != n:
                raise ModelError(f"augmentation column needs {n} entries, got {len(col)}")
            for e in col:
                if free_variables(e) - {"t"}:
                    raise ModelError(f"augmentation column entry {e} may only depend on t")
        self.k = len(cols)
        self.n = n
        # stored column-major; reshape to n x k
        self._fn = compile_vector([e for col in cols for e in col], ["t"], label="l")

    def __call__(self, t: float, B: np.ndarray) -> np.ndarray:
        return self._fn(t).reshape(self.k, self.n).T


@dataclass(frozen=True, eq=False)
class AugmentedFrame:
    """Augmented error dynamics at one instant; same interface as :class:`Frame`."""

    base: Frame
    L: np.ndarray
    B: np.ndarray

    @property
    def t(self):
        return self.base.t

    @property
    def A(self):
        return self.base.A

    @property
    def n_controls(self) -> int:
        return self.B.shape[1]


    def __post_init__(self):
        object.__setattr__(self, "m", self.base.B.shape[1])
        object.__setattr__(self, "magnitude", self.base.magnitude)

    def field(self, e, v) -> np.ndarray:
        m = self.m
        return self.base.field(e, v[:m]) + self.L @ v[m:]

    def remainder(self, e, v) -> np.ndarray:
        return self.field(e, v) - self.A @ e - self.B @ v

    def jac_v_field(self, e, v) -> np.ndarray:
        return np.hstack([self.base.jac_v_field(e, v[: self.m]), self.L])


class AugmentedErrorDynamics:
    """Error dynamics of the plant extended by virtual inputs ``L(t) vt[m:]``."""

    def __init__(self, dyn: ErrorDynamics, columns=None, cache_size: int = 64):
        if dyn.m >= dyn.n:
            raise ValueError("plant is fully actuated; augmentation not applicable")
        self.base = dyn
        self.model = dyn.model
        self.n = dyn.n
        self.m = dyn.n
        self.m_original = dyn.m
        self.columns = columns if columns is not None else ComplementColumns(dyn)
        if getattr(self.columns, "k", dyn.n - dyn.m) != dyn.n - dyn.m:
            raise ModelError(f"need {dyn.n - dyn.m} augmentation columns")
        self.frame = lru_cache(maxsize=cache_size)(self._make_frame)

    def _make_frame(self, t: float) -> AugmentedFrame:
        base = self.base.frame(t)
        L = self.columns(base.t, base.B)
        return AugmentedFrame(base=base, L=L, B=np.hstack([base.B, L]))

    def F(self, e, v, t):
        return self.frame(t).field(np.asarray(e, dtype=float), np.asarray(v, dtype=float))

    def A(self, t):
        return self.frame(t).A

    def B(self, t):
        return self.frame(t).B

    def remainder(self, e, v, t):
        return self.frame(t).remainder(np.asarray(e, dtype=float), np.asarray(v, dtype=float))
