"""Dense LU factorization with partial pivoting."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

SINGULAR_RTOL = 1e-12


class SingularMatrixError(ArithmeticError):
    """Raised when a pivot falls below ``SINGULAR_RTOL`` times the largest row norm.

    ``step`` is the 1-based elimination step at which it happened.
    """

    def __init__(self, step: int, pivot: float, scale: float, key=None):
        self.step = step
        self.pivot = pivot
        self.scale = scale
        self.key = key
        super().__init__(
            f"singular matrix at step {step}: |pivot|={pivot:.3g} < {SINGULAR_RTOL:g}*{scale:.3g}"
        )


@dataclass(frozen=True)
class LuFactors:
    lu: np.ndarray  # unit-lower L below the diagonal, U on and above
    piv: np.ndarray  # row i of P@A is row piv[i] of A
    scale: float  # largest |pivot|
    key: object = None

    @property
    def n(self):
        return self.lu.shape[0]

    def L(self):
        return np.tril(self.lu, -1) + np.eye(self.n)

    def U(self):
        return np.triu(self.lu)

    def P(self):
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.piv] = 1.0
        return P


@numba.njit(cache=True)
def _eliminate(A, piv, threshold):
    """In-place partial-pivot elimination; returns (failed 1-based step or 0, pivot, largest pivot)."""
    n = A.shape[0]
    big = 0.0
    for k in range(n):
        p = k
        best = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > best:
                best = abs(A[i, k])
                p = i
        if not best > threshold:
            return k + 1, best, big
        if p != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = tmp
            t = piv[k]
            piv[k] = piv[p]
            piv[p] = t
        pivot = A[k, k]
        big = max(big, best)
        for i in range(k + 1, n):
            A[i, k] /= pivot
            m = A[i, k]
            if m != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= m * A[k, j]
    return 0, 0.0, big


@numba.njit(cache=True)
def _substitute(lu, piv, b):
    n = lu.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = b[piv[i]]
    for i in range(1, n):
        acc = y[i]
        for j in range(i):
            acc -= lu[i, j] * y[j]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= lu[i, j] * y[j]
        y[i] = acc / lu[i, i]
    return y


def lu_factor(A, key=None) -> LuFactors:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[0]
    row_norm = float(np.abs(A).sum(axis=1).max())
    piv = np.arange(n)
    step, pivot, big = _eliminate(A, piv, SINGULAR_RTOL * row_norm)
    if step:
        raise SingularMatrixError(step, pivot, row_norm, key)
    return LuFactors(A, piv, big, key)


def lu_solve(f: LuFactors, b) -> np.ndarray:
    """Forward and back substitution."""
    b = np.asarray(b, dtype=float)
    if b.shape != (f.n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({f.n},)")
    return _substitute(f.lu, f.piv, b)


class FactorCache:
    """Factorizations keyed by switch configuration.

    With ``enabled=False`` every lookup rebuilds (used to measure the
    benefit of reuse).
    """

    def __init__(self, build, enabled: bool = True):
        self._build = build
        self.enabled = enabled
        self._store = {}
        self.builds = 0

    def get(self, key):
        if self.enabled and key in self._store:
            return self._store[key]
        value = self._build(key)
        self.builds += 1
        if self.enabled:
            self._store[key] = value
        return value

    def __len__(self):
        return len(self._store)


def fast_solve(f: LuFactors, b) -> np.ndarray:
    """``lu_solve`` without argument checks, for the step loop."""
    return _substitute(f.lu, f.piv, b)
