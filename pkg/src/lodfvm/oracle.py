"""Independent reference solvers for checking the production kernels.

Nothing here is imported by the solver, pipeline or benchmark code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TridiagonalSystem:
    """a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i; a[0] and c[n-1] are ignored."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def n(self) -> int:
        return len(self.b)

    def dense(self) -> np.ndarray:
        n = self.n
        A = np.zeros((n, n))
        for i in range(n):
            A[i, i] = self.b[i]
            if i > 0:
                A[i, i - 1] = self.a[i]
            if i < n - 1:
                A[i, i + 1] = self.c[i]
        return A


def thomas_reference(sys: TridiagonalSystem) -> np.ndarray:
    """Textbook Thomas algorithm in scalar arithmetic, nothing precomputed."""
    n = sys.n
    a, b, c, d = (list(map(float, v)) for v in (sys.a, sys.b, sys.c, sys.d))
    cp = [0.0] * n
    dp = [0.0] * n
    if b[0] == 0.0:
        raise SingularSystemError("zero pivot in row 0")
    cp[0] = c[0] / b[0] if n > 1 else 0.0
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        if m == 0.0:
            raise SingularSystemError(f"zero pivot in row {i}")
        cp[i] = c[i] / m if i < n - 1 else 0.0
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m
    x = [0.0] * n
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.array(x)


def dense_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Gaussian elimination with partial pivoting on the full matrix."""
    A = sys.dense()
    x = np.array(sys.d, dtype=np.float64).copy()
    n = sys.n
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if A[piv, col] == 0.0:
            raise SingularSystemError(f"singular matrix at column {col}")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        for row in range(col + 1, n):
            f = A[row, col] / A[col, col]
            if f != 0.0:
                A[row, col:] -= f * A[col, col:]
                x[row] -= f * x[col]
    for row in range(n - 1, -1, -1):
        x[row] = (x[row] - A[row, row + 1 :] @ x[row + 1 :]) / A[row, row]
    return x


def analytic_decay(rho0: float, lam: float, dt: float, steps: int) -> float:
    """Density after ``steps`` full steps of pure decay (three axis thirds each)."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    return rho0 * (1.0 + dt * lam / 3.0) ** (-3 * steps)


def diffusion_system(n: int, k: float, r: float, d: np.ndarray) -> TridiagonalSystem:
    """The zero-flux backward-Euler line system, built from scratch."""
    a = np.full(n, -k)
    c = np.full(n, -k)
    b = np.full(n, 1.0 + 2.0 * k + r)
    b[0] = b[-1] = 1.0 + k + r
    if n == 1:
        b[0] = 1.0 + r
    a[0] = 0.0
    c[-1] = 0.0
    return TridiagonalSystem(a, b, c, np.asarray(d, dtype=np.float64))
