"""Precomputed Thomas-algorithm coefficients for one axis.

Each axis line solves the backward-Euler system

    -k u[i-1] + (1 + 2k + r) u[i] - k u[i+1] = d[i]

with k = dt*D/delta**2 and r = dt*lambda/3 (one third of the decay per
axis), and zero-flux end rows whose diagonal is 1 + k + r.  Because D and
lambda never change during a run, the elimination factors ``denom`` and
``constant_c`` are computed once; a sweep then costs one division and one
axpy per row forward and one axpy per row backward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import GridSpec, SubstrateParams


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2


@dataclass(frozen=True)
class AxisCoefficients:
    axis: Axis
    n: int
    k: np.ndarray           # (S,)  dt*D/delta^2
    decay_term: np.ndarray  # (S,)  dt*lambda/3
    lower: np.ndarray       # (S,)  sub-diagonal a_i, -k unless deliberately mutated
    denom: np.ndarray       # (n, S)
    constant_c: np.ndarray  # (n, S)

    @property
    def n_substrates(self) -> int:
        return self.k.shape[0]

    def rows(self, start: int, stop: int) -> "AxisCoefficients":
        """Coefficients for global rows [start, stop) (views, no copy)."""
        return AxisCoefficients(
            self.axis, stop - start, self.k, self.decay_term, self.lower,
            self.denom[start:stop], self.constant_c[start:stop],
        )

    def diagonals(self, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full (a, b, c) diagonals of substrate ``s``'s line matrix."""
        n = self.n
        k = self.k[s]
        b = np.full(n, 1.0 + 2.0 * k + self.decay_term[s])
        if n == 1:
            b[0] = 1.0 + self.decay_term[s]
        else:
            b[0] = b[-1] = 1.0 + k + self.decay_term[s]
        a = np.full(n, self.lower[s])
        c = np.full(n, -k)
        a[0] = 0.0
        c[-1] = 0.0
        return a, b, c


def precompute(
    axis: Axis | int,
    n: int,
    delta: float,
    dt: float,
    substrates: SubstrateParams,
    *,
    lower_sign: float = -1.0,
) -> AxisCoefficients:
    """Build ``denom`` and ``constant_c`` for an axis with ``n`` voxels.

    ``lower_sign`` exists only so tests can reproduce a sign-flipped
    sub-diagonal (a_i = +k); production code never passes it.
    """
    if n < 1:
        raise ConfigurationError(f"line length must be >= 1, got {n}")
    if not delta > 0:
        raise ConfigurationError(f"voxel spacing must be positive, got {delta}")
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")

    k = dt * substrates.diffusion / (delta * delta)
    r = dt * substrates.decay / 3.0
    lower = lower_sign * k
    upper = -k

    S = len(substrates)
    denom = np.empty((n, S))
    cc = np.zeros((n, S))
    if n == 1:
        # no neighbours, so no flux term
        denom[0] = 1.0 + r
    else:
        edge = 1.0 + k + r
        inner = 1.0 + 2.0 * k + r
        denom[0] = edge
        cc[0] = upper / edge
        for i in range(1, n):
            b = edge if i == n - 1 else inner
            denom[i] = b - lower * cc[i - 1]
            cc[i] = upper / denom[i]
        # constant_c of the last row multiplies a nonexistent x[n]
        cc[n - 1] = 0.0

    for arr in (k, r, lower, denom, cc):
        arr.flags.writeable = False
    return AxisCoefficients(Axis(axis), n, k, r, lower, denom, cc)


def precompute_all(spec: GridSpec, substrates: SubstrateParams) -> tuple[AxisCoefficients, ...]:
    """X, Y and Z coefficients for a full grid."""
    if len(substrates) != spec.n_substrates:
        raise ConfigurationError(
            f"{len(substrates)} substrate parameter sets for a {spec.n_substrates}-substrate grid"
        )
    return (
        precompute(Axis.X, spec.nx, spec.dx, spec.dt, substrates),
        precompute(Axis.Y, spec.ny, spec.dy, spec.dt, substrates),
        precompute(Axis.Z, spec.nz, spec.dz, spec.dt, substrates),
    )
