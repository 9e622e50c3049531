"""Pure numpy fallback for the compiled sweep kernels in ``_kernels.pyx``.

Same signatures and the same per-element operation order, so both backends
round identically.  Each row update is vectorized over its lanes; when a
lane range is aligned to whole voxels the per-substrate coefficients are
broadcast instead of gathered.

Setting ``counter`` to a :class:`OpCounter` makes every kernel tally the
divisions and axpy updates it performs, one per lane and row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "python"


@dataclass
class OpCounter:
    div: int = 0
    axpy: int = 0
    naxpy: int = 0


counter: OpCounter | None = None


def _check(size, n, stride, lo, hi, n_subs, coef_rows):
    if n < 1 or n_subs < 1 or lo < 0 or hi < lo or hi > stride:
        raise ValueError(f"bad sweep geometry n={n} stride={stride} lanes=[{lo},{hi})")
    if (n - 1) * stride + hi > size:
        raise ValueError("sweep runs past the end of the data buffer")
    if coef_rows < n:
        raise ValueError(f"{coef_rows} coefficient rows for a {n}-row sweep")


def _block(data, n_outer, outer_stride, n, stride, lo, hi, n_subs):
    """Strided (n_outer, n, lanes...) view of the lanes, plus a coefficient picker.

    Aligned ranges get a trailing substrate axis so a per-substrate row
    broadcasts; otherwise the picker gathers coefficients by lane.
    """
    item = data.itemsize
    m = hi - lo
    if lo % n_subs == 0 and m % n_subs == 0:
        view = as_strided(
            data[lo:],
            shape=(n_outer, n, m // n_subs, n_subs),
            strides=(outer_stride * item, stride * item, n_subs * item, item),
        )
        return view, lambda row: row
    lanes = np.arange(lo, hi) % n_subs
    view = as_strided(data[lo:], shape=(n_outer, n, m), strides=(outer_stride * item, stride * item, item))
    return view, lambda row: row[lanes]


def _forward(view, pick, n, lower, denom, seed):
    low = pick(lower)
    if seed is None:
        view[:, 0] /= pick(denom[0])
    else:
        view[:, 0] -= low * seed.reshape(view.shape[2:])
        view[:, 0] /= pick(denom[0])
    for j in range(1, n):
        row = view[:, j]
        row -= low * view[:, j - 1]
        row /= pick(denom[j])


def _backward(view, pick, n, cc, seed):
    if seed is not None:
        view[:, n - 1] -= pick(cc[n - 1]) * seed.reshape(view.shape[2:])
    for j in range(n - 2, -1, -1):
        row = view[:, j]
        row -= pick(cc[j]) * view[:, j + 1]


def _tally(n_lines, n, seeded_fwd, seeded_bwd):
    if counter is None:
        return
    counter.div += n_lines * n
    counter.axpy += n_lines * (n - 1 + seeded_fwd)
    counter.naxpy += n_lines * (n - 1 + seeded_bwd)


def forward_sweep(data, n, stride, lane_lo, lane_hi, n_subs, lower, denom, seed=None):
    _check(data.shape[0], n, stride, lane_lo, lane_hi, n_subs, denom.shape[0])
    m = lane_hi - lane_lo
    if m == 0:
        return
    if seed is not None and seed.shape[0] != m:
        raise ValueError(f"seed holds {seed.shape[0]} values for {m} lanes")
    view, pick = _block(data, 1, 0, n, stride, lane_lo, lane_hi, n_subs)
    _forward(view, pick, n, lower, denom, seed)
    if counter is not None:
        counter.div += m * n
        counter.axpy += m * (n - 1 + (seed is not None))


def backward_sweep(data, n, stride, lane_lo, lane_hi, n_subs, constant_c, seed=None):
    _check(data.shape[0], n, stride, lane_lo, lane_hi, n_subs, constant_c.shape[0])
    m = lane_hi - lane_lo
    if m == 0:
        return
    if seed is not None and seed.shape[0] != m:
        raise ValueError(f"seed holds {seed.shape[0]} values for {m} lanes")
    view, pick = _block(data, 1, 0, n, stride, lane_lo, lane_hi, n_subs)
    _backward(view, pick, n, constant_c, seed)
    if counter is not None:
        counter.naxpy += m * (n - 1 + (seed is not None))


def solve_batch(data, n_outer, outer_stride, n, stride, n_lanes, n_subs, lower, denom, constant_c):
    if n_outer <= 0 or n_lanes == 0:
        return
    _check(data.shape[0] - (n_outer - 1) * outer_stride, n, stride, 0, n_lanes, n_subs,
           min(denom.shape[0], constant_c.shape[0]))
    view, pick = _block(data, n_outer, outer_stride, n, stride, 0, n_lanes, n_subs)
    _forward(view, pick, n, lower, denom, None)
    _backward(view, pick, n, constant_c, None)
    _tally(n_outer * n_lanes, n, 0, 0)
