"""One diffusion-decay time step: Dirichlet overwrites interleaved with batched
X, Y and Z Thomas sweeps, in the order D, X, D, Y, D, Z, D.

All sweeps work in place on the flat density array.  The x-sweep treats the
whole (y, z, s) plane as unit-stride lanes and can be run over any lane
range and x sub-range, which is what the pipelined solver builds on.  The
y-sweep batches the (z, s) lanes of each x-plane, the z-sweep the substrate
lanes of each (x, y) column.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import kernels
from .coeffs import Axis, AxisCoefficients, precompute_all
from .errors import ConfigurationError, PipelineProtocolError
from .grid import DensityField, DirichletConditions, GridSpec, SubstrateParams, apply_dirichlet

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class LaneRange:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid lane range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


class StepCoefficients(NamedTuple):
    x: AxisCoefficients
    y: AxisCoefficients
    z: AxisCoefficients

    @classmethod
    def build(cls, spec: GridSpec, substrates: SubstrateParams) -> "StepCoefficients":
        return cls(*precompute_all(spec, substrates))


def split_range(n: int, parts: int) -> list[tuple[int, int]]:
    """Balanced contiguous split of [0, n): the first n % parts pieces get one extra."""
    parts = max(1, min(parts, n)) if n > 0 else 1
    base, extra = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        size = base + (i < extra)
        out.append((start, start + size))
        start += size
    return out


def _run_chunks(fn: Callable[[int, int], None], n: int, workers: int) -> None:
    chunks = split_range(n, workers)
    if len(chunks) == 1:
        fn(*chunks[0])
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for fut in [pool.submit(fn, lo, hi) for lo, hi in chunks]:
            fut.result()


def _check_axis(coeffs: AxisCoefficients, axis: Axis, spec: GridSpec) -> None:
    if coeffs.axis != axis:
        raise ConfigurationError(f"expected {axis.name} coefficients, got {coeffs.axis.name}")
    if coeffs.n_substrates != spec.n_substrates:
        raise ConfigurationError(
            f"coefficients for {coeffs.n_substrates} substrates, field has {spec.n_substrates}"
        )


def _check_seed(seed, m):
    if seed is not None and (seed.ndim != 1 or seed.shape[0] != m or not np.all(np.isfinite(seed))):
        raise PipelineProtocolError(f"frontier of shape {seed.shape} is not {m} finite values")


def sweep_x(
    field: DensityField,
    coeffs: AxisCoefficients,
    lanes: LaneRange | None = None,
    x_lo: int = 0,
    x_hi: int | None = None,
    incoming: np.ndarray | None = None,
    phase: str = FORWARD,
    *,
    x_offset: int = 0,
    backend=None,
) -> np.ndarray:
    """One phase of the x-direction Thomas sweep over local planes x_lo..x_hi.

    ``x_offset`` is the global x-index of the field's plane 0, so ``coeffs``
    always describes the global line.  ``incoming`` seeds the neighbor row
    that lies outside the field: the eliminated plane at global x-1 for the
    forward phase, the solved plane at global x+1 for the backward phase.
    When the neighbor row lies inside the field it is read from there.

    Returns a copy of the lane values at x_hi (forward) or x_lo (backward),
    which is the frontier a neighboring rank needs.
    """
    spec = field.spec
    _check_axis(coeffs, Axis.X, spec)
    k = kernels.default if backend is None else backend
    L = spec.plane_size
    if lanes is None:
        lanes = LaneRange(0, L)
    if x_hi is None:
        x_hi = spec.nx - 1
    if not (0 <= x_lo <= x_hi < spec.nx) or lanes.end > L:
        raise ValueError(f"x range [{x_lo}, {x_hi}] or lanes {lanes} outside the field")
    g_lo, g_hi = x_offset + x_lo, x_offset + x_hi
    if g_hi >= coeffs.n:
        raise ConfigurationError(f"global plane {g_hi} beyond the {coeffs.n}-plane x coefficients")
    n = x_hi - x_lo + 1
    data = field.data
    body = data[x_lo * L :]
    m = len(lanes)

    if phase == FORWARD:
        seed = None
        if g_lo > 0:
            if x_lo > 0:
                if incoming is not None:
                    raise PipelineProtocolError("forward frontier given for a plane inside the field")
                seed = data[(x_lo - 1) * L + lanes.start : (x_lo - 1) * L + lanes.end]
            elif incoming is None:
                raise PipelineProtocolError(f"forward sweep from global plane {g_lo} needs an incoming frontier")
            else:
                seed = np.ascontiguousarray(incoming, dtype=np.float64)
        elif incoming is not None:
            raise PipelineProtocolError("forward frontier given at the global line start")
        _check_seed(seed, m)
        k.forward_sweep(body, n, L, lanes.start, lanes.end, spec.n_substrates,
                        coeffs.lower, coeffs.denom[g_lo : g_hi + 1], seed)
        out = x_hi
    elif phase == BACKWARD:
        seed = None
        if g_hi < coeffs.n - 1:
            if x_hi < spec.nx - 1:
                if incoming is not None:
                    raise PipelineProtocolError("backward frontier given for a plane inside the field")
                seed = data[(x_hi + 1) * L + lanes.start : (x_hi + 1) * L + lanes.end]
            elif incoming is None:
                raise PipelineProtocolError(f"backward sweep from global plane {g_hi} needs an incoming frontier")
            else:
                seed = np.ascontiguousarray(incoming, dtype=np.float64)
        elif incoming is not None:
            raise PipelineProtocolError("backward frontier given at the global line end")
        _check_seed(seed, m)
        k.backward_sweep(body, n, L, lanes.start, lanes.end, spec.n_substrates,
                         coeffs.constant_c[g_lo : g_hi + 1], seed)
        out = x_lo
    else:
        raise ValueError(f"phase must be {FORWARD!r} or {BACKWARD!r}, got {phase!r}")
    return data[out * L + lanes.start : out * L + lanes.end].copy()


def solve_x(field: DensityField, coeffs: AxisCoefficients, *, workers: int = 1, backend=None) -> None:
    """Full x-direction solve of a field holding the whole x-range."""
    L = field.spec.plane_size

    def run(lo, hi):
        sweep_x(field, coeffs, LaneRange(lo, hi), phase=FORWARD, backend=backend)
        sweep_x(field, coeffs, LaneRange(lo, hi), phase=BACKWARD, backend=backend)

    _run_chunks(run, L, workers)


def sweep_y(field: DensityField, coeffs: AxisCoefficients, *, workers: int = 1, backend=None) -> None:
    spec = field.spec
    _check_axis(coeffs, Axis.Y, spec)
    if coeffs.n != spec.ny:
        raise ConfigurationError(f"{coeffs.n}-row y coefficients for ny={spec.ny}")
    k = kernels.default if backend is None else backend
    L = spec.plane_size
    lanes = spec.nz * spec.n_substrates

    def run(x0, x1):
        k.solve_batch(field.data[x0 * L :], x1 - x0, L, spec.ny, lanes, lanes, spec.n_substrates,
                      coeffs.lower, coeffs.denom, coeffs.constant_c)

    _run_chunks(run, spec.nx, workers)


def sweep_z(field: DensityField, coeffs: AxisCoefficients, *, workers: int = 1, backend=None) -> None:
    spec = field.spec
    _check_axis(coeffs, Axis.Z, spec)
    if coeffs.n != spec.nz:
        raise ConfigurationError(f"{coeffs.n}-row z coefficients for nz={spec.nz}")
    k = kernels.default if backend is None else backend
    S = spec.n_substrates
    column = spec.nz * S

    def run(c0, c1):
        k.solve_batch(field.data[c0 * column :], c1 - c0, column, spec.nz, S, S, S,
                      coeffs.lower, coeffs.denom, coeffs.constant_c)

    _run_chunks(run, spec.nx * spec.ny, workers)


def check_coefficients(spec: GridSpec, coeffs: Sequence[AxisCoefficients], global_nx: int | None = None) -> None:
    cx, cy, cz = coeffs
    for c, axis in ((cx, Axis.X), (cy, Axis.Y), (cz, Axis.Z)):
        _check_axis(c, axis, spec)
    if cx.n != (spec.nx if global_nx is None else global_nx) or cy.n != spec.ny or cz.n != spec.nz:
        raise ConfigurationError(
            f"coefficient line lengths ({cx.n}, {cy.n}, {cz.n}) do not match grid {spec.shape[:3]}"
        )


def step(
    field: DensityField,
    coeffs: Sequence[AxisCoefficients],
    conds: DirichletConditions | None = None,
    *,
    workers: int = 1,
    backend=None,
) -> None:
    """Advance ``field`` by one time step in place."""
    check_coefficients(field.spec, coeffs)
    cx, cy, cz = coeffs
    if conds is None:
        conds = DirichletConditions.empty(field.spec)
    apply_dirichlet(field, conds)
    solve_x(field, cx, workers=workers, backend=backend)
    apply_dirichlet(field, conds)
    sweep_y(field, cy, workers=workers, backend=backend)
    apply_dirichlet(field, conds)
    sweep_z(field, cz, workers=workers, backend=backend)
    apply_dirichlet(field, conds)
