"""Operation counts, memory accounting and the solver benchmark harness.

Counts follow the standard TDMA accounting per line of n voxels: n
divisions and n-1 axpy updates forward, n-1 negated axpy updates backward.
Flop totals depend on the weights assigned to those primitives, which are
configurable and printed with every report.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _pykernels, kernels
from .errors import ConfigurationError
from .grid import DensityField, GridSpec, SubstrateParams
from .pipeline import DEFAULT_FACTOR, RankGroup
from .solver import StepCoefficients, step

CSV_FIELDS = [
    "preset", "nx", "ny", "nz", "S", "P", "factor", "nb", "steps",
    "mean_ms", "systems", "flop", "eq_per_s", "field_bytes",
]
BYTES_PER_VALUE = 8


@dataclass(frozen=True)
class OpWeights:
    w_div: int = 1
    w_axpy: int = 2
    w_naxpy: int = 2

    def __post_init__(self):
        if min(self.w_div, self.w_axpy, self.w_naxpy) < 1:
            raise ConfigurationError("flop weights must be >= 1")

    def __str__(self):
        return f"div={self.w_div} axpy={self.w_axpy} naxpy={self.w_naxpy}"


def count_systems(spec: GridSpec) -> int:
    """Tridiagonal systems solved per time step."""
    return spec.n_substrates * (spec.ny * spec.nz + spec.nx * spec.nz + spec.nx * spec.ny)


def ops_per_system(n: int, w: OpWeights = OpWeights()) -> int:
    if n < 1:
        raise ValueError("line length must be >= 1")
    return n * w.w_div + (n - 1) * w.w_axpy + (n - 1) * w.w_naxpy


def total_flop(spec: GridSpec, w: OpWeights = OpWeights()) -> int:
    nx, ny, nz = spec.nx, spec.ny, spec.nz
    return spec.n_substrates * (
        ops_per_system(nx, w) * ny * nz + ops_per_system(ny, w) * nx * nz + ops_per_system(nz, w) * nx * ny
    )


def field_bytes(spec: GridSpec) -> int:
    return spec.n_values * BYTES_PER_VALUE


def measured_flop(spec: GridSpec, w: OpWeights = OpWeights()) -> int:
    """Flop of one serial step counted primitive by primitive while it runs.

    Runs the numpy kernels with their operation counter attached, so the
    result comes from executed row updates, not from the closed form.
    """
    subs = SubstrateParams.uniform(spec.n_substrates, 1e3, 0.1)
    coeffs = StepCoefficients.build(spec, subs)
    f = DensityField.filled(spec, 1.0)
    counter = _pykernels.OpCounter()
    _pykernels.counter = counter
    try:
        step(f, coeffs, backend=_pykernels)
    finally:
        _pykernels.counter = None
    return counter.div * w.w_div + counter.axpy * w.w_axpy + counter.naxpy * w.w_naxpy


# --------------------------------------------------------------------------
# presets

@dataclass(frozen=True)
class Preset:
    name: str
    side_um: float
    n_substrates: int
    delta_um: float = 10.0
    full_scale: bool = False

    def spec(self, dt: float = 0.01) -> GridSpec:
        return GridSpec.cube(self.side_um, self.delta_um, self.n_substrates, dt)


_TABLE = [
    ("liver4pct", 5000, 2, 640),
    ("liver8pct", 10000, 4, 960),
    ("liver12.5pct", 15000, 8, 1120),
    ("liver16.6pct", 20000, 8, 1200),
    ("liver21pct", 25000, 8, 1280),
    ("liver100pct", 120000, 1, 1280),
]

PRESETS: dict[str, Preset] = {}
for _name, _side, _subs, _desk in _TABLE:
    PRESETS[_name] = Preset(_name, _side, _subs, full_scale=True)
    PRESETS[_name + "-desk"] = Preset(_name + "-desk", _desk, _subs)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


# --------------------------------------------------------------------------
# harness

@dataclass
class BenchReport:
    preset: str
    nx: int
    ny: int
    nz: int
    S: int
    P: int
    factor: int
    nb: int
    steps: int
    mean_ms: float
    systems: int
    flop: int
    eq_per_s: float
    field_bytes: int
    total_s: float = 0.0
    weights: OpWeights = field(default_factory=OpWeights)
    backend: str = ""

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_FIELDS}


def _available_bytes() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def run_bench(
    preset: Preset | str,
    P: int = 1,
    factor: int = DEFAULT_FACTOR,
    steps: int = 100,
    *,
    workers: int = 1,
    weights: OpWeights = OpWeights(),
    seed: int = 0,
    backend=None,
    allow_full: bool = False,
) -> BenchReport:
    """Time ``steps`` pipelined steps on a random field; report the mean per step."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    spec = preset.spec()
    need = field_bytes(spec)
    if preset.full_scale and not allow_full:
        raise ConfigurationError(
            f"preset {preset.name} needs {need / 1e9:.1f} GB of field storage; "
            "pass allow_full=True (--allow-full) to allocate it"
        )
    avail = _available_bytes()
    # slabs + scatter source
    if avail is not None and 2 * need > avail:
        raise MemoryError(
            f"preset {preset.name} needs ~{2 * need / 1e9:.2f} GB for field storage, "
            f"only {avail / 1e9:.2f} GB available"
        )
    subs = SubstrateParams.uniform(spec.n_substrates, 1e5, 0.1)
    try:
        src = DensityField(spec, np.random.default_rng(seed).random(spec.n_values))
        group = RankGroup(spec, subs, P, factor, workers=workers, backend=backend)
    except MemoryError as exc:
        raise MemoryError(f"allocating preset {preset.name} ({need} bytes of field) failed: {exc}") from exc
    with group:
        group.scatter(src)
        del src
        t0 = time.monotonic()
        for _ in range(steps):
            group.step()
        total = time.monotonic() - t0
    systems = count_systems(spec)
    return BenchReport(
        preset=preset.name, nx=spec.nx, ny=spec.ny, nz=spec.nz, S=spec.n_substrates, P=P,
        factor=factor, nb=group.plan.nb, steps=steps, mean_ms=1e3 * total / steps,
        systems=systems, flop=total_flop(spec, weights), eq_per_s=systems * steps / total,
        field_bytes=field_bytes(spec), total_s=total, weights=weights,
        backend=(backend or kernels.default).BACKEND,
    )


def write_bench_csv(path: str | Path, reports: list[BenchReport]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    return path
