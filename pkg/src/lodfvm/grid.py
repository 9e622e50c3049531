"""Microenvironment geometry, contiguous density storage and snapshot I/O.

Densities of all substrates live in one flat float64 array ordered
x-slowest, then y, then z, with the substrate index varying fastest::

    offset(x, y, z, s) = s + S * (z + nz * (y + ny * x))

so a single x-plane is one contiguous run of ``ny * nz * S`` values and the
(y, z, s) lane plane used by the x-sweep is unit-stride.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError

SNAPSHOT_MAGIC = b"BFVB"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII3d")
assert _HEADER.size == 48

_MAX_INDEX = np.iinfo(np.intp).max


@dataclass(frozen=True)
class GridSpec:
    """Box geometry and discretization. Lengths in µm, dt in minutes."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    dx: float
    dy: float
    dz: float
    n_substrates: int = 1
    dt: float = 0.01
    nx: int = field(init=False)
    ny: int = field(init=False)
    nz: int = field(init=False)

    def __post_init__(self):
        for name in ("dx", "dy", "dz", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_substrates < 1:
            raise ConfigurationError("n_substrates must be >= 1")
        counts = []
        for lo, hi, d, axis in (
            (self.x_min, self.x_max, self.dx, "x"),
            (self.y_min, self.y_max, self.dy, "y"),
            (self.z_min, self.z_max, self.dz, "z"),
        ):
            n = int(round((hi - lo) / d))
            if n < 1:
                raise ConfigurationError(f"{axis}-axis holds no voxels ({lo}..{hi}, step {d})")
            counts.append(n)
        object.__setattr__(self, "nx", counts[0])
        object.__setattr__(self, "ny", counts[1])
        object.__setattr__(self, "nz", counts[2])
        if self.n_values > _MAX_INDEX:
            raise ConfigurationError("grid does not fit the addressable index range")

    @classmethod
    def cube(cls, side: float, delta: float = 10.0, n_substrates: int = 1, dt: float = 0.01) -> "GridSpec":
        return cls(0.0, side, 0.0, side, 0.0, side, delta, delta, delta, n_substrates, dt)

    @classmethod
    def from_counts(
        cls, nx: int, ny: int, nz: int, n_substrates: int = 1, delta: float = 10.0, dt: float = 0.01
    ) -> "GridSpec":
        return cls(0.0, nx * delta, 0.0, ny * delta, 0.0, nz * delta, delta, delta, delta, n_substrates, dt)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.nx, self.ny, self.nz, self.n_substrates)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_values(self) -> int:
        return self.nx * self.ny * self.nz * self.n_substrates

    @property
    def plane_size(self) -> int:
        """Values per x-plane: the lane count of the x-sweep."""
        return self.ny * self.nz * self.n_substrates

    @property
    def voxel_volume(self) -> float:
        return self.dx * self.dy * self.dz

    def slab(self, x_start: int, x_end: int) -> "GridSpec":
        """Geometry of the sub-box holding global x-planes [x_start, x_end)."""
        if not 0 <= x_start < x_end <= self.nx:
            raise ConfigurationError(f"invalid slab [{x_start}, {x_end}) for nx={self.nx}")
        return GridSpec(
            self.x_min + x_start * self.dx,
            self.x_min + x_end * self.dx,
            self.y_min, self.y_max, self.z_min, self.z_max,
            self.dx, self.dy, self.dz, self.n_substrates, self.dt,
        )

    def voxel_center(self, x: int, y: int, z: int) -> tuple[float, float, float]:
        return (
            self.x_min + (x + 0.5) * self.dx,
            self.y_min + (y + 0.5) * self.dy,
            self.z_min + (z + 0.5) * self.dz,
        )

    def voxel_of(self, px: float, py: float, pz: float) -> tuple[int, int, int]:
        """Voxel containing a point; points on the upper face map to the last voxel."""
        ix = min(int((px - self.x_min) // self.dx), self.nx - 1)
        iy = min(int((py - self.y_min) // self.dy), self.ny - 1)
        iz = min(int((pz - self.z_min) // self.dz), self.nz - 1)
        if ix < 0 or iy < 0 or iz < 0:
            raise IndexError(f"point ({px}, {py}, {pz}) lies outside the domain")
        return ix, iy, iz

    def voxel_index(self, x: int, y: int, z: int) -> int:
        return z + self.nz * (y + self.ny * x)


@dataclass(frozen=True)
class SubstrateParams:
    """Per-substrate diffusion coefficient (µm²/min) and decay rate (1/min)."""

    diffusion: np.ndarray
    decay: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.diffusion, dtype=np.float64)).copy()
        lam = np.atleast_1d(np.asarray(self.decay, dtype=np.float64)).copy()
        if d.shape != lam.shape or d.ndim != 1:
            raise ConfigurationError("diffusion and decay must be 1-D arrays of equal length")
        if np.any(d < 0) or np.any(lam < 0) or not (np.all(np.isfinite(d)) and np.all(np.isfinite(lam))):
            raise ConfigurationError("diffusion and decay must be finite and non-negative")
        d.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "diffusion", d)
        object.__setattr__(self, "decay", lam)

    @classmethod
    def uniform(cls, n_substrates: int, diffusion: float, decay: float) -> "SubstrateParams":
        return cls(np.full(n_substrates, diffusion), np.full(n_substrates, decay))

    def __len__(self) -> int:
        return len(self.diffusion)


class DensityField:
    """All substrate densities of a (sub)domain in one contiguous float64 array."""

    def __init__(self, spec: GridSpec, data: np.ndarray | None = None):
        self.spec = spec
        if data is None:
            data = np.zeros(spec.n_values, dtype=np.float64)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
            if data.size != spec.n_values:
                raise ConfigurationError(f"data holds {data.size} values, grid needs {spec.n_values}")
        self.data = data

    @classmethod
    def filled(cls, spec: GridSpec, value: float) -> "DensityField":
        return cls(spec, np.full(spec.n_values, value, dtype=np.float64))

    def view(self) -> np.ndarray:
        """Writable (nx, ny, nz, S) view sharing memory with ``data``."""
        return self.data.reshape(self.spec.shape)

    def copy(self) -> "DensityField":
        return DensityField(self.spec, self.data.copy())

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def __repr__(self):
        return f"DensityField(shape={self.spec.shape})"


def offset(spec: GridSpec, x: int, y: int, z: int, s: int) -> int:
    if not (0 <= x < spec.nx and 0 <= y < spec.ny and 0 <= z < spec.nz and 0 <= s < spec.n_substrates):
        raise IndexError(f"({x}, {y}, {z}, {s}) outside grid {spec.shape}")
    return s + spec.n_substrates * (z + spec.nz * (y + spec.ny * x))


def x_plane_slice(spec: GridSpec, x: int) -> slice:
    """Half-open flat-index range of x-plane ``x``."""
    if not 0 <= x < spec.nx:
        raise IndexError(f"x={x} outside [0, {spec.nx})")
    n = spec.plane_size
    return slice(x * n, (x + 1) * n)


@dataclass(frozen=True)
class DirichletConditions:
    """Sparse voxel -> (per-substrate value, per-substrate active flag) map.

    Build with :meth:`from_entries`; the flattened ``offsets``/``values``
    arrays hold only active (voxel, substrate) pairs, in voxel order.
    """

    spec: GridSpec
    entries: Mapping[int, tuple[tuple[float, ...], tuple[bool, ...]]]
    offsets: np.ndarray = field(repr=False, compare=False)
    values: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def empty(cls, spec: GridSpec) -> "DirichletConditions":
        return cls.from_entries(spec, {})

    @classmethod
    def from_entries(
        cls,
        spec: GridSpec,
        entries: Mapping[int, tuple[Sequence[float], Sequence[bool]]],
    ) -> "DirichletConditions":
        S = spec.n_substrates
        frozen = {}
        offs, vals = [], []
        for voxel in sorted(entries):
            values, active = entries[voxel]
            if not 0 <= voxel < spec.n_voxels:
                raise IndexError(f"Dirichlet voxel {voxel} outside [0, {spec.n_voxels})")
            values = tuple(float(v) for v in values)
            active = tuple(bool(a) for a in active)
            if len(values) != S or len(active) != S:
                raise ConfigurationError(f"Dirichlet entry for voxel {voxel} needs {S} values and flags")
            frozen[int(voxel)] = (values, active)
            for s in range(S):
                if active[s]:
                    offs.append(voxel * S + s)
                    vals.append(values[s])
        return cls(
            spec,
            frozen,
            np.asarray(offs, dtype=np.intp),
            np.asarray(vals, dtype=np.float64),
        )

    @classmethod
    def boundary(cls, spec: GridSpec, value: float | Sequence[float]) -> "DirichletConditions":
        """Pin every substrate on every face voxel of the box to ``value``."""
        S = spec.n_substrates
        vals = tuple(np.broadcast_to(np.asarray(value, dtype=np.float64), (S,)))
        on = (True,) * S
        entries = {}
        for x in range(spec.nx):
            for y in range(spec.ny):
                for z in range(spec.nz):
                    if x in (0, spec.nx - 1) or y in (0, spec.ny - 1) or z in (0, spec.nz - 1):
                        entries[spec.voxel_index(x, y, z)] = (vals, on)
        return cls.from_entries(spec, entries)

    def __len__(self) -> int:
        return len(self.entries)

    def restrict(self, x_start: int, x_end: int) -> "DirichletConditions":
        """Conditions for the slab [x_start, x_end), re-indexed to local voxels."""
        local_spec = self.spec.slab(x_start, x_end)
        per_plane = self.spec.ny * self.spec.nz
        lo, hi = x_start * per_plane, x_end * per_plane
        local = {v - lo: e for v, e in self.entries.items() if lo <= v < hi}
        return DirichletConditions.from_entries(local_spec, local)


def apply_dirichlet(field: DensityField, conds: DirichletConditions) -> None:
    if conds.offsets.size:
        field.data[conds.offsets] = conds.values


def total_mass(field: DensityField, s: int) -> float:
    spec = field.spec
    if not 0 <= s < spec.n_substrates:
        raise IndexError(f"substrate {s} outside [0, {spec.n_substrates})")
    return spec.voxel_volume * float(np.sum(field.data[s :: spec.n_substrates]))


def write_snapshot(
    path: str | Path,
    field: DensityField,
    substrates: SubstrateParams | None = None,
) -> Path:
    """Write ``field`` as a raw little-endian snapshot plus a ``.meta`` sidecar."""
    path = Path(path)
    spec = field.spec
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, spec.nx, spec.ny, spec.nz, spec.n_substrates,
        spec.dx, spec.dy, spec.dz,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(field.data.astype("<f8", copy=False).tobytes())
    lines = [
        f"nx={spec.nx}", f"ny={spec.ny}", f"nz={spec.nz}", f"n_substrates={spec.n_substrates}",
        f"x_min={spec.x_min!r}", f"y_min={spec.y_min!r}", f"z_min={spec.z_min!r}",
        f"dt={spec.dt!r}",
    ]
    if substrates is not None:
        lines.append("diffusion=" + ",".join(repr(float(v)) for v in substrates.diffusion))
        lines.append("decay=" + ",".join(repr(float(v)) for v in substrates.decay))
    path.with_suffix(".meta").write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path: str | Path) -> DensityField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, nx, ny, nz, S, dx, dy, dz = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    meta = path.with_suffix(".meta")
    origin = {"x_min": 0.0, "y_min": 0.0, "z_min": 0.0}
    dt = 0.01
    if meta.exists():
        kv = read_key_values(meta)
        origin = {k: float(kv.get(k, 0.0)) for k in origin}
        dt = float(kv.get("dt", dt))
    spec = GridSpec(
        origin["x_min"], origin["x_min"] + nx * dx,
        origin["y_min"], origin["y_min"] + ny * dy,
        origin["z_min"], origin["z_min"] + nz * dz,
        dx, dy, dz, S, dt,
    )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != spec.n_values:
        raise ValueError(f"{path}: payload holds {data.size} values, header implies {spec.n_values}")
    return DensityField(spec, data.astype(np.float64))


def read_key_values(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
