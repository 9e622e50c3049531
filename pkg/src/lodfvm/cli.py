"""``lodfvm`` command line: bench, scenario and verify subcommands."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, PipelineProtocolError
from .grid import read_key_values

DEFAULT_STEPS = 100


@dataclass
class CliConfig:
    command: str
    preset: str | None = None
    config: Path | None = None
    ranks: int = 1
    factor: int = 2
    workers: int = 1
    steps: int = DEFAULT_STEPS
    seed: int = 0
    out: Path = Path(".")
    side_um: float | None = None
    substrates: int | None = None
    agents: int | None = None
    dt_min: float | None = None
    dx_um: float | None = None
    allow_full: bool = False
    backend: str | None = None
    inject: str | None = None
    extra: dict = field(default_factory=dict)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lodfvm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file; flags override its values")
    common.add_argument("--ranks", type=_positive_int, help="simulated ranks P (default 1)")
    common.add_argument("--factor", type=_positive_int, help="blocks per rank k (default 2)")
    common.add_argument("--workers", type=_positive_int, help="lane workers per rank (default 1)")
    common.add_argument("--steps", type=_positive_int, help=f"time steps (default {DEFAULT_STEPS})")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory (default .)")
    common.add_argument("--backend", choices=["cython", "python"], help="sweep kernel backend")

    bench = sub.add_parser("bench", parents=[common], help="time the pipelined solver on a preset")
    bench.add_argument("--preset", help="preset name, comma-separated list, or 'desk' for all desk presets")
    bench.add_argument("--allow-full", action="store_true", help="permit allocating full-scale presets")

    scen = sub.add_parser("scenario", parents=[common], help="end-to-end sink/source run")
    scen.add_argument("--side-um", type=_positive_float)
    scen.add_argument("--substrates", type=_positive_int)
    scen.add_argument("--agents", type=_nonneg_int)
    scen.add_argument("--dt-min", type=_positive_float)
    scen.add_argument("--dx-um", type=_positive_float)

    ver = sub.add_parser("verify", parents=[common], help="fast correctness checks")
    ver.add_argument("--inject", choices=["sign-flip", "drop-frontier"], help=argparse.SUPPRESS)
    return parser


_CASTS: dict[str, Callable[[str], object]] = {
    "preset": str, "ranks": int, "factor": int, "workers": int, "steps": int, "seed": int,
    "out": Path, "side_um": float, "substrates": int, "agents": int, "dt_min": float, "dx_um": float,
    "allow_full": lambda v: v.lower() in ("1", "true", "yes", "on"), "backend": str,
}


def parse_args(argv: Sequence[str] | None = None) -> CliConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = CliConfig(command=ns.command)
    if ns.config is not None:
        cfg.config = ns.config
        try:
            values = read_key_values(ns.config)
        except (OSError, ConfigurationError) as exc:
            parser.error(str(exc))
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key in _CASTS:
                try:
                    setattr(cfg, key, _CASTS[key](raw))
                except ValueError:
                    parser.error(f"{ns.config}: bad value for {key}: {raw!r}")
            else:
                cfg.extra[key] = raw
    for key, value in vars(ns).items():
        if key in ("command", "config") or value is None or value is False:
            continue
        setattr(cfg, key, value)
    if cfg.ranks < 1 or cfg.factor < 1 or cfg.workers < 1 or cfg.steps < 1:
        parser.error("ranks, factor, workers and steps must all be >= 1")
    return cfg


# --------------------------------------------------------------------------
# commands

def cmd_bench(cfg: CliConfig) -> int:
    from .metrics import OpWeights, PRESETS, get_preset, run_bench, write_bench_csv

    names = cfg.preset or "liver4pct-desk"
    if names == "desk":
        names = ",".join(n for n in PRESETS if n.endswith("-desk"))
    presets = [get_preset(n.strip()) for n in names.split(",") if n.strip()]
    weights = OpWeights()
    backend = kernels.get_backend(cfg.backend)
    reports = []
    print(f"# kernels={backend.BACKEND} flop weights: {weights}")
    for p in presets:
        r = run_bench(p, cfg.ranks, cfg.factor, cfg.steps, workers=cfg.workers, weights=weights,
                      seed=cfg.seed, backend=backend, allow_full=cfg.allow_full)
        reports.append(r)
        print(
            f"{r.preset}: {r.nx}x{r.ny}x{r.nz}x{r.S} P={r.P} nb={r.nb} mean {r.mean_ms:.3f} ms/step "
            f"({r.steps} steps) systems={r.systems} flop={r.flop} eq/s={r.eq_per_s:.4g} "
            f"field={r.field_bytes} B"
        )
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = write_bench_csv(cfg.out / "bench.csv", reports)
    print(f"wrote {path}")
    return 0


def cmd_scenario(cfg: CliConfig) -> int:
    from .scenario import ScenarioConfig, run_scenario

    kw = {}
    for src, dst in (("side_um", "side"), ("substrates", "n_substrates"), ("agents", "n_agents"),
                     ("dt_min", "dt"), ("dx_um", "dx")):
        if getattr(cfg, src) is not None:
            kw[dst] = getattr(cfg, src)
    for key in ("diffusion", "decay", "gaussian_amplitude", "gaussian_sigma", "agent_volume",
                "uptake_rate", "secretion_rate", "saturation_density"):
        if key in cfg.extra:
            kw[key] = float(cfg.extra[key])
    sc = ScenarioConfig(steps=cfg.steps, seed=cfg.seed, **kw)
    report = run_scenario(sc, cfg.ranks, cfg.factor, cfg.out, workers=cfg.workers,
                          backend=kernels.get_backend(cfg.backend))
    for i, (name, ms) in enumerate(report.stage_ms.items(), 1):
        print(f"({i}) {name:<24s} {ms:12.3f} ms")
    for s, (m0, m1) in enumerate(zip(report.initial_mass, report.final_mass)):
        print(f"substrate {s}: mass {m0:.6e} -> {m1:.6e}")
    print(f"snapshots: {report.initial_snapshot} {report.final_snapshot}")
    print(f"report: {report.report_csv} {report.metadata}")
    return 0


def verify_checks(inject: str | None = None, backend=None) -> list[tuple[str, bool, str]]:
    """Fast acceptance subset. ``inject`` plants a known defect to prove the checks bite."""
    from .coeffs import precompute
    from .grid import DensityField, GridSpec, SubstrateParams, total_mass
    from .oracle import analytic_decay
    from .pipeline import DropFrontier, RankGroup
    from .solver import StepCoefficients, step

    results = []
    rng = np.random.default_rng(1)

    # mass conservation, lambda = 0
    spec = GridSpec.from_counts(16, 16, 16, 2, dt=0.01)
    subs = SubstrateParams([1e5, 2e3], [0.0, 0.0])
    sign = 1.0 if inject == "sign-flip" else -1.0
    coeffs = StepCoefficients(
        precompute(0, spec.nx, spec.dx, spec.dt, subs, lower_sign=sign),
        precompute(1, spec.ny, spec.dy, spec.dt, subs, lower_sign=sign),
        precompute(2, spec.nz, spec.dz, spec.dt, subs, lower_sign=sign),
    )
    f = DensityField(spec, rng.random(spec.n_values))
    m0 = [total_mass(f, s) for s in range(2)]
    for _ in range(20):
        step(f, coeffs, backend=backend)
    drift = max(abs(total_mass(f, s) - m0[s]) / m0[s] for s in range(2))
    results.append(("mass conservation (16^3x2, 20 steps)", drift <= 1e-10, f"max relative drift {drift:.3e}"))

    # closed-form decay
    spec = GridSpec.from_counts(8, 8, 8, 1, dt=0.1)
    subs = SubstrateParams([0.0], [3.0])
    f = DensityField.filled(spec, 8.0)
    c = StepCoefficients.build(spec, subs)
    worst = 0.0
    for k in range(1, 6):
        step(f, c, backend=backend)
        expect = analytic_decay(8.0, 3.0, 0.1, k)
        worst = max(worst, float(np.max(np.abs(f.data - expect))) / expect)
    results.append(("decay closed form (5 steps)", worst <= 1e-13, f"max relative error {worst:.3e}"))

    # pipelined == serial
    spec = GridSpec.from_counts(16, 16, 16, 2, dt=0.01)
    subs = SubstrateParams([1e5, 2e3], [0.1, 0.0])
    src = DensityField(spec, rng.random(spec.n_values))
    ref = src.copy()
    step(ref, StepCoefficients.build(spec, subs), backend=backend)
    worst, detail = 0.0, ""
    ok = True
    for P in (1, 2, 3, 4):
        for nb in (1, 2, 4, 16):
            with RankGroup(spec, subs, P, nb=nb, backend=backend, recv_timeout=2.0) as g:
                if inject == "drop-frontier" and P > 1:
                    g.links[0].to_next = DropFrontier(g.links[0].to_next, "forward", 0)
                g.scatter(src)
                try:
                    g.step()
                except PipelineProtocolError as exc:
                    ok, detail = False, f"P={P} nb={nb}: {exc}"
                    break
                diff = float(np.max(np.abs(g.gather().data - ref.data)))
                worst = max(worst, diff)
        if not ok:
            break
    ok = ok and worst == 0.0
    results.append(("pipeline == serial (P<=4, 16^3x2)", ok, detail or f"max abs diff {worst:.3e}"))
    return results


def cmd_verify(cfg: CliConfig) -> int:
    backend = kernels.get_backend(cfg.backend)
    print(f"# kernels={backend.BACKEND}")
    results = verify_checks(cfg.inject, backend)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {"bench": cmd_bench, "scenario": cmd_scenario, "verify": cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    cfg = parse_args(argv)
    try:
        return COMMANDS[cfg.command](cfg)
    except (ConfigurationError, MemoryError, OSError, ImportError) as exc:
        print(f"lodfvm {cfg.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
