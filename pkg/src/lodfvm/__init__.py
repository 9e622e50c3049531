"""Blocked, pipelined LOD finite-volume diffusion-decay solver."""

from .coeffs import Axis, AxisCoefficients, precompute, precompute_all
from .errors import ConfigurationError, PipelineProtocolError
from .grid import (
    DensityField,
    DirichletConditions,
    GridSpec,
    SubstrateParams,
    apply_dirichlet,
    offset,
    read_snapshot,
    total_mass,
    write_snapshot,
    x_plane_slice,
)
from .kernels import BACKEND
from .pipeline import (
    BlockPlan,
    FrontierMessage,
    Partition,
    RankGroup,
    partition_x,
    pipelined_step,
    plan_blocks,
    run_pipelined,
)
from .solver import LaneRange, StepCoefficients, step, sweep_x, sweep_y, sweep_z

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "AxisCoefficients",
    "precompute",
    "precompute_all",
    "ConfigurationError",
    "PipelineProtocolError",
    "DensityField",
    "DirichletConditions",
    "GridSpec",
    "SubstrateParams",
    "apply_dirichlet",
    "offset",
    "read_snapshot",
    "total_mass",
    "write_snapshot",
    "x_plane_slice",
    "BACKEND",
    "BlockPlan",
    "FrontierMessage",
    "Partition",
    "RankGroup",
    "partition_x",
    "pipelined_step",
    "plan_blocks",
    "run_pipelined",
    "LaneRange",
    "StepCoefficients",
    "step",
    "sweep_x",
    "sweep_y",
    "sweep_z",
]
