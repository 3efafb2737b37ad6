"""XOSBPD peridynamics: corrected state-based kernels, solvers and scenario tooling."""

import os

# the TBB layer shipped with some numba wheels is too old and warns on first use
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .config import RunConfig, load_config
from .discretization import FamilyGraph, NodeSet, build_families
from .kernel import KernelData, WeightFunction, compute_kernels
from .mechanics import Body, MaterialParams, MechState
from .presets import preset
from .runner import run

__all__ = [
    "Body", "FamilyGraph", "KernelData", "MaterialParams", "MechState", "NodeSet", "RunConfig",
    "WeightFunction", "build_families", "compute_kernels", "load_config", "preset", "run",
]
