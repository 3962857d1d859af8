"""Explicit transient simulation of ideal-switch power circuits."""

from .assembler import AssemblyError, LinearSystem, Topology, VarCatalog, assemble_full
from .engine import Simulator, SimulationError, simulate
from .graph import (
    BranchStatus,
    SwitchConfig,
    TopologyError,
    UnsupportedTopologyError,
    build_graph,
    classify_branches,
    conduction_path_exists,
    decompose_branches,
    parallel_on_groups,
)
from .lu import SingularMatrixError, lu_factor, lu_solve
from .netlist import NetlistDoc, NetlistError, parse_netlist, to_text, validate
from .rp import NoConvergence, RpConfig
from .waveform import Waveform, compare_waveforms

__all__ = [
    "AssemblyError",
    "BranchStatus",
    "LinearSystem",
    "NetlistDoc",
    "NetlistError",
    "NoConvergence",
    "RpConfig",
    "SimulationError",
    "Simulator",
    "SingularMatrixError",
    "SwitchConfig",
    "Topology",
    "TopologyError",
    "UnsupportedTopologyError",
    "VarCatalog",
    "Waveform",
    "assemble_full",
    "build_graph",
    "classify_branches",
    "compare_waveforms",
    "conduction_path_exists",
    "decompose_branches",
    "lu_factor",
    "lu_solve",
    "parallel_on_groups",
    "parse_netlist",
    "simulate",
    "to_text",
    "validate",
]
