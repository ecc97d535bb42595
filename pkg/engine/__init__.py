from .expansion import (
    BoundaryLayerGrid, ExpansionResult, build_expansion, evaluate_at, evaluate_expansion, expansion_report,
)
from .oracle import DirectSolution, McEstimate, direct_solve, mc_estimate, simulate_path
from .validation import (
    RemainderReport, convergence_slope, gronwall_diagnostic, layer_efficacy, remainder, run_sweep,
)

__all__ = [
    "BoundaryLayerGrid",
    "ExpansionResult",
    "build_expansion",
    "evaluate_at",
    "evaluate_expansion",
    "expansion_report",
    "DirectSolution",
    "McEstimate",
    "direct_solve",
    "mc_estimate",
    "simulate_path",
    "RemainderReport",
    "convergence_slope",
    "gronwall_diagnostic",
    "layer_efficacy",
    "remainder",
    "run_sweep",
]
