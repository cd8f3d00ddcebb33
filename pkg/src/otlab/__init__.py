"""otlab: contraction of Wasserstein distances under convolution, numerically."""

from otlab.errors import OtlabError
from otlab.measures import (
    DiscreteMeasure,
    GridMeasure,
    GridSpec,
    Kernel,
    convolve,
    translate,
)
from otlab.ot_core import (
    CostConvention,
    DisplacementField,
    TransportSolution,
    solve_discrete,
    wp_1d,
)

__version__ = "0.1.0"

__all__ = [
    "CostConvention",
    "DiscreteMeasure",
    "DisplacementField",
    "GridMeasure",
    "GridSpec",
    "Kernel",
    "OtlabError",
    "TransportSolution",
    "convolve",
    "solve_discrete",
    "translate",
    "wp_1d",
]
