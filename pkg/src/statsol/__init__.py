"""Monte Carlo and multi-level Monte Carlo approximation of statistical
solutions of 1D scalar conservation laws."""

__version__ = "0.1.0"

from .ensemble import (  # noqa: E402
    EnsembleSummary,
    mean_variance,
    run_mc,
    structure_function_integrated,
    structure_function_local,
    three_point_moment,
)
from .fvm_core import (  # noqa: E402
    Boundary,
    FieldSample,
    FluxModel,
    GridSpec,
    NumericalFlux,
    Reconstruction,
    SchemeConfig,
    evolve,
    evolve_batch,
)
from .mlmc import LevelPlan, allocate_experimental, allocate_theoretical, run_mlmc  # noqa: E402
from .random_fields import FractionalBrownian, SeedSpec, UncertainShock  # noqa: E402
