"""Multiple SLE simulation, pure partition functions and crossing formulas."""

__version__ = "0.1.0"

from .arches import (  # noqa: E402
    ArchConfiguration, arch_to_dyck, classify_outcome, dimension, dyck_to_arch, enumerate_arches,
)
from .classical import classical_residual, integrate_classical, solve_classical_gradients  # noqa: E402
from .crossing import (  # noqa: E402
    cardy_crossing, fk_ising_crossing, generic_crossing, ising_spin_crossing, potts_crossing, potts_kappa,
)
from .engine import (  # noqa: E402
    DrivingState, LoewnerChain, SimulationOutcome, SleParameters, evolve_until, map_point, step,
    trace_points,
)
from .harness import (  # noqa: E402
    EstimationPlan, bessel_effective_dimension, estimate_arch_probabilities, estimate_mixed_hitting,
    hitting_probability_mixed, martingale_diagnostic,
)
from .partition import (  # noqa: E402
    ConformalData, PartitionFunction, make_partition_function, null_vector_residual, z_pure_I, z_pure_II,
)
from .special import hyp2f1  # noqa: E402
