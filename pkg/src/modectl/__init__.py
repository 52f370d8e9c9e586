"""Learning and stabilizing energy-efficient oscillation modes of an elastic
double pendulum.

The pipeline shapes the pendulum's potential with a small learned network so
that the autonomous closed loop performs a periodic pick-and-place motion,
then stabilizes that motion with a passivity-aware feedback and certifies its
local orbital stability.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    CertTolerances,
    ConfigError,
    RunConfig,
    StabilizeSettings,
    config_from_dict,
    config_to_dict,
    load_config,
)
from .dynamics import (
    PendulumParams,
    State,
    VectorField,
    hamiltonian,
    kinetic_energy,
    mass_matrix,
    mass_matrix_inverse,
    open_loop_potential,
    vector_field,
)
from .integrator import (
    NonFiniteStateError,
    NonPositivePeriodError,
    SensitivityResult,
    ShapeMismatchError,
    TimeGrid,
    Trajectory,
    TrajectoryCotangents,
    backprop_trajectory,
    rollout,
    rollout_controlled,
    rollout_scaled,
)
from .objectives import (
    CertificationReport,
    LossWeights,
    TaskSpec,
    certify_eigenmode,
    effort_integral,
    forward_kinematics,
    loss_eigen,
    loss_task,
    loss_total,
    potential_surface,
    task_error,
)
from .potential import PotentialNet
from .stabilizer import (
    ControllerGains,
    ReferenceMode,
    build_reference_mode,
    cycle_multipliers,
    energy_feedback,
    find_orbit_point,
    mode_feedback,
    momentum_projection,
    momentum_sign,
    nearest_reference,
    mode_curve_distance,
    reference_mode_from_trajectory,
    simulate_closed_loop,
    stabilizing_feedback,
)
from .training import (
    Adam,
    DivergedTrainingError,
    TrainConfig,
    TrainRecord,
    TrainResult,
    sweep,
    train,
)

__version__ = "0.1.0"
