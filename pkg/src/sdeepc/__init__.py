"""Data-enabled predictive control with SARSA-tuned l1 regularization."""

from .behavior import (
    HankelBlocks,
    MetricWindow,
    hankel,
    low_rank_denoise,
    partition,
    persistency_check,
    push_and_measure,
)
from .controller import (
    ControllerConfig,
    DeePCController,
    lambda_sweep,
    run_closed_loop,
    run_fixed_lambda,
)
from .deepc import (
    AdmmSolver,
    ControlSolution,
    DeePCProblem,
    SolverSettings,
    assemble,
    solve,
)
from .errors import DimensionMismatch, SDeePCError, SimulationDiverged, SpecError
from .experiments import ExperimentSpec, compare, load_spec, run, sweep
from .plant import (
    NoiseModel,
    PlantModel,
    Trajectory,
    excite,
    make_benchmark,
    simulate,
    step,
)
from .tuner import (
    QTable,
    RLState,
    TunerConfig,
    discretize,
    reward,
    run_online,
    sarsa_update,
    select_action,
    train_offline,
)

__version__ = "0.1.0"
