"""Infinite-server queues with marked MAP input, random resources and a
semi-Markov environment whose jumps clear the system."""

from .distributions import DistributionSpec, deterministic, erlang, exponential, hyperexponential, sample, uniform
from .errors import *  # noqa: F401,F403
from .fixtures import load_fixture
from .grid import Grid, GridMatrixFunction
from .mapalg import (
    CountingMoments,
    arrival_rates,
    counting_moments,
    counting_pgf,
    generator_pgf,
    stationary_phase,
    thinned_counting_pgf,
    thinned_generator_pgf,
)
from .measures import (
    PMF,
    Key,
    PerformanceReport,
    StationaryKPIs,
    mgi_special_case,
    performance_report,
    pgf_to_pmf,
    stationary_kpis,
    stationary_pmf,
    transient_queue_means,
)
from .model import (
    KernelEntry,
    MMAPBlock,
    MMAPSpec,
    ModelConfig,
    NumericSettings,
    SemiMarkovEnvironment,
    ServiceResourceModel,
    ValidatedModel,
    validate_model,
)
from .modelio import dump_model, load_model, load_model_file
from .renewal import (
    RenewalSolution,
    StationaryWeights,
    catastrophe_transform_stationary,
    catastrophe_transform_transient,
    exponential_sojourn_transforms,
    renewal_matrix,
    stationary_weights,
)
from .simulator import ComparisonReport, Estimate, EstimateSet, SimulationState, compare, simulate
from .transient import (
    TransformPoint,
    batch_service_pgf,
    busy_servers_transform,
    initial_customers_transform,
    renewal_input_transform,
    served_transform,
    service_kernel,
    transient_path,
    transient_transform,
)

__version__ = "0.1.0"
