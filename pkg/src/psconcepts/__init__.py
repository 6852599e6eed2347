"""Projective-simulation agents that discover hidden variables, plus the tools to find them."""

from .analysis import (
    AnalysisThresholds,
    EnvironmentEstimate,
    SubsetScore,
    analyze_network,
    correlation_matrix,
    estimate_environment,
    exclusivity,
    exhaustivity,
    extract_blocks,
    good_subsets,
    predictability_table,
    representative_clips,
    subset_scan,
    violation_weights,
)
from .ecm import (
    THREE_LAYER,
    TWO_LAYER,
    AgentConfig,
    ClipNetwork,
    DeliberationPath,
    action_marginal,
    deliberate,
    hop_probabilities,
    is_boring,
    restore,
    snapshot,
    update,
)
from .environment import (
    EnvConfig,
    Environment,
    PredictionId,
    build_environment,
    correct_outcome,
    evaluate,
    sample_setup,
)
from .training import (
    EnsembleResult,
    LearningCurve,
    TrainConfig,
    default_train_config,
    run_ensemble,
    run_generalisation,
    run_training,
)

__version__ = "0.1.0"
