"""Rank-conditioned inverse reinforcement learning for speed-profile rewards.

A small numpy library: station-time scenarios and features, a random
trajectory sampler with a lattice-DP synthetic expert, a Siamese value
network trained on frame-conditioned pairwise ranking (plus a pooled
cross-entropy baseline), an online selector with metric harness, and a 2-D
background-shift demo.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ContractViolation,
    GridMismatchError,
    MalformedInputError,
    ModelFormatError,
    NonFiniteLossError,
    NumericFailure,
    RcirlError,
)
from .scenario import (  # noqa: E402
    FEATURE_NAMES,
    N_FEATURES,
    N_TIMES,
    NormTable,
    Obstacle,
    ObstacleKind,
    PathProfile,
    Scenario,
    Trajectory,
    extract_features,
    feature_blocks,
    project_obstacles,
)
from .sampler import (  # noqa: E402
    GroundTruthReward,
    SamplerConfig,
    SuiteConfig,
    generate_scenario_suite,
    sample_trajectories,
    synthetic_expert,
)
from .valuenet import ValueModel, init_model, load_model, save_model, value  # noqa: E402
from .training import Frame, TrainConfig, pairwise_loss, train_gan_baseline, train_rcirl  # noqa: E402
from .evaluation import evaluate_suite, expert_rank, select_trajectory, trajectory_metrics  # noqa: E402
from .shiftdemo import generate_frame, optimal_direction, shift_report  # noqa: E402
