"""Tile-based 360-degree streaming toolkit.

Combines an ensemble viewport forecaster (multi-head trajectory transformer)
with a preference-conditioned deep-RL bitrate agent trained against a
deterministic tile streaming simulator.
"""

from .geometry import (
    FieldOfView,
    TileGrid,
    TileMask,
    Trajectory,
    ViewportPoint,
    iou,
    viewport_tile_mask,
    wrap_distance,
)
from .qoe import ChunkQoEBreakdown, QoEPreference, chunk_qoe, preference_pool
from .trajectory_transformer import (
    MultiTrajectoryTransformer,
    PredictionSet,
    PredictorConfig,
    count_params_flops,
    ensemble,
    mtio_loss,
)
from .forecasting import ViewportForecaster, WindowedDataset, evaluate_accuracy
from .simenv import (
    BandwidthTrace,
    BitrateAction,
    BitrateLadder,
    EnvState,
    PlannedEnv,
    StreamingSession,
    VideoManifest,
    ViewportPlan,
    action_space,
    download_time,
    heuristic_policy,
    pyramid_assign,
)
from .agent import PolicyValueNet, PpoConfig, RolloutBatch, build_policy, ppo_update
from .identifier import (
    IdentifiedPreference,
    QoeIdentifierNet,
    build_identifier,
    combined_reward,
    mi_reward_term,
    update_identifier,
)
from .orchestrator import (
    TrainingConfig,
    TrainingResult,
    run_ablation_no_repl,
    run_evaluation,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "FieldOfView", "TileGrid", "TileMask", "Trajectory", "ViewportPoint",
    "iou", "viewport_tile_mask", "wrap_distance",
    "ChunkQoEBreakdown", "QoEPreference", "chunk_qoe", "preference_pool",
    "MultiTrajectoryTransformer", "PredictionSet", "PredictorConfig",
    "count_params_flops", "ensemble", "mtio_loss",
    "ViewportForecaster", "WindowedDataset", "evaluate_accuracy",
    "BandwidthTrace", "BitrateAction", "BitrateLadder", "EnvState", "PlannedEnv",
    "StreamingSession", "VideoManifest", "ViewportPlan", "action_space",
    "download_time", "heuristic_policy", "pyramid_assign",
    "PolicyValueNet", "PpoConfig", "RolloutBatch", "build_policy", "ppo_update",
    "IdentifiedPreference", "QoeIdentifierNet", "build_identifier",
    "combined_reward", "mi_reward_term", "update_identifier",
    "TrainingConfig", "TrainingResult", "run_ablation_no_repl", "run_evaluation",
    "run_training",
]
