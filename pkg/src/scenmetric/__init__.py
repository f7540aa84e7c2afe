"""Metric learning for traffic scenarios with expert topology knowledge."""
from .scenario import (
    CATEGORIES,
    ActionSequence,
    Dataset,
    GroupIndex,
    InfrastructureImage,
    ReconstructionTarget,
    RouteLabeling,
    Scenario,
    TopologyGraph,
    Trajectory,
    build_reconstruction_target,
    derive_action_sequence,
    derive_route_labeling,
)
from .dataset_io import load_dataset, save_dataset
from .estimator import ScenarioMetricLearner
from .evaluate import (
    EvalReport,
    StabilityReport,
    abod_scores,
    agglomerative_cluster,
    clustering_accuracy,
    evaluate_embeddings,
    feature_stability,
    mann_whitney_auc,
    novelty_experiment,
    project_2d,
)
from .losses import (
    LossWeights,
    MarginParams,
    QuadrupletDistances,
    base_combined_loss,
    metric_losses,
    reconstruction_error,
    sparse_reconstruction_loss,
    total_loss,
    triplet_loss,
)
from .mining import (
    STRATEGIES,
    ClassIndex,
    Quadruplet,
    build_index,
    mine_epoch,
    mine_quadruplet,
)
from .network import (
    ModelState,
    NetworkConfig,
    TrainEpoch,
    TrainStepResult,
    embed_dataset,
    forward_decode,
    forward_encode,
    initialize,
    load_checkpoint,
    ordering_satisfaction,
    save_checkpoint,
    train,
    train_step,
)
from .similarity import (
    CanonicalForm,
    DtwResult,
    IsomorphismWitness,
    canonical_code,
    dtw,
    find_isomorphism,
    infra_similarity,
    route_similarity,
    trajectory_similarity,
)
from .synthgen import GeneratorConfig, generate, template_catalog

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES",
    "STRATEGIES",
    "ActionSequence",
    "CanonicalForm",
    "ClassIndex",
    "Dataset",
    "DtwResult",
    "EvalReport",
    "GeneratorConfig",
    "GroupIndex",
    "InfrastructureImage",
    "IsomorphismWitness",
    "LossWeights",
    "MarginParams",
    "ModelState",
    "NetworkConfig",
    "Quadruplet",
    "QuadrupletDistances",
    "ReconstructionTarget",
    "RouteLabeling",
    "Scenario",
    "ScenarioMetricLearner",
    "StabilityReport",
    "TopologyGraph",
    "TrainEpoch",
    "TrainStepResult",
    "Trajectory",
    "abod_scores",
    "agglomerative_cluster",
    "base_combined_loss",
    "build_index",
    "build_reconstruction_target",
    "canonical_code",
    "clustering_accuracy",
    "derive_action_sequence",
    "derive_route_labeling",
    "dtw",
    "embed_dataset",
    "evaluate_embeddings",
    "feature_stability",
    "find_isomorphism",
    "forward_decode",
    "forward_encode",
    "generate",
    "infra_similarity",
    "initialize",
    "load_checkpoint",
    "load_dataset",
    "mann_whitney_auc",
    "metric_losses",
    "mine_epoch",
    "mine_quadruplet",
    "novelty_experiment",
    "ordering_satisfaction",
    "project_2d",
    "reconstruction_error",
    "route_similarity",
    "save_checkpoint",
    "save_dataset",
    "sparse_reconstruction_loss",
    "template_catalog",
    "total_loss",
    "train",
    "train_step",
    "trajectory_similarity",
    "triplet_loss",
    "__version__",
]
