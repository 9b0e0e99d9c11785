"""Deep constrained clustering: an autoencoder-based clustering network that
learns from pairwise, difficulty, triplet, size, cardinality and rule-based
constraints, plus generators for those constraints and evaluation metrics."""

from .autoencoder import AutoencoderModel, SdaeConfig, encode, pretrain_sdae, reconstruction_loss
from .clustering import ClusterModel, hard_assign, kl_cluster_loss, kmeans, soft_assign, target_distribution
from .constraint_losses import (
    CardinalitySpec,
    ConstraintSet,
    HornRule,
    cardinality_bound_loss,
    cardinality_loss,
    cl_loss,
    difficulty_loss,
    evaluate_horn_rules,
    global_size_loss,
    ml_loss,
    read_constraints,
    triplet_loss,
    write_constraints,
)
from .constraint_gen import (
    OntologyGraph,
    TripletGenConfig,
    close_constraints,
    difficulty_from_weak_learner,
    inject_noise,
    ontology_similarity,
    pairwise_from_labels,
    triplets_from_embedding,
    triplets_from_ontology,
)
from .data_io import BatchSchedule, Dataset, load_csv, load_idx, make_schedule
from .errors import ConsistencyError, FormatError, NumericError
from .metrics import accuracy, hungarian, negative_ratio, nmi
from .numerics import AdamState, MlpParams, adam_init, adam_step, finite_diff_grad, make_rng, mlp_backward, mlp_forward
from .trainer import TrainConfig, TrainReport, has_converged, initialize, run_training, run_training_multi

__version__ = "0.1.0"
