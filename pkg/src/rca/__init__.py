"""Relative contrastive alignment of tag, region, and caption embeddings."""

from .core import (
    ContrastiveInstance,
    attention_weights,
    compatibility,
    contextualize,
    pairwise_scores,
)
from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    DimensionError,
    DivergenceError,
    EmptyContextError,
    EmptyInputError,
    InsufficientVocabularyError,
    InvalidWeightError,
    ParseError,
    ValidationError,
)
from .gradients import (
    GradientBundle,
    finite_diff_grad,
    gradient_check,
    loss_and_grad,
)
from .losses import (
    LossBreakdown,
    cross_modality_loss,
    inner_modality_loss,
    total_loss,
    weighted_cross_loss,
    weighted_inner_loss,
)
from .tags import RankedTagList, TagCandidate, rank_tags, split_pos_neg, subsample
from .trainer import (
    SyntheticConfig,
    TrainerConfig,
    TrainState,
    evaluate_retrieval,
    generate_synthetic,
    initial_state,
    train_alignment,
)
from .uasr import UasrResult, apply_uasr, local_uncertainty, retrieve_top_tags

__version__ = "0.1.0"
