"""Prototype-based matching, scoring, and explanation alignment at desk scale."""

from .config import RunConfig, desk_config
from .errors import (
    DegenerateVectorError,
    FormatError,
    FrozenParameterError,
    InstanceTooSmallError,
    InvariantError,
    ValidationError,
)
from .feature_io import (
    AnswerInput,
    CoordAnswer,
    EnhancedFeatures,
    FeatureMap,
    QAExample,
    TextAnswer,
    TokenEmbeddings,
    enhance,
    load_dataset,
    load_features,
    load_tokens,
    save_features,
    save_tokens,
)
from .geometry import Box, GridSpec, iou, patch_to_box, union_box_region_iou, within_radius
from .matching import (
    MaskState,
    MatchResult,
    Selection,
    cosine_similarity,
    greedy_match,
    match_all,
    ranked_patches,
    similarity_matrix,
    top_k_patches,
)
from .model import (
    FusionHead,
    ModelParams,
    backward,
    evaluate,
    forward,
    init_params,
    load_model,
    loss,
    predict,
    save_model,
    train,
)
from .projection import (
    CoordProjector,
    LinearProjector,
    freeze_copy,
    init_coord_projector,
    init_linear_projector,
    project_coords,
    project_tokens,
)
from .prototypes import PrototypeSet, build_prototypes, init_slot_weights
from .vlas import AlignmentRecord, VlasReport, per_example_iou_dump, vlas

__version__ = "0.1.0"
