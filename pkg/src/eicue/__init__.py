"""Spectral object discovery on patch feature grids.

Pipeline: color + semantic affinity -> symmetric normalized Laplacian ->
low eigenvectors -> differentiable cosine clustering cue -> medoid-prototype
object contrast + correspondence distillation -> Hungarian-matched scoring.
"""

from .affinity import AffinityConfig, adjacency, color_affinity, semantic_affinity
from .cluster import (
    ClusterCenters,
    assignment_scores,
    centers_step,
    eicue_map,
    eig_loss,
    init_centers,
)
from .errors import (
    DegenerateContrast,
    DegenerateGraph,
    DegenerateInput,
    EicueError,
    FormatError,
    InvalidInput,
    InvalidState,
    NumericalFailure,
    SkipTerm,
)
from .features import (
    FeatureGrid,
    PatchImage,
    SamplePair,
    SceneSpec,
    SegmentMap,
    load_image_file,
    load_label_file,
    load_tensor_file,
    object_means,
    resize_image_to_patches,
    synth_scene,
    write_image_file,
    write_label_file,
    write_tensor_file,
)
from .linalg import (
    EigenBasis,
    SymMatrix,
    cosine_similarity,
    row_softmax,
    sym_eigendecompose,
)
from .objnce import (
    ObjectMasks,
    Prototypes,
    build_prototypes,
    combine_objnce,
    medoid_prototype,
    obj_weights,
    object_masks,
    objnce_loss,
)
from .distill import corr_loss, corr_tensor, corr_total, shift_b_aug, shift_b_rand
from .evaluator import (
    ConfusionMatrix,
    cluster_features,
    confusion_matrix,
    hungarian_match,
    linear_probe,
    metrics,
)
from .heads import HeadParams, init_head_params, proj_forward, seg_forward
from .spectral import (
    LaplacianBundle,
    build_laplacian,
    eigengap_select,
    laplacian_bundle,
    matte,
    smallest_k,
)
from .trainer import (
    TrainConfig,
    TrainState,
    init_state,
    lambda_nce_at,
    load_checkpoint,
    load_config,
    save_checkpoint,
    total_loss,
    train,
    train_step,
)

__version__ = "0.1.0"
