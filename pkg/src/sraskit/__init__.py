"""Local-sensitivity summaries of representation maps, compared on the SPD manifold.

The workflow: wrap a differentiable map (:mod:`sraskit.repmap`), pick an
orthonormal perturbation family and average the projected pullback or
Fisher metric over a dataset (:mod:`sraskit.summaries`), lift the PSD
summary into the SPD cone, and compare summaries with the
affine-invariant distance and its exp(-d/sqrt(k)) similarity score,
which certifies multiplicative agreement on every quadratic task value
(:mod:`sraskit.spd`). Contrast probes (:mod:`sraskit.probes`),
activation baselines (:mod:`sraskit.baselines`), retrieval harnesses
(:mod:`sraskit.retrieval`), and condition-grid Fisher estimation for
trial data (:mod:`sraskit.gridfisher`) build on the same pieces. The
``sras`` command line (:mod:`sraskit.cli`) drives end-to-end runs.
"""

from . import baselines, errors, gridfisher, probes, repmap, retrieval, summaries
from .probes import (
    ContrastOperator,
    ProbeSet,
    control_probes,
    group_contrast,
    probe_score,
    shared_vs_pointwise_gap,
    top_contrast_directions,
)
from .repmap import FixedPointMap, LayerSpec, RepMap, load_dataset, load_model, save_model
from .retrieval import (
    DonorRetrievalReport,
    RetrievalReport,
    SimilarityMatrix,
    decay_curve,
    diag_auc,
    donor_distinct_top1,
    identification_accuracy,
    layer_similarity_matrix,
    top1_margin,
)
from .spd import (
    Certificate,
    EigenDecomposition,
    SpdMatrix,
    SymMatrix,
    airm_distance,
    certificate_bounds,
    dinf_distance,
    dinf_variational_check,
    log_euclidean_distance,
    matrix_inv_sqrt,
    matrix_log,
    matrix_sqrt,
    spd_lift,
    sras_score,
    sras_similarity,
    sym_eigendecompose,
)
from .summaries import (
    NoiseModel,
    PerturbationFamily,
    SensitivitySummary,
    TaskCovariance,
    accumulate_fisher,
    accumulate_pullback,
    basis_rotate,
    class_conditional_summaries,
    gain_shape,
    make_pca_family,
    make_random_family,
    restrict,
    task_value,
)

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "errors",
    "gridfisher",
    "probes",
    "repmap",
    "retrieval",
    "summaries",
    "Certificate",
    "EigenDecomposition",
    "SpdMatrix",
    "SymMatrix",
    "airm_distance",
    "certificate_bounds",
    "dinf_distance",
    "dinf_variational_check",
    "log_euclidean_distance",
    "matrix_inv_sqrt",
    "matrix_log",
    "matrix_sqrt",
    "spd_lift",
    "sras_score",
    "sras_similarity",
    "sym_eigendecompose",
    "FixedPointMap",
    "LayerSpec",
    "RepMap",
    "load_dataset",
    "load_model",
    "save_model",
    "NoiseModel",
    "PerturbationFamily",
    "SensitivitySummary",
    "TaskCovariance",
    "accumulate_fisher",
    "accumulate_pullback",
    "basis_rotate",
    "class_conditional_summaries",
    "gain_shape",
    "make_pca_family",
    "make_random_family",
    "restrict",
    "task_value",
    "ContrastOperator",
    "ProbeSet",
    "control_probes",
    "group_contrast",
    "probe_score",
    "shared_vs_pointwise_gap",
    "top_contrast_directions",
    "DonorRetrievalReport",
    "RetrievalReport",
    "SimilarityMatrix",
    "decay_curve",
    "diag_auc",
    "donor_distinct_top1",
    "identification_accuracy",
    "layer_similarity_matrix",
    "top1_margin",
]
