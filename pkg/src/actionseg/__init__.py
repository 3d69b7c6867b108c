"""Coarse-to-fine action-object localization and classification.

The pipeline turns per-pixel label probability maps into object candidates,
ranks them with a linear overlap regressor, and classifies the image from the
best candidates with one-vs-all linear models.  A synthetic scene generator
and oracle segmentation backends make every stage testable end to end without
a trained network.
"""

from .backends import SegBackendSpec, WindowKey, make_backend, segment
from .candidates import CandidateParams, generate_candidates, otsu_threshold
from .classifier import (
    ClassifierModel,
    ModelBundle,
    load_bundle,
    predict,
    save_bundle,
    score_image,
    train_classifier,
)
from .coarse2fine import RefineParams, local_maxima, refine
from .context import context_feature
from .core import (
    BBox,
    ContractError,
    DataError,
    ImageU8,
    LabelSet,
    ProbMap,
    RegionMask,
    bbox_iou,
)
from .dataset import (
    SceneAnnotation,
    SynthSpec,
    generate_dataset,
    list_scene_ids,
    load_scene,
    read_annotation,
    read_fpm,
    read_image,
    split_scene_ids,
    write_fpm,
    write_image,
)
from .evaluation import (
    EvalReport,
    ablation_study,
    average_precision,
    evaluate,
    oracle_study,
)
from .features import FeatureLayout, assemble_features, make_extractor
from .linear import solve_linear
from .pipeline import PipelineConfig, collect_records, segment_image, train_pipeline
from .ranking import RankerModel, rank_and_prune, train_ranker

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CandidateParams",
    "ClassifierModel",
    "ContractError",
    "DataError",
    "EvalReport",
    "FeatureLayout",
    "ImageU8",
    "LabelSet",
    "ModelBundle",
    "PipelineConfig",
    "ProbMap",
    "RankerModel",
    "RefineParams",
    "RegionMask",
    "SceneAnnotation",
    "SegBackendSpec",
    "SynthSpec",
    "WindowKey",
    "ablation_study",
    "assemble_features",
    "average_precision",
    "bbox_iou",
    "collect_records",
    "context_feature",
    "evaluate",
    "generate_candidates",
    "generate_dataset",
    "list_scene_ids",
    "load_bundle",
    "load_scene",
    "local_maxima",
    "make_backend",
    "make_extractor",
    "oracle_study",
    "otsu_threshold",
    "predict",
    "rank_and_prune",
    "read_annotation",
    "read_fpm",
    "read_image",
    "refine",
    "save_bundle",
    "score_image",
    "segment",
    "segment_image",
    "solve_linear",
    "split_scene_ids",
    "train_classifier",
    "train_pipeline",
    "train_ranker",
    "write_fpm",
    "write_image",
]
