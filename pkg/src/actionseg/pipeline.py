"""End-to-end orchestration: segmentation, refinement, candidates, features.

The unit of work is one image.  `compute_image_record` runs the whole
localization stack for a single image and returns a self-contained record
(candidate regions, context features, assembled classification features,
overlap against ground truth), so records can be computed in parallel and the
training/evaluation steps become plain array manipulation over them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import RecordingBackend, SegBackendSpec, WindowKey, make_backend
from .candidates import CandidateParams, generate_candidates
from .coarse2fine import RefineParams, refine
from .context import context_feature
from .core import ContractError, ImageU8, LabelSet, ProbMap, RegionMask, bbox_iou
from .dataset import (
    SceneAnnotation,
    dataset_class_names,
    dataset_label_set,
    load_scene,
    read_annotation,
    annotation_path,
)
from .features import (
    FeatureLayout,
    assemble_features,
    face_region,
    make_extractor,
)
from .classifier import ModelBundle, train_classifier
from .parallel import parallel_map
from .ranking import (
    RankedCandidate,
    RankerHyperparams,
    train_ranker,
    rank_and_prune,
    whole_image_fallback,
)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of a full run; picklable so workers can rebuild state."""

    coarse: SegBackendSpec = SegBackendSpec(kind="oracle", blur_radius=6, stride=8)
    fine: SegBackendSpec = SegBackendSpec(kind="oracle", blur_radius=1, stride=1)
    refine: RefineParams = RefineParams()
    candidates: CandidateParams = CandidateParams()
    q: int = 3
    lam: float = 0.001
    seed: int = 0
    ranker_epochs: int = 200
    classifier_epochs: int = 50
    extractor: str = "builtin"

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ContractError(f"q must be >= 1, got {self.q}")
        if self.lam <= 0:
            raise ContractError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class CandidateRecord:
    """One region with its context feature, classifier feature, and overlap."""

    region: RegionMask
    context: np.ndarray
    feature: np.ndarray
    iou: float


@dataclass(frozen=True)
class ImageRecord:
    """Everything training and evaluation need to know about one image."""

    image_id: str
    class_name: str
    dims: tuple[int, int]
    candidates: tuple[CandidateRecord, ...]
    groundtruth: tuple[CandidateRecord, ...]
    fallback: CandidateRecord | None


def segment_image(
    image: ImageU8,
    annotation: SceneAnnotation | None,
    image_id: str,
    coarse_backend,
    fine_backend,
    params: RefineParams,
) -> tuple[ProbMap, ProbMap]:
    """Coarse full-image map, then the fused coarse-to-fine map."""
    coarse = coarse_backend.segment(image, annotation, WindowKey(image_id))
    fine = refine(image, coarse, fine_backend, params, annotation, image_id)
    return coarse, fine


def _overlap(region: RegionMask, annotation: SceneAnnotation) -> float:
    return max(
        (bbox_iou(region.bbox, o.bbox) for o in annotation.objects), default=0.0
    )


@dataclass(frozen=True)
class ImageTask:
    data_dir: str
    image_id: str
    labels: LabelSet
    config: PipelineConfig
    mean_value: tuple[float, ...]
    record_dirs: tuple[str, str] | None = None  # (coarse maps, fine maps)


def compute_image_record(task: ImageTask) -> ImageRecord:
    image, annotation = load_scene(task.data_dir, task.image_id)
    cfg = task.config
    coarse_backend = make_backend(cfg.coarse, task.labels, cfg.seed)
    fine_backend = make_backend(cfg.fine, task.labels, cfg.seed)
    if task.record_dirs is not None:
        coarse_backend = RecordingBackend(coarse_backend, task.record_dirs[0])
        fine_backend = RecordingBackend(fine_backend, task.record_dirs[1])
    coarse, fine = segment_image(
        image, annotation, task.image_id, coarse_backend, fine_backend, cfg.refine
    )
    extractor = make_extractor(cfg.extractor)
    mean = np.asarray(task.mean_value, dtype=np.float64)
    face_box = face_region(annotation, image.dims)

    def make_record(region: RegionMask) -> CandidateRecord:
        return CandidateRecord(
            region=region,
            context=context_feature(fine, region),
            feature=assemble_features(
                image, coarse, fine, face_box, region, extractor, mean
            ),
            iou=_overlap(region, annotation),
        )

    regions = generate_candidates(fine, cfg.candidates)
    candidates = tuple(make_record(r) for r in regions)
    groundtruth = tuple(make_record(r) for r in annotation.object_regions(task.labels))
    fallback = None
    if not candidates:
        fallback = make_record(whole_image_fallback(image.dims, task.labels).region)
    return ImageRecord(
        image_id=task.image_id,
        class_name=annotation.class_name,
        dims=image.dims,
        candidates=candidates,
        groundtruth=groundtruth,
        fallback=fallback,
    )


def compute_dataset_mean(data_dir: str, ids: list[str], jobs: int = 1) -> np.ndarray:
    sums = parallel_map(_image_mean_stats, [(data_dir, i) for i in ids], jobs)
    total = np.sum([s for s, _ in sums], axis=0)
    count = sum(c for _, c in sums)
    return total / count


def _image_mean_stats(args) -> tuple[np.ndarray, int]:
    data_dir, image_id = args
    image, _ = load_scene(data_dir, image_id)
    flat = image.data.reshape(-1, image.channels)
    return flat.sum(axis=0, dtype=np.float64), flat.shape[0]


def collect_records(
    data_dir: str,
    ids: list[str],
    labels: LabelSet,
    config: PipelineConfig,
    mean_value: np.ndarray,
    jobs: int = 1,
    record_dirs: tuple[str, str] | None = None,
) -> list[ImageRecord]:
    tasks = [
        ImageTask(
            data_dir=str(data_dir),
            image_id=image_id,
            labels=labels,
            config=config,
            mean_value=tuple(float(v) for v in mean_value),
            record_dirs=record_dirs,
        )
        for image_id in ids
    ]
    return parallel_map(compute_image_record, tasks, jobs)


def ranker_training_set(
    records: list[ImageRecord],
) -> tuple[np.ndarray, np.ndarray]:
    """Context features and overlap targets: all candidates plus ground truth."""
    rows = []
    targets = []
    for rec in records:
        for cand in list(rec.candidates) + list(rec.groundtruth):
            rows.append(cand.context)
            targets.append(cand.iou)
    if not rows:
        raise ContractError("no candidate regions in the training set")
    return np.asarray(rows), np.asarray(targets)


def classifier_training_set(
    records: list[ImageRecord],
    class_names: tuple[str, ...],
    feature_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth-region features per image, labeled with the image class."""
    index = {name: i for i, name in enumerate(class_names)}
    rows = []
    classes = []
    for rec in records:
        if rec.class_name not in index:
            raise ContractError(f"image {rec.image_id} has unknown class {rec.class_name!r}")
        for gt in rec.groundtruth:
            rows.append(gt.feature)
            classes.append(index[rec.class_name])
    if not rows:
        raise ContractError("no ground-truth regions in the training set")
    X = np.asarray(rows)
    if feature_mask is not None:
        X = X * feature_mask
    return X, np.asarray(classes, dtype=np.int64)


def rank_record(record: ImageRecord, bundle: ModelBundle, q: int) -> list[RankedCandidate]:
    regions = [c.region for c in record.candidates]
    context = np.asarray([c.context for c in record.candidates])
    return rank_and_prune(
        regions, context, bundle.ranker, q, record.dims, bundle.labels
    )


def eval_features(
    record: ImageRecord, ranked: list[RankedCandidate], feature_mask=None
) -> np.ndarray:
    """Classifier input rows for the ranked candidates of one image."""
    by_key = {id(c.region): c for c in record.candidates}
    rows = []
    for rc in ranked:
        if rc.is_fallback:
            assert record.fallback is not None
            rows.append(record.fallback.feature)
        else:
            rows.append(by_key[id(rc.region)].feature)
    X = np.asarray(rows)
    if feature_mask is not None:
        X = X * feature_mask
    return X


def train_from_records(
    records: list[ImageRecord],
    labels: LabelSet,
    class_names: tuple[str, ...],
    config: PipelineConfig,
    mean_value: np.ndarray,
    extractor_dim: int,
    feature_mask: np.ndarray | None = None,
) -> ModelBundle:
    ctx_X, ctx_y = ranker_training_set(records)
    ranker = train_ranker(
        ctx_X,
        np.clip(ctx_y, 0.0, 1.0),
        RankerHyperparams(
            lam=config.lam, epochs=config.ranker_epochs, seed=config.seed
        ),
    )
    clf_X, clf_y = classifier_training_set(records, class_names, feature_mask)
    classifier = train_classifier(
        clf_X,
        clf_y,
        class_names,
        lam=config.lam,
        epochs=config.classifier_epochs,
        seed=config.seed,
    )
    return ModelBundle(
        classifier=classifier,
        ranker=ranker,
        labels=labels,
        layout=FeatureLayout(extractor_dim, len(labels)),
        mean_value=mean_value,
    )


def train_pipeline(
    data_dir: str,
    ids: list[str],
    config: PipelineConfig,
    jobs: int = 1,
) -> tuple[ModelBundle, list[ImageRecord]]:
    """Compute records for the training ids and fit ranker plus classifier."""
    if not ids:
        raise ContractError("training needs at least one image")
    annotations = [read_annotation(annotation_path(data_dir, i)) for i in ids]
    labels = dataset_label_set(annotations)
    class_names = dataset_class_names(annotations)
    mean_value = compute_dataset_mean(data_dir, ids, jobs)
    records = collect_records(data_dir, ids, labels, config, mean_value, jobs)
    extractor_dim = make_extractor(config.extractor).dim
    bundle = train_from_records(
        records, labels, class_names, config, mean_value, extractor_dim
    )
    return bundle, records
