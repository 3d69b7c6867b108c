"""Metrics and study harnesses: average precision, ablations, oracle regimes.

Three report kinds share one structure:
  - eval: the trained pipeline on a held-out split (per-class AP, mAP,
    localization rates)
  - ablation: the same system retrained with one feature block zeroed per row
  - oracle-study: classifiers trained on ground-truth locations, one row per
    feature regime, quantifying how much each cue could contribute

Reports serialize to JSON (sorted keys, so byte-stable under a fixed seed) and
to an aligned text table.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .classifier import ClassifierModel, ModelBundle, score_image, train_classifier
from .core import ContractError
from .dataset import (
    annotation_path,
    dataset_class_names,
    dataset_label_set,
    load_scene,
    read_annotation,
)
from .features import face_region, make_extractor, masked_crop, plain_crop
from .parallel import parallel_map
from .pipeline import (
    ImageRecord,
    PipelineConfig,
    classifier_training_set,
    compute_dataset_mean,
    eval_features,
    rank_record,
)

AP_VARIANT = "all-points"

SINGLE_BLOCK_ROWS = ("G", "C", "F", "Face", "Obj")

ORACLE_REGIMES = (
    ("G", ("G",)),
    ("Face", ("Face",)),
    ("O", ("O",)),
    ("MO", ("MO",)),
    ("G+Obj", ("G", "O", "MO")),
    ("G+Face+O", ("G", "Face", "O")),
    ("All", ("G", "Face", "O", "MO")),
)


def average_precision(scores, positives) -> float:
    """All-points AP of a ranking; ties broken by original index."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.ndim != 1 or s.shape != pos.shape:
        raise ContractError(
            f"scores {s.shape} and labels {pos.shape} must be matching vectors"
        )
    if not pos.any():
        raise ContractError("average precision is undefined without positives")
    order = sorted(range(s.shape[0]), key=lambda i: (-s[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if pos[i]:
            hits += 1
            total += hits / rank
    return total / hits


def per_class_ap(
    scores: np.ndarray, true_index: np.ndarray, class_names: tuple[str, ...]
) -> dict[str, float]:
    return {
        name: average_precision(scores[:, c], true_index == c)
        for c, name in enumerate(class_names)
    }


@dataclass(frozen=True)
class EvalRow:
    name: str
    removed: tuple[str, ...]
    ap: dict[str, float]
    mean_ap: float
    loc_top1: float | None = None
    loc_any: float | None = None
    accuracy: float | None = None


@dataclass(frozen=True)
class EvalReport:
    kind: str
    classes: tuple[str, ...]
    n_images: int
    seed: int
    rows: tuple[EvalRow, ...]
    params: dict

    def to_json(self) -> str:
        payload = asdict(self)
        payload["ap_variant"] = AP_VARIANT
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_text(self) -> str:
        names = list(self.classes)
        header = ["row", "mAP", *names, "top1>=.5", "any>=.5"]
        lines = [header]
        for row in self.rows:
            lines.append(
                [
                    row.name,
                    f"{row.mean_ap:.4f}",
                    *[f"{row.ap[n]:.4f}" for n in names],
                    "-" if row.loc_top1 is None else f"{row.loc_top1:.4f}",
                    "-" if row.loc_any is None else f"{row.loc_any:.4f}",
                ]
            )
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()
            for line in lines
        )

    def row(self, name: str) -> EvalRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise ContractError(f"report has no row {name!r}")


def _evaluate_rows(
    records: list[ImageRecord],
    bundle: ModelBundle,
    classifier: ClassifierModel,
    q: int,
    feature_mask: np.ndarray | None,
) -> EvalRow:
    names = classifier.class_names
    n = len(records)
    scores = np.zeros((n, len(names)), dtype=np.float64)
    true_index = np.full(n, -1, dtype=np.int64)
    localized_top1 = 0
    localized_any = 0
    with_objects = 0
    for r, rec in enumerate(records):
        ranked = rank_record(rec, bundle, q)
        X = eval_features(rec, ranked, feature_mask)
        s, _ = score_image(classifier, X)
        scores[r] = s
        if rec.class_name in names:
            true_index[r] = names.index(rec.class_name)
        if rec.groundtruth:
            with_objects += 1
            top = ranked[0]
            if top.is_fallback:
                top_iou = rec.fallback.iou
            else:
                top_iou = next(
                    c.iou for c in rec.candidates if c.region is top.region
                )
            if top_iou >= 0.5:
                localized_top1 += 1
            if any(c.iou >= 0.5 for c in rec.candidates):
                localized_any += 1
    ap = per_class_ap(scores, true_index, names)
    predicted = np.argmax(scores, axis=1)
    return EvalRow(
        name="full",
        removed=(),
        ap=ap,
        mean_ap=float(np.mean(list(ap.values()))),
        loc_top1=localized_top1 / with_objects if with_objects else None,
        loc_any=localized_any / with_objects if with_objects else None,
        accuracy=float(np.mean(predicted == true_index)),
    )


def evaluate(
    bundle: ModelBundle,
    records: list[ImageRecord],
    config: PipelineConfig,
) -> EvalReport:
    """Score a held-out split with a trained bundle."""
    if not records:
        raise ContractError("evaluation needs at least one image")
    row = _evaluate_rows(records, bundle, bundle.classifier, config.q, None)
    return EvalReport(
        kind="eval",
        classes=bundle.classifier.class_names,
        n_images=len(records),
        seed=config.seed,
        rows=(row,),
        params=asdict(config),
    )


def ablation_study(
    train_records: list[ImageRecord],
    test_records: list[ImageRecord],
    bundle: ModelBundle,
    config: PipelineConfig,
    removals: tuple[str, ...] = SINGLE_BLOCK_ROWS,
) -> EvalReport:
    """Full system plus one row per removed block, retrained per row.

    The ranker is shared across rows: block removal changes the classifier's
    view of the features, not candidate generation.
    """
    if not train_records or not test_records:
        raise ContractError("ablation needs nonempty train and test record sets")
    names = bundle.classifier.class_names
    rows = []
    full = _evaluate_rows(test_records, bundle, bundle.classifier, config.q, None)
    rows.append(full)
    for block in removals:
        mask = bundle.layout.mask_without((block,))
        X, y = classifier_training_set(train_records, names, mask)
        clf = train_classifier(
            X,
            y,
            names,
            lam=config.lam,
            epochs=config.classifier_epochs,
            seed=config.seed,
        )
        row = _evaluate_rows(test_records, bundle, clf, config.q, mask)
        rows.append(
            EvalRow(
                name=f"-{block}",
                removed=(block,),
                ap=row.ap,
                mean_ap=row.mean_ap,
                loc_top1=row.loc_top1,
                loc_any=row.loc_any,
                accuracy=row.accuracy,
            )
        )
    return EvalReport(
        kind="ablation",
        classes=names,
        n_images=len(test_records),
        seed=config.seed,
        rows=tuple(rows),
        params=asdict(config),
    )


# ---------------------------------------------------------------------------
# Oracle study: what could each cue do with ground-truth locations
# ---------------------------------------------------------------------------


def _oracle_image_blocks(args) -> tuple[str, dict[str, np.ndarray]]:
    data_dir, image_id, labels, extractor_text, mean = args
    image, ann = load_scene(data_dir, image_id)
    extractor = make_extractor(extractor_text)
    mean = np.asarray(mean, dtype=np.float64)
    regions = ann.object_regions(labels)
    if not regions:
        raise ContractError(f"image {image_id} has no annotated object")
    region = regions[0]
    blocks = {
        "G": extractor.extract(image),
        "Face": extractor.extract(
            plain_crop(image, face_region(ann, image.dims))
        ),
        "O": extractor.extract(plain_crop(image, region.bbox)),
        "MO": extractor.extract(masked_crop(image, region, mean)),
    }
    return ann.class_name, blocks


def oracle_study(
    data_dir: str,
    train_ids: list[str],
    test_ids: list[str],
    config: PipelineConfig,
    jobs: int = 1,
) -> EvalReport:
    """Train/test each feature regime with ground-truth regions on both sides."""
    if len(train_ids) < 2 or len(test_ids) < 1:
        raise ContractError("oracle study needs at least 2 train and 1 test images")
    annotations = [read_annotation(annotation_path(data_dir, i)) for i in train_ids]
    labels = dataset_label_set(annotations)
    class_names = dataset_class_names(annotations)
    mean = compute_dataset_mean(data_dir, train_ids, jobs)
    mean_t = tuple(float(v) for v in mean)
    train_blocks = parallel_map(
        _oracle_image_blocks,
        [(str(data_dir), i, labels, config.extractor, mean_t) for i in train_ids],
        jobs,
    )
    test_blocks = parallel_map(
        _oracle_image_blocks,
        [(str(data_dir), i, labels, config.extractor, mean_t) for i in test_ids],
        jobs,
    )
    index = {name: i for i, name in enumerate(class_names)}
    rows = []
    for regime, parts in ORACLE_REGIMES:
        Xtr = np.asarray(
            [np.concatenate([b[p] for p in parts]) for _, b in train_blocks]
        )
        ytr = np.asarray([index[c] for c, _ in train_blocks], dtype=np.int64)
        clf = train_classifier(
            Xtr,
            ytr,
            class_names,
            lam=config.lam,
            epochs=config.classifier_epochs,
            seed=config.seed,
        )
        Xte = np.asarray(
            [np.concatenate([b[p] for p in parts]) for _, b in test_blocks]
        )
        scores = np.vstack([score_image(clf, row[None, :])[0] for row in Xte])
        true_index = np.asarray(
            [index.get(c, -1) for c, _ in test_blocks], dtype=np.int64
        )
        ap = per_class_ap(scores, true_index, class_names)
        rows.append(
            EvalRow(
                name=regime,
                removed=(),
                ap=ap,
                mean_ap=float(np.mean(list(ap.values()))),
                accuracy=float(np.mean(np.argmax(scores, axis=1) == true_index)),
            )
        )
    return EvalReport(
        kind="oracle-study",
        classes=class_names,
        n_images=len(test_ids),
        seed=config.seed,
        rows=tuple(rows),
        params=asdict(config),
    )
