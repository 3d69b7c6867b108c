"""One-vs-all linear SVM over assembled features, with max-over-candidates
image scoring, plus the on-disk model bundle tying the whole trained pipeline
together.

Bundle format (ASM1, little-endian):
  magic "ASM1"
  u32 class count, u32 feature length
  class names, then segmentation label names: each table is u32 count followed
  by u16-length-prefixed UTF-8 strings
  f64 lambda
  u32 mean length, f64 x mean (per-channel dataset mean)
  u32 ranker dimension, f32 x dim ranker weights, f32 ranker bias
  per class: f32 x feature-length weights, f32 bias
  u64 feature-layout checksum (FNV-1a over the block descriptor)
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContractError, DataError, LabelSet
from .dataset import _atomic_write
from .features import FeatureLayout
from .linear import solve_linear
from .ranking import RankerHyperparams, RankerModel

BUNDLE_MAGIC = b"ASM1"
DEFAULT_LAMBDA = 0.001
DEFAULT_EPOCHS = 50


@dataclass(frozen=True)
class ClassifierModel:
    """Per-class weight rows (float32) and biases over the feature layout."""

    class_names: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        names = tuple(self.class_names)
        if len(names) < 2:
            raise ContractError("classifier needs at least 2 classes")
        if len(set(names)) != len(names):
            raise ContractError("class names must be unique")
        W = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float32))
        b = np.ascontiguousarray(np.asarray(self.biases, dtype=np.float32))
        if W.ndim != 2 or W.shape[0] != len(names) or b.shape != (len(names),):
            raise ContractError(
                f"weights {W.shape} / biases {b.shape} do not fit {len(names)} classes"
            )
        W.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def feature_length(self) -> int:
        return self.weights.shape[1]


def train_classifier(
    features: np.ndarray,
    class_indices: np.ndarray,
    class_names: tuple[str, ...],
    lam: float = DEFAULT_LAMBDA,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
) -> ClassifierModel:
    """One linear SVM per class against the rest, deterministic under seed."""
    X = np.asarray(features, dtype=np.float64)
    idx = np.asarray(class_indices, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != idx.shape[0]:
        raise ContractError(
            f"got {X.shape} features for {idx.shape} labels, need matching rows"
        )
    if len(class_names) < 2:
        raise ContractError("training needs at least 2 classes")
    present = set(int(i) for i in idx)
    missing = [c for c in range(len(class_names)) if c not in present]
    if missing:
        raise ContractError(
            f"no training images for classes {[class_names[c] for c in missing]}"
        )
    if X.shape[0] >= 2 and np.ptp(X, axis=0).max() == 0.0:
        warnings.warn("all training feature vectors are identical", stacklevel=2)
    W = np.zeros((len(class_names), X.shape[1]), dtype=np.float64)
    biases = np.zeros(len(class_names), dtype=np.float64)
    for c in range(len(class_names)):
        y = np.where(idx == c, 1.0, -1.0)
        w, b = solve_linear(
            X, y, lam=lam, epochs=epochs, seed=seed + c, loss="hinge"
        )
        W[c] = w
        biases[c] = b
    return ClassifierModel(
        class_names=tuple(class_names),
        weights=W.astype(np.float32),
        biases=biases.astype(np.float32),
        lam=lam,
    )


def score_image(
    model: ClassifierModel, candidate_features: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Max over candidates of each class's linear score.

    Returns (scores, picks): scores[c] is the image score for class c and
    picks[c] the index of the candidate that achieved it (ties: lowest index,
    so scoring is invariant to appending dominated candidates).
    """
    feats = np.atleast_2d(np.asarray(candidate_features, dtype=np.float64))
    if feats.shape[0] < 1:
        raise ContractError("score_image needs at least one candidate")
    if feats.shape[1] != model.feature_length:
        raise ContractError(
            f"feature length {feats.shape[1]} does not match model "
            f"{model.feature_length}"
        )
    per_candidate = feats @ model.weights.astype(np.float64).T + model.biases.astype(
        np.float64
    )
    picks = np.argmax(per_candidate, axis=0)
    scores = per_candidate[picks, np.arange(len(model.class_names))]
    return scores, picks


def predict(model: ClassifierModel, candidate_features: np.ndarray) -> str:
    """Class with the maximal image score; ties go to the lowest class index."""
    scores, _ = score_image(model, candidate_features)
    return model.class_names[int(np.argmax(scores))]


@dataclass(frozen=True)
class ModelBundle:
    """Everything a trained pipeline needs at inference time."""

    classifier: ClassifierModel
    ranker: RankerModel
    labels: LabelSet
    layout: FeatureLayout
    mean_value: np.ndarray

    def __post_init__(self) -> None:
        mean = np.ascontiguousarray(np.asarray(self.mean_value, dtype=np.float64))
        if mean.ndim != 1 or mean.shape[0] < 1:
            raise ContractError(f"dataset mean must be a vector, got {mean.shape}")
        if self.classifier.feature_length != self.layout.total:
            raise ContractError(
                f"classifier expects {self.classifier.feature_length} features, "
                f"layout provides {self.layout.total}"
            )
        mean.flags.writeable = False
        object.__setattr__(self, "mean_value", mean)


def _pack_names(names) -> bytes:
    parts = [struct.pack("<I", len(names))]
    for name in names:
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)) + enc)
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(
                f"{self.path}: truncated {what} at byte {self.pos}: "
                f"need {n} bytes, have {len(self.raw) - self.pos}"
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def names(self, what: str) -> tuple[str, ...]:
        count = self.u32(what)
        out = []
        for i in range(count):
            (n,) = struct.unpack("<H", self.take(2, f"{what} length {i}"))
            out.append(self.take(n, f"{what} {i}").decode("utf-8"))
        return tuple(out)

    def f32_array(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").copy()

    def f64_array(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").copy()


def save_bundle(path: str | Path, bundle: ModelBundle) -> None:
    clf = bundle.classifier
    parts = [
        BUNDLE_MAGIC,
        struct.pack("<II", len(clf.class_names), clf.feature_length),
        _pack_names(clf.class_names),
        _pack_names(bundle.labels.names),
        struct.pack("<d", clf.lam),
        struct.pack("<I", bundle.mean_value.shape[0]),
        bundle.mean_value.astype("<f8").tobytes(),
        struct.pack("<I", bundle.ranker.weights.shape[0]),
        bundle.ranker.weights.astype("<f4").tobytes(),
        struct.pack("<f", bundle.ranker.bias),
    ]
    for c in range(len(clf.class_names)):
        parts.append(clf.weights[c].astype("<f4").tobytes())
        parts.append(struct.pack("<f", clf.biases[c]))
    parts.append(struct.pack("<Q", bundle.layout.checksum))
    _atomic_write(path, b"".join(parts))


def load_bundle(path: str | Path) -> ModelBundle:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read model bundle {path}: {e}") from e
    if raw[:4] != BUNDLE_MAGIC:
        raise DataError(
            f"{path}: bad magic {raw[:4]!r} at byte 0, expected {BUNDLE_MAGIC!r}"
        )
    r = _Reader(raw, path)
    r.pos = 4
    n_classes = r.u32("class count")
    feature_len = r.u32("feature length")
    class_names = r.names("class names")
    label_names = r.names("label names")
    if len(class_names) != n_classes:
        raise DataError(
            f"{path}: header says {n_classes} classes, table has {len(class_names)}"
        )
    (lam,) = struct.unpack("<d", r.take(8, "lambda"))
    mean = r.f64_array(r.u32("mean length"), "dataset mean")
    ranker_dim = r.u32("ranker dimension")
    ranker_w = r.f32_array(ranker_dim, "ranker weights")
    (ranker_b,) = struct.unpack("<f", r.take(4, "ranker bias"))
    W = np.zeros((n_classes, feature_len), dtype=np.float32)
    biases = np.zeros(n_classes, dtype=np.float32)
    for c in range(n_classes):
        W[c] = r.f32_array(feature_len, f"class {c} weights")
        (biases[c],) = struct.unpack("<f", r.take(4, f"class {c} bias"))
    (checksum,) = struct.unpack("<Q", r.take(8, "layout checksum"))
    if r.pos != len(raw):
        raise DataError(f"{path}: {len(raw) - r.pos} trailing bytes at {r.pos}")
    try:
        labels = LabelSet(label_names)
    except ContractError as e:
        raise DataError(f"{path}: {e}") from e
    appearance_dim = (feature_len - 2 * len(labels)) // 4
    layout = FeatureLayout(appearance_dim, len(labels))
    if layout.total != feature_len:
        raise DataError(
            f"{path}: feature length {feature_len} does not decompose into "
            f"the block layout for {len(labels)} labels"
        )
    if layout.checksum != checksum:
        raise DataError(
            f"{path}: layout checksum {checksum:#018x} does not match "
            f"{layout.checksum:#018x} for {layout.descriptor!r}"
        )
    classifier = ClassifierModel(
        class_names=class_names, weights=W, biases=biases, lam=lam
    )
    ranker = RankerModel(
        weights=ranker_w, bias=ranker_b, hyperparams=RankerHyperparams(lam=lam)
    )
    return ModelBundle(
        classifier=classifier,
        ranker=ranker,
        labels=labels,
        layout=layout,
        mean_value=mean,
    )
