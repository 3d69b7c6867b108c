"""Candidate ranking: a linear SVR from context features to ground-truth overlap.

The regressor is trained on every generated candidate plus the ground-truth
regions themselves, with bbox IoU against ground truth as the target.  At
inference the top q candidates by predicted overlap move on to classification;
an image with no candidates at all gets a whole-image fallback so the
classifier always has something to score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BBox, ContractError, LabelSet, ProbMap, RegionMask
from .linear import solve_linear


@dataclass(frozen=True)
class RankerHyperparams:
    epsilon: float = 0.1
    lam: float = 0.001
    epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.lam <= 0:
            raise ContractError(f"lambda must be positive, got {self.lam}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class RankerModel:
    weights: np.ndarray
    bias: float
    hyperparams: RankerHyperparams

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 1:
            raise ContractError(f"ranker weights must be a vector, got {w.shape}")
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    def score(self, features: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if feats.shape[1] != self.weights.shape[0]:
            raise ContractError(
                f"feature length {feats.shape[1]} does not match ranker "
                f"dimension {self.weights.shape[0]}"
            )
        return feats @ self.weights.astype(np.float64) + self.bias


def train_ranker(
    features: np.ndarray,
    targets: np.ndarray,
    hyperparams: RankerHyperparams = RankerHyperparams(),
) -> RankerModel:
    """Fit the epsilon-insensitive regressor on (context feature, overlap) pairs."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(
            f"got {X.shape} features for {y.shape} targets, need matching rows"
        )
    if X.shape[0] < 2:
        raise ContractError("ranker training needs at least 2 samples")
    if y.min() < 0.0 or y.max() > 1.0:
        raise ContractError(
            f"overlap targets must lie in [0, 1], got range [{y.min()}, {y.max()}]"
        )
    w, b = solve_linear(
        X,
        y,
        lam=hyperparams.lam,
        epochs=hyperparams.epochs,
        seed=hyperparams.seed,
        loss="epsilon",
        epsilon=hyperparams.epsilon,
    )
    return RankerModel(weights=w.astype(np.float32), bias=b, hyperparams=hyperparams)


@dataclass(frozen=True)
class RankedCandidate:
    region: RegionMask
    score: float
    is_fallback: bool = False


def whole_image_fallback(dims: tuple[int, int], labels: LabelSet) -> RankedCandidate:
    h, w = dims
    return RankedCandidate(
        region=RegionMask(
            bbox=BBox(0, 0, w, h),
            mask=np.ones((h, w), dtype=bool),
            channel=labels.object_indices[0],
            source="pred",
        ),
        score=0.0,
        is_fallback=True,
    )


def rank_and_prune(
    regions: list[RegionMask],
    context_features: np.ndarray,
    model: RankerModel,
    q: int,
    dims: tuple[int, int],
    labels: LabelSet,
) -> list[RankedCandidate]:
    """Top-q candidates by predicted overlap.

    Ties break by larger mask area, then lower channel index, then input
    order.  An empty candidate list yields the whole-image fallback.
    """
    if q < 1:
        raise ContractError(f"q must be >= 1, got {q}")
    if not regions:
        return [whole_image_fallback(dims, labels)]
    if len(regions) != np.shape(context_features)[0]:
        raise ContractError(
            f"{len(regions)} regions but {np.shape(context_features)[0]} feature rows"
        )
    scores = model.score(context_features)
    order = sorted(
        range(len(regions)),
        key=lambda i: (-scores[i], -regions[i].area, regions[i].channel, i),
    )
    return [
        RankedCandidate(region=regions[i], score=float(scores[i]))
        for i in order[: min(q, len(regions))]
    ]
