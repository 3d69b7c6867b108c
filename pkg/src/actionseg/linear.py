"""Deterministic primal subgradient solvers for linear SVM and SVR.

Both models minimize lam/2 * ||w||^2 + mean(loss_i) with the bias folded in as
a regularized constant-1 feature.  The solver is Pegasos-style: step 1/(lam*t),
fixed-seed epoch shuffles, projection onto the ball that must contain the
optimum, and averaging of the tail iterates.  Everything is seeded, so a
retrain is bit-identical.
"""

from __future__ import annotations

import numpy as np

from .core import ContractError, derive_rng

LOSSES = ("hinge", "epsilon")


def _with_bias(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"sample matrix must be 2-D, got shape {X.shape}")
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


def hinge_objective(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float
) -> float:
    """lam/2*(||w||^2+b^2) + mean hinge loss; y must be +-1."""
    wb = np.concatenate([w, [b]])
    margins = 1.0 - np.asarray(y, dtype=np.float64) * (_with_bias(X) @ wb)
    return 0.5 * lam * float(wb @ wb) + float(np.maximum(margins, 0.0).mean())


def epsilon_objective(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    b: float,
    lam: float,
    epsilon: float,
) -> float:
    """lam/2*(||w||^2+b^2) + mean epsilon-insensitive loss."""
    wb = np.concatenate([w, [b]])
    err = np.abs(_with_bias(X) @ wb - np.asarray(y, dtype=np.float64)) - epsilon
    return 0.5 * lam * float(wb @ wb) + float(np.maximum(err, 0.0).mean())


def solve_linear(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    epochs: int,
    seed: int,
    loss: str = "hinge",
    epsilon: float = 0.1,
) -> tuple[np.ndarray, float]:
    """Minimize the regularized loss; returns (weights, bias).

    The returned point is the average of the final half of the iterates,
    which for a strongly convex objective converges faster than the last
    iterate and damps the large early steps that 1/(lam*t) produces when lam
    is small.
    """
    if loss not in LOSSES:
        raise ContractError(f"loss must be one of {LOSSES}, got {loss!r}")
    if lam <= 0:
        raise ContractError(f"lambda must be positive, got {lam}")
    if epochs < 1:
        raise ContractError(f"epochs must be >= 1, got {epochs}")
    Xb = _with_bias(X)
    y = np.asarray(y, dtype=np.float64)
    n, d = Xb.shape
    if y.shape != (n,):
        raise ContractError(f"targets shape {y.shape} does not match {n} samples")
    if n < 2:
        raise ContractError("need at least 2 samples")
    # Any optimum satisfies lam/2*||w*||^2 <= objective(0) = loss at zero,
    # so iterates may be projected onto this ball without excluding it.
    if loss == "hinge":
        loss_at_zero = 1.0
    else:
        loss_at_zero = float(np.maximum(np.abs(y) - epsilon, 0.0).mean())
    radius = np.sqrt(2.0 * max(loss_at_zero, 1e-12) / lam)
    rng = derive_rng(seed, "linear", loss)
    w = np.zeros(d)
    total = epochs * n
    tail_start = total - total // 2
    acc = np.zeros(d)
    acc_count = 0
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            pred = float(Xb[i] @ w)
            w *= 1.0 - eta * lam
            if loss == "hinge":
                if y[i] * pred < 1.0:
                    w += (eta * y[i]) * Xb[i]
            else:
                err = pred - y[i]
                if abs(err) > epsilon:
                    w -= (eta * np.sign(err)) * Xb[i]
            norm = float(np.linalg.norm(w))
            if norm > radius:
                w *= radius / norm
            if t > tail_start:
                acc += w
                acc_count += 1
    final = acc / acc_count if acc_count else w
    return final[:-1].copy(), float(final[-1])
