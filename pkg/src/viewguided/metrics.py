"""Chamfer distance, auction EMD, F-Score, the combined training loss and their
gradients with respect to the predicted points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assignment import (
    Assignment,
    auction_assignment,
    exact_assignment,
    exhaustive_assignment,
    hungarian_assignment,
)
from .core import CloudLike, SpatialIndex, as_points, pairwise_sq_dist

__all__ = [
    "Assignment",
    "LossWeights",
    "chamfer_distance",
    "chamfer_terms",
    "emd_auction",
    "emd_exact_oracle",
    "f_score",
    "combined_loss",
    "chamfer_gradient",
    "emd_gradient",
    "nn_matchings",
    "gradient_fd_error",
]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1e-4

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("loss weights must be non-negative and not both zero")


def _nonempty(cloud: CloudLike, name: str) -> np.ndarray:
    pts = as_points(cloud)
    if len(pts) == 0:
        raise ValueError(f"{name} is an empty cloud")
    return pts


def nn_matchings(P: CloudLike, Q: CloudLike, workers: int = 1):
    """Nearest neighbours both ways: ``(nn of P in Q, d2, nn of Q in P, d2)``."""
    p = _nonempty(P, "P")
    q = _nonempty(Q, "Q")
    pq, dpq = SpatialIndex(q, workers).query(p)
    qp, dqp = SpatialIndex(p, workers).query(q)
    return pq, dpq, qp, dqp


def chamfer_terms(P: CloudLike, Q: CloudLike, workers: int = 1) -> tuple[float, float]:
    _, dpq, _, dqp = nn_matchings(P, Q, workers)
    return float(np.mean(dpq)), float(np.mean(dqp))


def chamfer_distance(P: CloudLike, Q: CloudLike, workers: int = 1) -> float:
    a, b = chamfer_terms(P, Q, workers)
    return a + b


def _cost_matrix(P: CloudLike, Q: CloudLike) -> np.ndarray:
    p = _nonempty(P, "P")
    q = _nonempty(Q, "Q")
    if len(p) != len(q):
        raise ValueError(f"size mismatch: {len(p)} vs {len(q)} points")
    return pairwise_sq_dist(p, q)


def emd_auction(P: CloudLike, Q: CloudLike, eps_target: float = 0.01) -> Assignment:
    """Squared-distance bijection whose cost is within ``1 + eps_target`` of optimal.

    Use ``.mean_cost`` for the EMD value.
    """
    return auction_assignment(_cost_matrix(P, Q), eps_target)


def emd_exact_oracle(P: CloudLike, Q: CloudLike, method: Optional[str] = None) -> Assignment:
    """Globally optimal bijection by enumeration (n <= 9) or Hungarian (n <= 256)."""
    C = _cost_matrix(P, Q)
    if method is None:
        return exact_assignment(C)
    if method == "exhaustive":
        return exhaustive_assignment(C)
    if method == "hungarian":
        return hungarian_assignment(C)
    raise ValueError(f"unknown oracle method {method!r}")


def f_score(pred: CloudLike, gt: CloudLike, tau: float = 1e-3, squared: bool = True) -> float:
    """F-Score at threshold ``tau``.

    With ``squared`` (the default) ``tau`` thresholds squared NN distances;
    otherwise it thresholds plain distances.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    _, dpg, _, dgp = nn_matchings(_nonempty(pred, "pred"), _nonempty(gt, "gt"))
    thr = tau if squared else tau * tau
    precision = float(np.mean(dpg < thr))
    recall = float(np.mean(dgp < thr))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def combined_loss(
    pred: CloudLike,
    gt: CloudLike,
    w: LossWeights = LossWeights(),
    eps_target: float = 0.01,
) -> float:
    p = as_points(pred)
    g = as_points(gt)
    if len(p) != len(g):
        raise ValueError(f"size mismatch: {len(p)} vs {len(g)} points")
    total = 0.0
    if w.alpha:
        total += w.alpha * chamfer_distance(p, g)
    if w.beta:
        total += w.beta * emd_auction(p, g, eps_target).mean_cost
    return total


def chamfer_gradient(pred: CloudLike, gt: CloudLike, matchings=None) -> np.ndarray:
    """Gradient of the chamfer distance w.r.t. ``pred`` with NN matchings fixed.

    ``matchings`` may pass a precomputed :func:`nn_matchings` result.
    """
    p = _nonempty(pred, "pred")
    g = _nonempty(gt, "gt")
    pg, _, gp, _ = matchings if matchings is not None else nn_matchings(p, g)
    grad = (2.0 / len(p)) * (p - g[pg])
    back = np.zeros_like(p)
    np.add.at(back, gp, p[gp] - g)
    return grad + (2.0 / len(g)) * back


def emd_gradient(pred: CloudLike, gt: CloudLike, a: Assignment) -> np.ndarray:
    p = _nonempty(pred, "pred")
    g = _nonempty(gt, "gt")
    if len(a) != len(p) or len(p) != len(g):
        raise ValueError("assignment does not match the clouds")
    return (2.0 / len(p)) * (p - g[a.mapping])


def gradient_fd_error(pred: CloudLike, gt: CloudLike, kind: str = "cd", h: float = 1e-5, eps_target: float = 0.01) -> float:
    """Max relative error of the analytic gradient against central differences.

    Chamfer is differenced directly (valid away from NN ties); for EMD the
    assignment is frozen at ``pred``.
    """
    p = _nonempty(pred, "pred").copy()
    g = _nonempty(gt, "gt")
    if kind == "cd":
        an = chamfer_gradient(p, g)

        def f(x):
            return chamfer_distance(x, g)

    elif kind == "emd":
        a = emd_auction(p, g, eps_target)
        an = emd_gradient(p, g, a)
        target = g[a.mapping]

        def f(x):
            return float(np.mean(np.sum((x - target) ** 2, axis=1)))

    else:
        raise ValueError(f"unknown gradient kind {kind!r}")
    fd = np.zeros_like(p)
    for idx in np.ndindex(*p.shape):
        x = p.copy()
        x[idx] += h
        hi = f(x)
        x[idx] -= 2 * h
        fd[idx] = (hi - f(x)) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-7)
    return float(np.max(np.abs(fd - an) / denom))
