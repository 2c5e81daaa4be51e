"""Offset predictor, protective mask and the training loop.

The predictor works on a per-point fusion feature and emits ``R`` offsets per
coarse point:

    f_point = relu(relu(X W1 + b1) W2 + b2)              (N, 128)
    tile_r  = f_point + code_r                           r = 0..R-1
    mix_r   = relu([tile_0 | ... | tile_{R-1}] Wm_r + bm_r)  (N, 64)
    off_r   = mix_r Wh + bh                              (N, 3)

The mixing layer sees all tiles of a point jointly, which is the dense
equivalent of a ``1 x R`` convolution over the tile axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from .core import CloudLike, PointCloud, as_points, make_rng
from .metrics import LossWeights, chamfer_gradient, emd_auction, emd_gradient, nn_matchings
from .partfilter import Partition

HIDDEN = (256, 128)
MIX_DIM = 64
DEFAULT_R = 2
DEFAULT_EPS_MASK = 0.01


def assemble_fusion(
    coarse: CloudLike,
    f_partial: np.ndarray,
    f_recon: np.ndarray,
    f_pixel: np.ndarray,
    f_grid: np.ndarray,
) -> np.ndarray:
    """Rows ``[xyz | f_partial | f_recon | f_pixel_i | f_grid_i]`` per coarse point."""
    xyz = as_points(coarse)
    n = len(xyz)
    f_partial = np.asarray(f_partial, dtype=np.float64).reshape(-1)
    f_recon = np.asarray(f_recon, dtype=np.float64).reshape(-1)
    f_pixel = np.asarray(f_pixel, dtype=np.float64)
    f_grid = np.asarray(f_grid, dtype=np.float64)
    if f_pixel.ndim != 2 or f_pixel.shape[0] != n:
        raise ValueError(f"f_pixel must have {n} rows, got shape {f_pixel.shape}")
    if f_grid.shape != (n, 2):
        raise ValueError(f"f_grid must have shape ({n}, 2), got {f_grid.shape}")
    return np.concatenate(
        [
            xyz,
            np.broadcast_to(f_partial, (n, f_partial.size)),
            np.broadcast_to(f_recon, (n, f_recon.size)),
            f_pixel,
            f_grid,
        ],
        axis=1,
    )


@dataclass
class PredictorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    code: np.ndarray  # (R, 128) per-tile additive codes
    Wm: np.ndarray  # (R, 128 * R, 64)
    bm: np.ndarray  # (R, 64)
    Wh: np.ndarray
    bh: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def R(self) -> int:
        return self.code.shape[0]

    def names(self) -> list[str]:
        return [f.name for f in fields(self)]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.names()}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorParams":
        return cls(**{f.name: np.array(d[f.name], dtype=np.float64) for f in fields(cls)})

    def copy(self) -> "PredictorParams":
        return PredictorParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def zeros_like(self) -> "PredictorParams":
        return PredictorParams(**{k: np.zeros_like(v) for k, v in self.as_dict().items()})

    def size(self) -> int:
        return sum(v.size for v in self.as_dict().values())


def init_predictor(in_dim: int, R: int = DEFAULT_R, seed: int = 0) -> PredictorParams:
    """Uniform initialisation in ``±1/sqrt(fan_in)``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    rng = make_rng(seed)
    h1, h2 = HIDDEN

    def u(fan_in, shape):
        lim = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    return PredictorParams(
        W1=u(in_dim, (in_dim, h1)),
        b1=u(in_dim, h1),
        W2=u(h1, (h1, h2)),
        b2=u(h1, h2),
        code=u(h2, (R, h2)),
        Wm=u(h2 * R, (R, h2 * R, MIX_DIM)),
        bm=u(h2 * R, (R, MIX_DIM)),
        Wh=u(MIX_DIM, (MIX_DIM, 3)),
        bh=u(MIX_DIM, 3),
    )


@dataclass
class _Cache:
    X: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    Z: np.ndarray
    am: np.ndarray
    m: np.ndarray


def _forward(params: PredictorParams, X: np.ndarray) -> tuple[np.ndarray, _Cache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ValueError(f"fusion width {X.shape[-1]} does not match predictor input {params.in_dim}")
    R = params.R
    n = X.shape[0]
    a1 = X @ params.W1 + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(a2, 0.0)
    tiles = h2[None, :, :] + params.code[:, None, :]
    Z = tiles.transpose(1, 0, 2).reshape(n, -1)
    am = np.einsum("nk,rkj->rnj", Z, params.Wm) + params.bm[:, None, :]
    m = np.maximum(am, 0.0)
    out = m @ params.Wh + params.bh
    return out, _Cache(X, a1, h1, a2, h2, Z, am, m)


def predict_offsets(params: PredictorParams, fusion: np.ndarray, R: Optional[int] = None) -> np.ndarray:
    """Offsets of shape ``(R, N, 3)``."""
    if R is not None and R != params.R:
        raise ValueError(f"predictor was built for R={params.R}, got R={R}")
    return _forward(params, fusion)[0]


def _backward(params: PredictorParams, cache: _Cache, dout: np.ndarray) -> PredictorParams:
    R = params.R
    n = cache.X.shape[0]
    g = params.zeros_like()
    g.Wh = np.einsum("rnj,rnk->jk", cache.m, dout)
    g.bh = dout.sum(axis=(0, 1))
    dam = (dout @ params.Wh.T) * (cache.am > 0)
    g.Wm = np.einsum("nk,rnj->rkj", cache.Z, dam)
    g.bm = dam.sum(axis=1)
    dZ = np.einsum("rnj,rkj->nk", dam, params.Wm)
    dtiles = dZ.reshape(n, R, -1).transpose(1, 0, 2)
    g.code = dtiles.sum(axis=1)
    da2 = dtiles.sum(axis=0) * (cache.a2 > 0)
    g.W2 = cache.h1.T @ da2
    g.b2 = da2.sum(axis=0)
    da1 = (da2 @ params.W2.T) * (cache.a1 > 0)
    g.W1 = cache.X.T @ da1
    g.b1 = da1.sum(axis=0)
    return g


def mask_factors(part: Optional[Partition], n: int, eps_mask: float) -> np.ndarray:
    f = np.ones(n)
    if part is None:
        return f
    fine = np.asarray(part.fine)
    if fine.size and (fine.min() < 0 or fine.max() >= n):
        raise IndexError("partition index out of range")
    f[fine] = eps_mask
    return f


def apply_protective_mask(offsets: np.ndarray, part: Partition, eps_mask: float = DEFAULT_EPS_MASK) -> np.ndarray:
    """Scale the fine-part offsets of every tile by ``eps_mask``."""
    offsets = np.asarray(offsets, dtype=np.float64)
    return offsets * mask_factors(part, offsets.shape[1], eps_mask)[None, :, None]


def refine(coarse: CloudLike, offsets: np.ndarray) -> PointCloud:
    """Tile-major concatenation of ``coarse + offsets[r]``."""
    c = as_points(coarse)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[1:] != c.shape:
        raise ValueError(f"offsets shape {offsets.shape} does not match coarse {c.shape}")
    return PointCloud((c[None, :, :] + offsets).reshape(-1, 3), "complete")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-6
    batch_size: int = 1
    epochs: int = 200
    alpha: float = 1.0
    beta: float = 1e-4
    eps_mask: float = DEFAULT_EPS_MASK
    R: int = DEFAULT_R
    seed: int = 0
    eps_target: float = 0.01
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    lr_schedule: str = "constant"  # constant | cosine
    use_mask: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 1 or self.R < 1:
            raise ValueError("learning rate, batch size, epochs and R must be positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# desk-scale runs get 200 updates, far too few for plain SGD at the full-scale rate
TOY_CONFIG = TrainConfig(lr=1e-3, optimizer="adam")


@dataclass
class RefinementSample:
    """Everything one training/inference step needs, features precomputed."""

    fusion: np.ndarray
    coarse: np.ndarray
    partition: Partition
    gt: np.ndarray


@dataclass(frozen=True)
class Matchings:
    """Correspondences held fixed while differentiating the loss."""

    pred_to_gt: np.ndarray
    gt_to_pred: np.ndarray
    emd: Optional[np.ndarray]


def _output(params, sample: RefinementSample, eps_mask: float, use_mask: bool):
    raw, cache = _forward(params, sample.fusion)
    factors = mask_factors(sample.partition if use_mask else None, raw.shape[1], eps_mask)
    offsets = raw * factors[None, :, None]
    out = (sample.coarse[None, :, :] + offsets).reshape(-1, 3)
    return out, cache, factors


def compute_matchings(out: np.ndarray, gt: np.ndarray, w: LossWeights, eps_target: float) -> tuple[Matchings, float]:
    """Freeze NN/EMD correspondences at ``out`` and return the loss there."""
    pg, dpg, gp, dgp = nn_matchings(out, gt)
    loss = w.alpha * (float(np.mean(dpg)) + float(np.mean(dgp))) if w.alpha else 0.0
    emd = None
    if w.beta:
        a = emd_auction(out, gt, eps_target)
        emd = np.asarray(a.mapping)
        loss += w.beta * a.mean_cost
    return Matchings(pg, gp, emd), loss


def frozen_loss(out: np.ndarray, gt: np.ndarray, mt: Matchings, w: LossWeights) -> float:
    """The combined loss evaluated with correspondences ``mt`` held fixed."""
    loss = 0.0
    if w.alpha:
        d1 = np.sum((out - gt[mt.pred_to_gt]) ** 2, axis=1)
        d2 = np.sum((gt - out[mt.gt_to_pred]) ** 2, axis=1)
        loss += w.alpha * (float(np.mean(d1)) + float(np.mean(d2)))
    if w.beta:
        loss += w.beta * float(np.mean(np.sum((out - gt[mt.emd]) ** 2, axis=1)))
    return loss


def _loss_gradient(out, gt, mt: Matchings, w: LossWeights) -> np.ndarray:
    g = np.zeros_like(out)
    if w.alpha:
        g += w.alpha * chamfer_gradient(out, gt, (mt.pred_to_gt, None, mt.gt_to_pred, None))
    if w.beta:
        g += w.beta * (2.0 / len(out)) * (out - gt[mt.emd])
    return g


def loss_and_gradients(
    params: PredictorParams, sample: RefinementSample, cfg: TrainConfig, matchings: Optional[Matchings] = None
) -> tuple[float, PredictorParams, Matchings]:
    if len(sample.gt) != params.R * len(sample.coarse):
        raise ValueError(f"size mismatch: gt has {len(sample.gt)} points, expected {params.R * len(sample.coarse)}")
    w = cfg.weights
    out, cache, factors = _output(params, sample, cfg.eps_mask, cfg.use_mask)
    if matchings is None:
        matchings, loss = compute_matchings(out, sample.gt, w, cfg.eps_target)
    else:
        loss = frozen_loss(out, sample.gt, matchings, w)
    dout = _loss_gradient(out, sample.gt, matchings, w).reshape(params.R, -1, 3)
    grads = _backward(params, cache, dout * factors[None, :, None])
    return loss, grads, matchings


class Optimizer:
    """Plain, momentum or Adam updates; state lives on the instance."""

    def __init__(self, cfg: TrainConfig):
        self.kind = cfg.optimizer
        self.momentum = cfg.momentum
        self.t = 0
        self.state: dict[str, tuple] = {}

    def step(self, params: PredictorParams, grads: PredictorParams, lr: float) -> PredictorParams:
        self.t += 1
        new = {}
        g = grads.as_dict()
        for k, p in params.as_dict().items():
            gk = g[k]
            if self.kind == "sgd":
                new[k] = p - lr * gk
            elif self.kind == "momentum":
                v = self.momentum * self.state.get(k, (np.zeros_like(p),))[0] + gk
                self.state[k] = (v,)
                new[k] = p - lr * v
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                m, v = self.state.get(k, (np.zeros_like(p), np.zeros_like(p)))
                m = b1 * m + (1 - b1) * gk
                v = b2 * v + (1 - b2) * gk * gk
                self.state[k] = (m, v)
                mhat = m / (1 - b1**self.t)
                vhat = v / (1 - b2**self.t)
                new[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
        return PredictorParams(**new)


def train_step(
    params: PredictorParams,
    sample: RefinementSample,
    cfg: TrainConfig,
    optimizer: Optional[Optimizer] = None,
    lr: Optional[float] = None,
) -> tuple[PredictorParams, float]:
    """One forward/backward pass and update; returns the loss before the update."""
    loss, grads, _ = loss_and_gradients(params, sample, cfg)
    opt = optimizer or Optimizer(replace(cfg, optimizer="sgd"))
    return opt.step(params, grads, cfg.lr if lr is None else lr), loss


def scheduled_lr(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.lr
    return 0.5 * cfg.lr * (1 + math.cos(math.pi * step / total))


def train(
    params: PredictorParams,
    samples: list[RefinementSample],
    cfg: TrainConfig,
    steps: Optional[int] = None,
    callback=None,
) -> tuple[PredictorParams, list[float]]:
    """Cycle through ``samples`` in a seeded order for ``steps`` updates.

    Without ``steps`` the run lasts ``cfg.epochs`` passes over the samples.
    Batches average the gradients of ``cfg.batch_size`` consecutive samples.
    """
    if not samples:
        raise ValueError("no training samples")
    rng = make_rng(cfg.seed)
    total = steps if steps is not None else cfg.epochs * math.ceil(len(samples) / cfg.batch_size)
    opt = Optimizer(cfg)
    order: list[int] = []
    history = []
    for step in range(total):
        batch = []
        while len(batch) < cfg.batch_size:
            if not order:
                order = list(rng.permutation(len(samples)))
            batch.append(samples[order.pop(0)])
        losses, acc = [], None
        for s in batch:
            loss, g, _ = loss_and_gradients(params, s, cfg)
            losses.append(loss)
            acc = g if acc is None else PredictorParams(**{k: acc.as_dict()[k] + v for k, v in g.as_dict().items()})
        if len(batch) > 1:
            acc = PredictorParams(**{k: v / len(batch) for k, v in acc.as_dict().items()})
        params = opt.step(params, acc, scheduled_lr(cfg, step, total))
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(step, history[-1])
    return params, history


def complete_cloud(
    params: PredictorParams, sample: RefinementSample, eps_mask: float = DEFAULT_EPS_MASK, use_mask: bool = True
) -> PointCloud:
    offsets = predict_offsets(params, sample.fusion)
    if use_mask:
        offsets = apply_protective_mask(offsets, sample.partition, eps_mask)
    return refine(sample.coarse, offsets)


def _relu_pattern(params: PredictorParams, X: np.ndarray) -> tuple:
    _, c = _forward(params, X)
    return (c.a1 > 0, c.a2 > 0, c.am > 0)


def gradient_check(
    params: PredictorParams,
    sample: RefinementSample,
    h: float = 1e-5,
    n_params: int = 64,
    cfg: Optional[TrainConfig] = None,
    seed: int = 0,
    max_tries: int = 100_000,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Correspondences are frozen at the base point. Coordinates whose ``±h``
    perturbation flips any ReLU are skipped (the loss is not differentiable
    there) and replaced by fresh random draws.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    cfg = cfg or TrainConfig()
    _, grads, mt = loss_and_gradients(params, sample, cfg)
    w = cfg.weights
    base_pattern = _relu_pattern(params, sample.fusion)
    names = params.names()
    sizes = np.array([getattr(params, k).size for k in names])
    cum = np.cumsum(sizes)
    rng = make_rng(seed)
    worst, checked, tries = 0.0, 0, 0
    seen = set()
    while checked < n_params and tries < max_tries:
        tries += 1
        flat = int(rng.integers(cum[-1]))
        if flat in seen:
            continue
        seen.add(flat)
        which = int(np.searchsorted(cum, flat, side="right"))
        name = names[which]
        local = flat - (cum[which - 1] if which else 0)
        vals = []
        stable = True
        for sign in (1.0, -1.0):
            p = params.copy()
            arr = getattr(p, name).reshape(-1)
            arr[local] += sign * h
            pattern = _relu_pattern(p, sample.fusion)
            if any(not np.array_equal(a, b) for a, b in zip(pattern, base_pattern)):
                stable = False
                break
            out, _, _ = _output(p, sample, cfg.eps_mask, cfg.use_mask)
            vals.append(frozen_loss(out, sample.gt, mt, w))
        if not stable:
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(getattr(grads, name).reshape(-1)[local])
        denom = max(abs(fd), abs(an), 1e-7)
        worst = max(worst, abs(fd - an) / denom)
        checked += 1
    if checked < n_params:
        raise RuntimeError(f"only {checked} differentiable coordinates found")
    return worst


def gradcheck_fixture(seed: int = 0, n_c: int = 64, R: int = DEFAULT_R, in_dim: int = 293, fine_frac: float = 0.3):
    """Random predictor plus sample for gradient checks: ``(params, sample)``."""
    rng = make_rng(seed)
    coarse = rng.uniform(-1, 1, size=(n_c, 3))
    fusion = rng.normal(size=(n_c, in_dim))
    fusion[:, :3] = coarse
    gt = np.concatenate([coarse + rng.normal(scale=0.1, size=coarse.shape) for _ in range(R)])
    perm = rng.permutation(n_c)
    n_fine = int(round(fine_frac * n_c))
    part = Partition(np.sort(perm[:n_fine]), np.sort(perm[n_fine:]), 0.0)
    return init_predictor(in_dim, R, seed), RefinementSample(fusion, coarse, part, gt)
