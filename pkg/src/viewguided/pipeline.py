"""End-to-end completion: depth lift -> alignment -> part filter -> refinement."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import refiner
from .align import align_by_camera, icp
from .core import CloudLike, PointCloud, RigidTransform, as_points, merge
from .io import read_checkpoint, write_checkpoint
from .metrics import chamfer_distance
from .partfilter import Partition, build_coarse, estimate_density_threshold, partition_fine_coarse
from .refiner import PredictorParams, RefinementSample, TrainConfig
from .view import (
    CameraParams,
    EncoderParams,
    backproject_depth,
    build_feature_pyramid,
    global_point_feature,
    grid_feature,
    image_from_depth,
    init_encoder,
    perceptual_pool,
)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


@dataclass(frozen=True)
class PipelineConfig:
    n_r: int = 784
    n_c: int = 1024
    R: int = 2
    eps_mask: float = 0.01
    alpha: float = 1.0
    beta: float = 1e-4
    tau: float = 1e-3
    eps_target: float = 0.01
    seed: int = 0
    fps_seed_index: int = 0
    force_coarse_count: Optional[int] = None
    use_icp: bool = False
    encoder_dim: int = 128
    encoder_seed: int = 0
    channels: int = 8

    @property
    def output_points(self) -> int:
        return self.n_c * self.R

    @property
    def fusion_dim(self) -> int:
        return 3 + 2 * self.encoder_dim + 4 * self.channels + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Model:
    predictor: PredictorParams
    encoder: EncoderParams
    config: PipelineConfig
    train_config: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, cfg: PipelineConfig, seed: int = 0) -> "Model":
        enc = init_encoder(cfg.encoder_seed, cfg.encoder_dim)
        return cls(refiner.init_predictor(cfg.fusion_dim, cfg.R, seed), enc, cfg)

    def save(self, path) -> None:
        tensors = {f"predictor.{k}": v for k, v in self.predictor.as_dict().items()}
        tensors.update(self.encoder.named("encoder"))
        write_checkpoint(path, tensors, {"pipeline": self.config.to_dict(), "train": self.train_config})

    @classmethod
    def load(cls, path) -> "Model":
        tensors, meta = read_checkpoint(path)
        pred = PredictorParams.from_dict({k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("predictor.")})
        enc = EncoderParams.from_named({k: v for k, v in tensors.items() if k.startswith("encoder.")}, "encoder")
        return cls(pred, enc, PipelineConfig.from_dict(meta.get("pipeline", {})), meta.get("train", {}))


@dataclass
class Prepared:
    """Stage outputs up to (but excluding) the offset predictor."""

    partial: PointCloud
    reconstructed: PointCloud
    coarse: PointCloud
    partition: Partition
    fusion: np.ndarray
    alignment: dict

    def sample(self, gt: Optional[CloudLike] = None) -> RefinementSample:
        g = as_points(gt) if gt is not None else np.zeros((0, 3))
        return RefinementSample(self.fusion, self.coarse.points, self.partition, g)


def prepare(
    partial: CloudLike,
    depth: np.ndarray,
    cam: CameraParams,
    cfg: PipelineConfig,
    encoder: EncoderParams,
) -> Prepared:
    partial = PointCloud(as_points(partial), "partial")
    with _stage("modality-transfer"):
        # FPS needs at least n_c merged points; draw extra lifted points if the scan is small
        n_r = max(cfg.n_r, cfg.n_c - len(partial))
        rec_cam = backproject_depth(cam, depth, n_r, cfg.seed, frame="camera")
    with _stage("align"):
        if cfg.use_icp:
            # uncalibrated: start from a centroid match, then refine
            src = rec_cam.points
            shift = RigidTransform(np.eye(3), partial.points.mean(axis=0) - src.mean(axis=0))
            res = icp(src, partial.points, init=shift)
            rec = PointCloud(res.transform.apply(src), "reconstructed")
            alignment = {"method": "icp", "rms": res.rms, "iters": res.iters, **res.transform.to_dict()}
        else:
            rec = align_by_camera(rec_cam, cam)
            alignment = {"method": "camera", **cam.camera_to_world().to_dict()}
    with _stage("part-filter"):
        merged = merge(partial, rec)
        coarse = build_coarse(merged, cfg.n_c, cfg.fps_seed_index)
        d_thr = estimate_density_threshold(coarse, cfg.seed)
        part = partition_fine_coarse(coarse, partial, d_thr, cfg.force_coarse_count)
    with _stage("features"):
        f_partial = global_point_feature(partial, encoder)
        f_recon = global_point_feature(rec, encoder)
        pyr = build_feature_pyramid(image_from_depth(depth, cfg.channels))
        f_pixel = perceptual_pool(pyr, cam, coarse)
        fusion = refiner.assemble_fusion(coarse, f_partial, f_recon, f_pixel, grid_feature(len(coarse)))
    return Prepared(partial, rec, coarse, part, fusion, alignment)


def run_refinement(prep: Prepared, model: Model, use_mask: bool = True) -> PointCloud:
    with _stage("refine"):
        return refiner.complete_cloud(model.predictor, prep.sample(), model.config.eps_mask, use_mask)


def stage_report(prep: Prepared, complete: PointCloud, gt: CloudLike, global_cloud: Optional[PointCloud] = None) -> dict:
    """Per-stage chamfer distances against ``gt`` (library units, not scaled)."""
    rep = {
        "cd_rec": chamfer_distance(prep.reconstructed, gt),
        "cd_coarse": chamfer_distance(prep.coarse, gt),
        "cd_complete": chamfer_distance(complete, gt),
    }
    if global_cloud is not None:
        rep["cd_global"] = chamfer_distance(global_cloud, gt)
    return rep


def training_samples(records, cfg: PipelineConfig, encoder: EncoderParams, partial: str = "a") -> list[tuple[Prepared, RefinementSample]]:
    out = []
    for rec in records:
        src = rec.partial_a if partial == "a" else rec.partial_b
        prep = prepare(src, rec.depth, rec.camera, cfg, encoder)
        out.append((prep, prep.sample(rec.gt)))
    return out


def train_config_for(cfg: PipelineConfig, **overrides) -> TrainConfig:
    base = dict(alpha=cfg.alpha, beta=cfg.beta, eps_mask=cfg.eps_mask, R=cfg.R, eps_target=cfg.eps_target)
    base.update(overrides)
    return TrainConfig(**base)
