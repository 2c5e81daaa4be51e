"""Wall-time benchmarks for the hot kernels and the end-to-end pipeline."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .core import SpatialIndex, brute_force_nearest, farthest_point_sample, make_rng
from .metrics import emd_auction

SUITES = ("nn", "fps", "emd", "pipeline")


@dataclass
class BenchRow:
    suite: str
    case: str
    n: int
    seconds: float
    throughput: float
    unit: str


def _timed(fn: Callable[[], object]) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench_nn(sizes=(1024, 4096, 16384), seed: int = 0, workers: int = 1) -> list[BenchRow]:
    rows = []
    rng = make_rng(seed)
    for n in sizes:
        pts = rng.uniform(-1, 1, size=(n, 3))
        qs = rng.uniform(-1, 1, size=(n, 3))
        t_idx = _timed(lambda: SpatialIndex(pts, workers).query(qs))
        t_bf = _timed(lambda: brute_force_nearest(pts, qs))
        rows.append(BenchRow("nn", "spatial-index", n, t_idx, n / t_idx, "queries/s"))
        rows.append(BenchRow("nn", "brute-force", n, t_bf, n / t_bf, "queries/s"))
    return rows


def bench_fps(sizes=(2048, 8192, 32768), k: int = 1024, seed: int = 0) -> list[BenchRow]:
    rows = []
    rng = make_rng(seed)
    for n in sizes:
        pts = rng.uniform(-1, 1, size=(n, 3))
        kk = min(k, n)
        t = _timed(lambda: farthest_point_sample(pts, kk))
        rows.append(BenchRow("fps", f"k={kk}", n, t, kk / t, "samples/s"))
    return rows


def bench_emd(sizes=(256, 1024, 2048), eps_target: float = 0.01, seed: int = 0) -> list[BenchRow]:
    rows = []
    rng = make_rng(seed)
    for n in sizes:
        p = rng.uniform(0, 1, size=(n, 3))
        q = rng.uniform(0, 1, size=(n, 3))
        t = _timed(lambda: emd_auction(p, q, eps_target))
        rows.append(BenchRow("emd", f"auction eps={eps_target:g}", n, t, n / t, "points/s"))
    return rows


def bench_pipeline(seed: int = 0, repeats: int = 1) -> list[BenchRow]:
    from .pipeline import Model, PipelineConfig, prepare, run_refinement
    from .synth import SynthConfig, make_record, random_shapes
    from .view import view_schedule

    cfg = PipelineConfig(seed=seed)
    model = Model.initial(cfg, seed)
    rec = make_record(random_shapes(1, seed)[0], 0, view_schedule()[0], 0, SynthConfig(), seed)
    rows = []
    for i in range(repeats):
        t = _timed(lambda: run_refinement(prepare(rec.partial_a, rec.depth, rec.camera, cfg, model.encoder), model))
        rows.append(BenchRow("pipeline", f"complete #{i}", cfg.output_points, t, 1.0 / t, "records/s"))
    return rows


def run_suite(name: str, seed: int = 0, workers: int = 1, sizes: Optional[list[int]] = None) -> list[BenchRow]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    kw = {"sizes": tuple(sizes)} if sizes else {}
    if name == "nn":
        return bench_nn(seed=seed, workers=workers, **kw)
    if name == "fps":
        return bench_fps(seed=seed, **kw)
    if name == "emd":
        return bench_emd(seed=seed, **kw)
    return bench_pipeline(seed=seed)


def format_table(rows: list[BenchRow]) -> str:
    head = f"{'suite':<9} {'case':<22} {'n':>7} {'seconds':>10} {'throughput':>14}  unit"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.suite:<9} {r.case:<22} {r.n:>7} {r.seconds:>10.4f} {r.throughput:>14.1f}  {r.unit}")
    return "\n".join(lines)


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(BenchRow.__dataclass_fields__), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    return buf.getvalue()
