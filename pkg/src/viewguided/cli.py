"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure. Reports are
JSON with sorted keys. Chamfer values are scaled by 10^3 only here.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "VIEWGUIDED_THREADS"
CD_SCALE = 1e3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.code = code


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _emit(report: dict, path) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_json_arg(path) -> dict:
    from .io import load_json

    return load_json(path) if path else {}


def _pipeline_config(args, base=None):
    from .pipeline import PipelineConfig

    d = (base or PipelineConfig()).to_dict()
    d.update({k: v for k, v in _load_json_arg(getattr(args, "config", None)).items() if k in d})
    for key in ("n_r", "n_c", "R", "eps_mask", "alpha", "beta", "tau", "eps_target", "seed", "force_coarse_count"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "icp", False):
        d["use_icp"] = True
    return PipelineConfig.from_dict(d)


# ---- subcommands -----------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SynthConfig, make_dataset, random_shapes, write_dataset
    from .view import view_schedule

    cfg = SynthConfig(
        n_points=args.points,
        sigma=args.sigma,
        occluder=not args.no_occluder,
    )
    views = view_schedule()
    view_ids = args.view_ids if args.view_ids else list(range(len(views)))
    if any(v < 0 or v >= len(views) for v in view_ids):
        raise CliError(f"view ids must lie in 0..{len(views) - 1}")
    shapes = random_shapes(args.shapes, args.seed)
    records = make_dataset(shapes, views, cfg, args.seed, args.threads, view_ids)
    settings = {"seed": args.seed, "points": args.points, "sigma": args.sigma, "occluder": cfg.occluder, "shapes": args.shapes, "view_ids": view_ids}
    write_dataset(args.out, records, {"settings": settings})
    _emit({"records": len(records), "out": str(args.out), **settings}, args.report)
    return EXIT_OK


def cmd_align(args) -> int:
    from .align import align_by_camera, icp
    from .core import PointCloud, RigidTransform
    from .io import dump_json, read_camera, read_cloud, write_cloud

    recon = read_cloud(args.recon)
    if args.icp:
        partial = read_cloud(args.partial)
        src = recon.points
        init = RigidTransform(np.eye(3), partial.points.mean(axis=0) - src.mean(axis=0))
        res = icp(src, partial.points, max_iters=args.max_iters, init=init)
        aligned = PointCloud(res.transform.apply(src), "reconstructed")
        record = {"method": "icp", "rms": res.rms, "iters": res.iters, "history": res.history, **res.transform.to_dict()}
    else:
        if not args.camera:
            raise CliError("align needs --camera or --icp", EXIT_USAGE)
        cam = read_camera(args.camera)
        aligned = align_by_camera(recon, cam)
        record = {"method": "camera", **cam.camera_to_world().to_dict()}
    write_cloud(args.out, aligned)
    dump_json(args.transform, record)
    return EXIT_OK


def cmd_filter(args) -> int:
    from .core import merge
    from .io import dump_json, read_cloud, write_cloud
    from .partfilter import build_coarse, estimate_density_threshold, partition_fine_coarse

    partial = read_cloud(args.partial)
    recon = read_cloud(args.recon)
    coarse = build_coarse(merge(partial, recon), args.n_c, args.fps_seed_index)
    d_thr = args.d_thr if args.d_thr is not None else estimate_density_threshold(coarse, args.seed)
    part = partition_fine_coarse(coarse, partial, d_thr, args.force_coarse_count)
    write_cloud(args.out, coarse)
    dump_json(args.partition, {**part.to_dict(), "seed": args.seed, "n_c": args.n_c})
    return EXIT_OK


def _load_model(path):
    from .pipeline import Model

    if not path or not Path(path).is_file():
        raise CliError(f"no predictor parameters: checkpoint {path!r} not found")
    return Model.load(path)


def cmd_complete(args) -> int:
    from .core import PointCloud
    from .io import read_camera, read_cloud, read_depth_pgm, write_cloud
    from .pipeline import prepare, stage_report
    from .refiner import complete_cloud

    model = _load_model(args.checkpoint)
    cfg = _pipeline_config(args, model.config)
    model = replace(model, config=cfg)
    partial = read_cloud(args.partial)
    depth = read_depth_pgm(args.depth)
    cam = read_camera(args.camera)
    prep = prepare(partial, depth, cam, cfg, model.encoder)
    sample = prep.sample()
    complete = complete_cloud(model.predictor, sample, cfg.eps_mask, True)
    write_cloud(args.out, complete)
    report = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "points": {"partial": len(prep.partial), "reconstructed": len(prep.reconstructed), "coarse": len(prep.coarse), "complete": len(complete)},
        "partition": {"fine": len(prep.partition.fine), "coarse": len(prep.partition.coarse), "d_thr": prep.partition.d_thr},
        "alignment": prep.alignment,
    }
    global_cloud = None
    if args.ablation:
        glob_model = _load_model(args.global_checkpoint) if args.global_checkpoint else model
        global_cloud = complete_cloud(glob_model.predictor, sample, cfg.eps_mask, False)
        out = Path(args.out)
        stems = {"rec": prep.reconstructed, "coarse": prep.coarse, "global": global_cloud, "complete": complete}
        report["ablation"] = {}
        for name, cloud in stems.items():
            p = out.with_name(f"{out.stem}_{name}{out.suffix}")
            write_cloud(p, PointCloud(cloud.points, cloud.tag))
            report["ablation"][name] = str(p.name)
    if args.gt:
        gt = read_cloud(args.gt)
        rep = stage_report(prep, complete, gt, global_cloud)
        report["cd_x1e3"] = {k: v * CD_SCALE for k, v in sorted(rep.items())}
    _emit(report, args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .core import normalize_to_unit_sphere
    from .io import read_cloud
    from .metrics import LossWeights, chamfer_distance, emd_auction, f_score

    pred = read_cloud(args.pred)
    gt = read_cloud(args.gt)
    if args.renormalize:
        pred = normalize_to_unit_sphere(pred)[0]
        gt = normalize_to_unit_sphere(gt)[0]
    w = LossWeights(args.alpha, args.beta)
    cd = chamfer_distance(pred, gt, args.threads)
    squared = args.tau_mode == "squared"
    report = {
        "cd": cd * CD_SCALE,
        "cd_unit": "1e-3",
        "fscore": f_score(pred, gt, args.tau, squared),
        "tau": args.tau,
        "tau_mode": args.tau_mode,
        "alpha": w.alpha,
        "beta": w.beta,
        "points": {"pred": len(pred), "gt": len(gt)},
        "renormalized": bool(args.renormalize),
    }
    if args.no_emd:
        report["emd"] = None
        report["combined"] = w.alpha * cd if not w.beta else None
    else:
        if len(pred) != len(gt):
            raise CliError(f"size mismatch: EMD needs equal sizes, got {len(pred)} and {len(gt)}")
        emd = emd_auction(pred, gt, args.eps_target).mean_cost
        report["emd"] = emd
        report["eps_target"] = args.eps_target
        report["combined"] = w.alpha * cd + w.beta * emd
    _emit(report, args.report)
    return EXIT_OK


def cmd_train(args) -> int:
    from .io import load_json
    from .pipeline import Model, training_samples
    from .refiner import TrainConfig, train
    from .synth import read_dataset

    cfg = _pipeline_config(args)
    overrides = load_json(args.config) if args.config else {}
    tdict = TrainConfig(alpha=cfg.alpha, beta=cfg.beta, eps_mask=cfg.eps_mask, R=cfg.R, eps_target=cfg.eps_target, seed=cfg.seed).to_dict()
    tdict.update({k: v for k, v in overrides.items() if k in tdict})
    for key in ("lr", "epochs", "batch_size", "optimizer", "lr_schedule"):
        val = getattr(args, key)
        if val is not None:
            tdict[key] = val
    if args.no_mask:
        tdict["use_mask"] = False
    tcfg = TrainConfig.from_dict(tdict)
    records = read_dataset(args.data)
    if not records:
        raise CliError(f"{args.data}: dataset is empty")
    if len(records[0].gt) != cfg.output_points:
        raise CliError(f"ground truth has {len(records[0].gt)} points but R*N_c = {cfg.output_points}; adjust --n-c/--R")
    model = Model.initial(cfg, cfg.seed)
    pairs = training_samples(records, cfg, model.encoder, args.partial)
    params, history = train(model.predictor, [s for _, s in pairs], tcfg, steps=args.steps)
    if not all(np.isfinite(history)):
        raise CliError("training diverged (non-finite loss)", EXIT_NUMERIC)
    trained = Model(params, model.encoder, cfg, tcfg.to_dict())
    trained.save(args.out)
    _emit(
        {
            "checkpoint": str(args.out),
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "train": tcfg.to_dict(),
            "steps": len(history),
            "loss_first": history[0],
            "loss_last": history[-1],
            "history": history,
        },
        args.report,
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .metrics import gradient_fd_error
    from .refiner import TrainConfig, gradcheck_fixture, gradient_check

    results = []
    for k in range(args.fixtures):
        seed = args.seed + k
        params, sample = gradcheck_fixture(seed, args.points, args.R)
        tcfg = TrainConfig(eps_mask=args.eps_mask, R=args.R)
        rng = np.random.default_rng(seed)
        p = rng.uniform(-1, 1, size=(16, 3))
        q = rng.uniform(-1, 1, size=(16, 3))
        results.append(
            {
                "seed": seed,
                "cd": gradient_fd_error(p, q, "cd", args.h),
                "emd": gradient_fd_error(p, q, "emd", args.h),
                "predictor": gradient_check(params, sample, args.h, args.n_params, tcfg, seed),
            }
        )
    worst = max(max(r["cd"], r["emd"], r["predictor"]) for r in results)
    ok = worst < args.tol
    _emit({"fixtures": results, "h": args.h, "max_rel_err": worst, "tol": args.tol, "ok": ok}, args.report)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args) -> int:
    from .bench import format_table, run_suite, to_csv

    rows = run_suite(args.suite, args.seed, args.threads, args.sizes)
    print(format_table(rows))
    csv_text = to_csv(rows)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    else:
        print()
        print(csv_text, end="")
    return EXIT_OK


# ---- parser ----------------------------------------------------------------


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with pipeline (and training) settings")
    p.add_argument("--n-r", dest="n_r", type=int)
    p.add_argument("--n-c", dest="n_c", type=int)
    p.add_argument("--R", dest="R", type=int)
    p.add_argument("--eps-mask", dest="eps_mask", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps-target", dest="eps_target", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--force-coarse-count", dest="force_coarse_count", type=int)


def build_parser() -> argparse.ArgumentParser:
    from .bench import SUITES

    ap = argparse.ArgumentParser(prog="viewguided", description="View-guided point cloud completion tools.")
    ap.add_argument("--threads", type=int, default=_default_threads(), help=f"worker cap (default ${THREADS_ENV} or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--shapes", type=int, default=6)
    p.add_argument("--view-ids", dest="view_ids", type=int, nargs="*")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--no-occluder", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", help="register a reconstructed cloud to the partial frame")
    p.add_argument("--recon", required=True, help="reconstructed cloud (camera frame)")
    p.add_argument("--partial", help="partial cloud (needed for --icp)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--camera")
    g.add_argument("--icp", action="store_true")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--transform", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("filter", help="build the coarse cloud and its fine/coarse split")
    p.add_argument("--partial", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--n-c", dest="n_c", type=int, default=1024)
    p.add_argument("--fps-seed-index", dest="fps_seed_index", type=int, default=0)
    p.add_argument("--d-thr", dest="d_thr", type=float)
    p.add_argument("--force-coarse-count", dest="force_coarse_count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--partition", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("complete", help="run the full pipeline on one record")
    p.add_argument("--partial", required=True)
    p.add_argument("--depth", required=True, help="16-bit PGM depth map")
    p.add_argument("--camera", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--global-checkpoint", dest="global_checkpoint", help="unmasked predictor for --ablation")
    p.add_argument("--gt")
    p.add_argument("--icp", action="store_true")
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="metrics between a prediction and ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--tau-mode", dest="tau_mode", choices=("squared", "unsquared"), default="squared")
    p.add_argument("--eps-target", dest="eps_target", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--no-emd", dest="no_emd", action="store_true")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the offset predictor on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam"))
    p.add_argument("--lr-schedule", dest="lr_schedule", choices=("constant", "cosine"))
    p.add_argument("--no-mask", dest="no_mask", action="store_true")
    p.add_argument("--partial", choices=("a", "b"), default="a")
    p.add_argument("--report")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--fixtures", type=int, default=10)
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--R", type=int, default=2)
    p.add_argument("--eps-mask", dest="eps_mask", type=float, default=0.01)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--n-params", dest="n_params", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="timing suites")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--sizes", type=int, nargs="*")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)
    return ap


def _exit_code_for(exc: BaseException) -> int:
    from .align import DegenerateFitError
    from .pipeline import StageError

    if isinstance(exc, StageError):
        return _exit_code_for(exc.cause)
    if isinstance(exc, (DegenerateFitError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (OSError, ValueError, KeyError, IndexError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
