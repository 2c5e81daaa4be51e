import json
import subprocess
import sys

import numpy as np
import pytest

from viewguided.cli import main
from viewguided.io import write_xyz


def run(args, capsys):
    code = main([str(a) for a in args])
    return code, capsys.readouterr()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--shapes", "1", "--view-ids", "0", "--points", "1024"]) == 0
    ck = root / "m.ckpt"
    assert main(["train", "--data", str(root / "data"), "--out", str(ck), "--n-c", "512", "--steps", "2", "--lr", "1e-4"]) == 0
    return root, root / "data" / "s0000_v00", ck


def complete_args(rec, ck, out, *extra):
    return [
        "complete", "--partial", rec / "partial_a.ply", "--depth", rec / "depth.pgm", "--camera", rec / "camera.json",
        "--checkpoint", ck, "--n-c", "512", "--out", out, *extra,
    ]


def test_eval_two_point(tmp_path, capsys):
    write_xyz(tmp_path / "p.xyz", [[0, 0, 0], [1, 0, 0]])
    write_xyz(tmp_path / "q.xyz", [[0, 0, 0], [0, 1, 0]])
    code, out = run(["eval", tmp_path / "p.xyz", tmp_path / "q.xyz"], capsys)
    rep = json.loads(out.out)
    assert code == 0
    assert rep["cd"] == pytest.approx(1000.0)
    assert rep["emd"] == pytest.approx(1.0)
    assert rep["combined"] == pytest.approx(1.0001)


def test_eval_identical(tmp_path, capsys, rng):
    write_xyz(tmp_path / "p.xyz", rng.normal(size=(50, 3)))
    rep = json.loads(run(["eval", tmp_path / "p.xyz", tmp_path / "p.xyz"], capsys)[1].out)
    assert rep["cd"] == 0.0 and rep["fscore"] == 1.0


def test_eval_size_mismatch(tmp_path, capsys):
    write_xyz(tmp_path / "p.xyz", [[0, 0, 0]])
    write_xyz(tmp_path / "q.xyz", [[0, 0, 0], [1, 1, 1]])
    code, out = run(["eval", tmp_path / "p.xyz", tmp_path / "q.xyz"], capsys)
    assert code == 3 and "size mismatch" in out.err
    assert run(["eval", tmp_path / "p.xyz", tmp_path / "q.xyz", "--no-emd"], capsys)[0] == 0


def test_missing_file(tmp_path, capsys):
    assert run(["eval", tmp_path / "nope.xyz", tmp_path / "nope.xyz"], capsys)[0] == 3


def test_usage_errors():
    for argv in (["bench", "bogus"], ["frobnicate"], []):
        r = subprocess.run([sys.executable, "-m", "viewguided.cli", *argv], capture_output=True)
        assert r.returncode == 2


def test_missing_checkpoint(dataset, tmp_path, capsys):
    _, rec, _ = dataset
    args = complete_args(rec, "x", tmp_path / "o.ply")
    args.remove("--checkpoint")
    args.remove("x")
    code, out = run(args, capsys)
    assert code == 3 and "no predictor parameters" in out.err


def test_complete_deterministic(dataset, tmp_path, capsys):
    _, rec, ck = dataset
    outs = []
    for i, threads in enumerate(("1", "4")):
        out = tmp_path / f"o{i}.ply"
        code, res = run(["--threads", threads, *complete_args(rec, ck, out, "--gt", rec / "gt.ply")], capsys)
        assert code == 0
        rep = json.loads(res.out)
        assert {"cd_rec", "cd_coarse", "cd_complete"} <= set(rep["cd_x1e3"])
        assert len(rep["config_digest"]) == 16
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_ablation_outputs(dataset, tmp_path, capsys):
    _, rec, ck = dataset
    code, res = run(complete_args(rec, ck, tmp_path / "o.ply", "--gt", rec / "gt.ply", "--ablation"), capsys)
    assert code == 0
    for tag in ("rec", "coarse", "global", "complete"):
        assert (tmp_path / f"o_{tag}.ply").exists()
    assert "cd_global" in json.loads(res.out)["cd_x1e3"]


def test_train_size_check(dataset, tmp_path, capsys):
    root, _, _ = dataset
    code, out = run(["train", "--data", root / "data", "--out", tmp_path / "m.ckpt", "--n-c", "300"], capsys)
    assert code == 3 and "R*N_c" in out.err


def test_align_and_filter(dataset, tmp_path, capsys):
    _, rec, _ = dataset
    code, _ = run(["align", "--recon", rec / "partial_a.ply", "--camera", rec / "camera.json",
                   "--out", tmp_path / "r.ply", "--transform", tmp_path / "t.json"], capsys)
    assert code == 0
    code, _ = run(["filter", "--partial", rec / "partial_a.ply", "--recon", tmp_path / "r.ply", "--n-c", "128",
                   "--out", tmp_path / "c.ply", "--partition", tmp_path / "p.json"], capsys)
    assert code == 0
    part = json.loads((tmp_path / "p.json").read_text())
    assert len(part["fine"]) + len(part["coarse"]) == 128


def test_gradcheck_cli(capsys):
    code, out = run(["gradcheck", "--fixtures", "1", "--points", "32", "--n-params", "16"], capsys)
    assert code == 0 and json.loads(out.out)["ok"]


def test_gradcheck_failure_exit(capsys):
    # a step far too large for central differences must register as a numerical failure
    code, _ = run(["gradcheck", "--fixtures", "1", "--points", "32", "--n-params", "16", "--h", "0.5"], capsys)
    assert code == 4


def test_bench_csv(tmp_path, capsys):
    code, out = run(["bench", "fps", "--sizes", "512", "--csv", tmp_path / "b.csv"], capsys)
    assert code == 0 and "fps" in out.out
    assert (tmp_path / "b.csv").read_text().startswith("suite,case,n,seconds,throughput,unit")


def test_synth_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(["synth", "--out", tmp_path / d, "--shapes", "2", "--view-ids", "1", "--points", "256"], capsys)[0] == 0
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
