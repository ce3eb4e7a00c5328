import json
import subprocess
import sys

import numpy as np
import pytest

from flowquery.cli import main
from flowquery.descriptor import read_dm


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """gen-field -> trace -> sample, shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-field", "--kind", "helix", "--dims", "16,16,16",
                 "--bounds=-2,-2,-2,2,2,2", "--pitch", "0.5",
                 "--out", str(root / "fld")]) == 0
    assert main(["trace", "--field", str(root / "fld"), "--n", "40",
                 "--step", "0.05", "--max-steps", "200", "--seed", "1",
                 "--out", str(root / "lines.txt")]) == 0
    assert main(["sample", "--lines", str(root / "lines.txt"),
                 "--max-len", "2.0", "--out", str(root / "seg")]) == 0
    return root


def test_pipeline_artifacts_exist(pipeline_dir):
    mats = read_dm(pipeline_dir / "seg.dm")
    assert mats.shape[1:] == (32, 32)
    assert len(mats) > 20
    recs = [json.loads(l) for l in
            (pipeline_dir / "seg.segs").read_text().splitlines()]
    assert len(recs) == len(mats)
    assert all(len(r["points"]) >= 2 for r in recs)


def test_encoder_roundtrip_via_cli(pipeline_dir):
    root = pipeline_dir
    assert main(["train-encoder", "--data", str(root / "seg.dm"),
                 "--epochs", "3", "--batch", "32", "--latent-dim", "16",
                 "--hidden", "64,32", "--seed", "0",
                 "--out", str(root / "enc.ckpt")]) == 0
    assert main(["encode", "--data", str(root / "seg.dm"),
                 "--ckpt", str(root / "enc.ckpt"),
                 "--out", str(root / "lat.npy")]) == 0
    lat = np.load(root / "lat.npy")
    assert lat.shape[1] == 16


def test_eval_commands(pipeline_dir, tmp_path):
    rng = np.random.default_rng(0)
    feats = np.concatenate([rng.standard_normal((40, 8)) + 8 * np.eye(8)[c]
                            for c in range(3)])
    labels = np.repeat([0, 1, 2], 40)
    np.save(tmp_path / "f.npy", feats)
    np.save(tmp_path / "y.npy", labels)
    assert main(["eval-probe", "--features", str(tmp_path / "f.npy"),
                 "--labels", str(tmp_path / "y.npy"),
                 "--out", str(tmp_path / "probe.jsonl")]) == 0
    rec = json.loads((tmp_path / "probe.jsonl").read_text().splitlines()[0])
    assert rec["accuracy"] == 1.0

    assert main(["eval-uniformity", "--features", str(tmp_path / "f.npy"),
                 "--out", str(tmp_path / "unif.jsonl")]) == 0
    assert main(["bench-scaling", "--counts", "300,600",
                 "--out", str(tmp_path / "bench.jsonl")]) == 0
    rows = [json.loads(l) for l in (tmp_path / "bench.jsonl").read_text().splitlines()]
    assert rows[0]["record"] == "env"


def test_matcher_index_query_via_cli(pipeline_dir, capsys):
    root = pipeline_dir
    mats = read_dm(root / "seg.dm")
    corpus_path = root / "corpus.jsonl"
    with open(corpus_path, "w") as fh:
        half = len(mats) // 2
        fh.write(json.dumps({"caption": "tight swirling helix",
                             "dm": str(root / "seg.dm"),
                             "indices": list(range(0, min(8, half)))}) + "\n")
        fh.write(json.dumps({"caption": "straight laminar channel",
                             "dm": str(root / "seg.dm"),
                             "indices": list(range(half, half + 8))}) + "\n")
    assert main(["train-matcher", "--corpus", str(corpus_path),
                 "--ckpt", str(root / "enc.ckpt"), "--epochs", "3",
                 "--batch", "2", "--out", str(root / "match.ckpt")]) == 0
    assert main(["build-index", "--segs", str(root / "seg.segs"),
                 "--ckpt", str(root / "enc.ckpt"),
                 "--matcher", str(root / "match.ckpt"),
                 "--out", str(root / "toy.idx")]) == 0
    capsys.readouterr()
    assert main(["query", "--index", str(root / "toy.idx"),
                 "--text", "vortex", "--k", "5"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 5
    first = out[0].split()
    assert first[0] == "1" and len(first) == 3


def test_gen_data_dry_run(pipeline_dir, tmp_path, capsys):
    assert main(["gen-data", "--segs", str(pipeline_dir / "seg.segs"),
                 "--dry-run", "--limit", "4", "--n-views", "2",
                 "--sample-review", "0.5", "--seed", "3",
                 "--out", str(tmp_path / "inst.jsonl")]) == 0
    lines = (tmp_path / "inst.jsonl").read_text().splitlines()
    assert len(lines) == 4
    out = capsys.readouterr().out
    assert "review [" in out


def test_runtime_error_exit_code():
    assert main(["query", "--index", "/nonexistent.idx", "--text", "x"]) == 1


def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "flowquery.cli", "frobnicate"],
                          capture_output=True, text=True, cwd="/root/pkg")
    assert proc.returncode == 2
    assert proc.stderr


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["gen-field", "--kind", "unknown-kind", "--out", "/tmp/x"])
    assert exc.value.code == 2
