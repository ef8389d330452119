import io
import json
import sys

import numpy as np
import pytest

from neuclick import pipeline
from neuclick.cli import error_record, main
from neuclick.config import ExperimentConfig
from neuclick.errors import DataError, NumericError
from neuclick.ingest import load_canonical

SMALL = ["--set", "data.n_sessions=120", "--set", "data.n_users=10", "--set", "data.n_catalog=30",
         "--set", "data.slate_len=5", "--set", "model.max_slate_len=5", "--set", "model.d_hidden=8",
         "--set", "embedding.dim=8", "--set", "train.epochs=2", "--set", "bootstrap_samples=50"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    lines = [l for l in err.splitlines() if l.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def outdir(tmp_path):
    return str(tmp_path / "runs")


def train_run(capsys, outdir, *extra):
    code, out, _ = run(capsys, "train", "--output-dir", outdir, *SMALL, *extra)
    assert code == 0
    return json.loads(out)["run_dir"]


class TestExitCodes:
    def test_unknown_config_field(self, capsys, outdir):
        code, _, err = run(capsys, "train", "--output-dir", outdir, "--set", "model.width=3")
        assert code == 2
        rec = error_line(err)
        assert rec["exit_code"] == 2 and rec["error"] == "ConfigurationError"

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--config", str(tmp_path / "nope.yaml"))
        assert code == 2
        error_line(err)

    def test_bad_subcommand_is_config_error(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2

    def test_malformed_canonical_data(self, capsys, tmp_path, outdir):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"user_id": "u", "slates": [{"items": [1, 2], "clicks": [1]}]}\n')
        code, _, err = run(capsys, "train", "--output-dir", outdir, "--set", "data.loader=canonical",
                           "--set", f"data.path={bad}", "--set", "embedding.kind=learnable")
        assert code == 3
        assert error_line(err)["error"] == "ParseError"

    def test_rancm_rejected_before_training(self, capsys, tmp_path, outdir):
        from conftest import make_session
        from neuclick.ingest import write_canonical
        path = tmp_path / "noorder.jsonl"
        write_canonical([make_session([3, 3], sid=str(i), with_order=False) for i in range(20)], path)
        code, _, err = run(capsys, "train", "--output-dir", outdir, "--set", "data.loader=canonical",
                           "--set", f"data.path={path}", "--set", "embedding.kind=learnable",
                           "--set", "model.kind=RANCM")
        assert code == 2
        assert error_line(err)["error"] == "UnsupportedDatasetError"
        assert not (tmp_path / "runs").exists()

    def test_evaluate_untrained_run(self, capsys, tmp_path):
        code, _, err = run(capsys, "evaluate", "--run", str(tmp_path))
        assert code == 3
        error_line(err)

    @pytest.mark.parametrize("exc, code", [(NumericError("nan loss"), 4), (FloatingPointError("x"), 4),
                                           (DataError("bad\nrow"), 3), (RuntimeError("boom"), 1)])
    def test_error_record_is_one_line(self, exc, code):
        got, line = error_record(exc)
        assert got == code
        assert "\n" not in line
        assert json.loads(line)["exit_code"] == code


class TestRuns:
    def test_train_writes_provenance(self, capsys, outdir):
        run_dir = train_run(capsys, outdir)
        cfg = ExperimentConfig.load(f"{run_dir}/config.yaml")
        h = cfg.config_hash()
        assert run_dir.endswith(f"NCM-learnable-{h}")
        with open(f"{run_dir}/config.yaml") as fh:
            assert h in fh.readline()
        for line in open(f"{run_dir}/epochs.jsonl"):
            rec = json.loads(line)
            assert rec["config_hash"] == h and rec["seed"] == cfg.seed
        manifest = json.load(open(f"{run_dir}/manifest.json"))
        assert manifest["config_hash"] == h
        from neuclick.models import read_checkpoint
        assert read_checkpoint(f"{run_dir}/model.ckpt")[0]["metadata"]["config_hash"] == h

    def test_refuses_overwrite_without_force(self, capsys, outdir):
        train_run(capsys, outdir)
        code, _, err = run(capsys, "train", "--output-dir", outdir, *SMALL)
        assert code == 2
        assert "--force" in error_line(err)["message"]
        assert run(capsys, "train", "--output-dir", outdir, *SMALL, "--force")[0] == 0

    def test_same_seed_same_bytes(self, capsys, outdir):
        names = ("model.ckpt", "epochs.jsonl", "report.json", "manifest.json")
        first = train_run(capsys, outdir)
        run(capsys, "evaluate", "--run", first)
        before = {n: open(f"{first}/{n}", "rb").read() for n in names}
        again = train_run(capsys, outdir, "--force")
        assert again == first
        run(capsys, "evaluate", "--run", again)
        assert {n: open(f"{again}/{n}", "rb").read() for n in names} == before

    def test_seed_changes_hash(self, capsys, outdir):
        assert train_run(capsys, outdir) != train_run(capsys, outdir, "--seed", "3")

    def test_evaluate_with_baseline_and_report(self, capsys, outdir, tmp_path):
        ncm = train_run(capsys, outdir)
        mf = train_run(capsys, outdir, "--set", "model.kind=MF")
        lr = train_run(capsys, outdir, "--set", "model.kind=LogReg")
        code, out, _ = run(capsys, "evaluate", "--run", ncm, "--baseline", mf)
        assert code == 0
        report = json.loads(out)
        assert {b["metric"] for b in report["bootstrap"]} == {"auc", "f1", "accuracy"}
        assert report["extras"]["bayes_auc"] > 0.5
        for d in (mf, lr):
            assert run(capsys, "evaluate", "--run", d)[0] == 0
        csv_path = tmp_path / "table.csv"
        code, out, _ = run(capsys, "report", ncm, mf, lr, "--csv", str(csv_path))
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split()[:2] == ["Model", "Emb."]
        assert [l.split()[0] for l in lines[2:]] == ["MF", "Logistic", "Neural"]
        assert csv_path.read_text().count("\n") == 4

    def test_report_missing(self, capsys, tmp_path):
        code, _, err = run(capsys, "report", str(tmp_path))
        assert code == 3

    def test_ingest_roundtrip(self, capsys, tmp_path):
        out_dir = tmp_path / "data"
        code, _, _ = run(capsys, "ingest", "--out", str(out_dir), *SMALL)
        assert code == 0
        manifest = json.load(open(out_dir / "manifest.json"))
        assert sum(manifest["sessions"].values()) == 120
        assert len(load_canonical(out_dir / "train.jsonl")) == manifest["sessions"]["train"]
        assert (out_dir / "item_embeddings.csv").exists()


class TestSimulate:
    def test_serves_requests(self, capsys, outdir, monkeypatch):
        run_dir = train_run(capsys, outdir)
        requests = [{"op": "reset", "user_id": "u1", "seed": 4},
                    {"op": "respond", "items": [0, 1, 2, 3]},
                    {"op": "respond", "items": [999]},
                    {"op": "stats"}]
        monkeypatch.setattr(sys, "stdin", io.StringIO("\n".join(map(json.dumps, requests)) + "\n"))
        code, out, _ = run(capsys, "simulate", "--run", run_dir)
        assert code == 0
        replies = [json.loads(l) for l in out.splitlines()]
        assert len(replies) == 4
        assert len(replies[1]["clicks"]) == 4
        assert set(np.unique(replies[1]["clicks"])) <= {0, 1}
        assert "error" in replies[2]
        assert replies[3]["slates"] == 1
