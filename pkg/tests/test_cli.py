"""Command-line contracts: layouts, manifests, exit codes, determinism."""

import json

import numpy as np
import pytest

from decolite import arrayio
from decolite.cli import dispatch
from decolite.evaluation import ResultsTable, mcm


def _manifest(run_root):
    with open(run_root / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def train_args(tmp_path):
    return ["train", "--dataset", "synthetic", "--seeds", "0",
            "--epochs", "6", "--batch-size", "16", "--out", str(tmp_path / "runs")]


class TestTrainCommand:
    def test_writes_checkpoints_log_manifest(self, tmp_path, train_args):
        assert dispatch(train_args) == 0
        seed_dir = tmp_path / "runs" / "synthetic" / "base-1" / "seed0"
        assert (seed_dir / "checkpoint_best.ckpt").is_file()
        assert (seed_dir / "checkpoint_last.ckpt").is_file()
        assert (seed_dir / "train_log.csv").is_file()
        run_root = seed_dir.parent
        assert (run_root / "metrics.json").is_file()
        manifest = _manifest(run_root)
        assert len(manifest["runs"]) == 1
        listed = set(manifest["runs"][0]["artifacts"])
        assert "seed0/checkpoint_best.ckpt" in listed
        assert "seed0/train_log.csv" in listed
        assert "metrics.json" in listed

    def test_log_columns(self, tmp_path, train_args):
        dispatch(train_args)
        log = (tmp_path / "runs" / "synthetic" / "base-1" / "seed0"
               / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,lr,ce_loss,orth_loss,total_loss,train_acc,seconds"
        assert len(log) == 1 + 6

    def test_manifest_is_append_only(self, train_args, tmp_path):
        dispatch(train_args)
        dispatch(train_args)
        manifest = _manifest(tmp_path / "runs" / "synthetic" / "base-1")
        assert len(manifest["runs"]) == 2

    def test_missing_dataset_is_usage_error(self, tmp_path):
        code = dispatch(["train", "--out", str(tmp_path), "--epochs", "2"])
        assert code == 1

    def test_archive_dataset_without_root_is_usage_error(self, tmp_path):
        code = dispatch(["train", "--dataset", "Coffee", "--epochs", "2",
                         "--out", str(tmp_path)])
        assert code == 1

    def test_missing_archive_data_is_data_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("DECO_DATA_ROOT", raising=False)
        code = dispatch(["train", "--dataset", "Coffee", "--epochs", "2",
                         "--data-root", str(tmp_path / "nowhere"),
                         "--out", str(tmp_path)])
        assert code == 2

    def test_divergence_exit_code(self, tmp_path):
        cfg = tmp_path / "diverge.cfg"
        cfg.write_text("lr=1e200\n")
        with np.errstate(all="ignore"):
            code = dispatch(["train", "--dataset", "synthetic", "--seeds", "0",
                             "--epochs", "5", "--out", str(tmp_path / "runs"),
                             "--config", str(cfg)])
        assert code == 3


class TestConfigFile:
    def test_file_provides_defaults_flags_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs=4\nbatch-size=8\nseeds=3\n# comment\n")
        out = tmp_path / "runs"
        assert dispatch(["train", "--dataset", "synthetic", "--config", str(cfg),
                         "--epochs", "2", "--out", str(out)]) == 0
        manifest = _manifest(out / "synthetic" / "base-1")
        rec = manifest["runs"][0]
        assert rec["config"]["epochs"] == 2          # flag wins
        assert rec["config"]["batch_size"] == 8      # file fills the gap
        assert rec["seeds"] == [3]

    def test_malformed_config_file(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not key value\n")
        assert dispatch(["train", "--dataset", "synthetic", "--config", str(cfg)]) == 2

    def test_orth_norm_flag_reaches_config(self, tmp_path):
        out = tmp_path / "runs"
        assert dispatch(["ensemble", "--dataset", "synthetic", "--kind", "deco",
                         "--size", "2", "--epochs", "3", "--batch-size", "16",
                         "--orth-norm", "raw", "--out", str(out)]) == 0
        rec = _manifest(out / "synthetic" / "deco-2")["runs"][0]
        assert rec["config"]["orth_normalization"] == "raw"
        assert rec["wall_seconds"] > 0


class TestEnsembleCommand:
    def test_deco_ensemble_end_to_end(self, tmp_path):
        out = tmp_path / "runs"
        code = dispatch(["ensemble", "--dataset", "synthetic", "--kind", "deco",
                         "--size", "2", "--seeds", "0,1", "--epochs", "6",
                         "--batch-size", "32", "--out", str(out)])
        assert code == 0
        root = out / "synthetic" / "deco-2"
        metrics = json.loads((root / "metrics.json").read_text())
        assert metrics["name"] == "Deco-LITETime-2"
        assert 0.0 <= metrics["ensemble_test_accuracy"] <= 1.0
        assert len(metrics["member_test_accuracies"]) == 2
        for seed in (0, 1):
            assert (root / f"seed{seed}" / "checkpoint_best.ckpt").is_file()

    def test_kind_required(self, tmp_path):
        assert dispatch(["ensemble", "--dataset", "synthetic", "--size", "2",
                         "--out", str(tmp_path)]) == 1

    def test_unknown_flag_is_usage_error(self, tmp_path, capsys):
        assert dispatch(["ensemble", "--nope", "1"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err


class TestEvaluateCommand:
    def test_evaluates_saved_checkpoints(self, tmp_path, train_args):
        dispatch(train_args)
        ckpt = tmp_path / "runs" / "synthetic" / "base-1" / "seed0" / "checkpoint_best.ckpt"
        code = dispatch(["evaluate", "--models", str(ckpt), "--dataset", "synthetic",
                         "--split", "train", "--out", str(tmp_path / "runs")])
        assert code == 0
        payload = json.loads((tmp_path / "runs" / "synthetic" / "evaluate"
                              / "evaluation.json").read_text())
        assert payload["split"] == "train"
        assert 0.0 <= payload["ensemble_accuracy"] <= 1.0

    def test_corrupt_checkpoint_is_data_error(self, tmp_path, train_args):
        dispatch(train_args)
        ckpt = tmp_path / "runs" / "synthetic" / "base-1" / "seed0" / "checkpoint_best.ckpt"
        blob = bytearray(ckpt.read_bytes())
        blob[60] ^= 0xFF
        ckpt.write_bytes(bytes(blob))
        code = dispatch(["evaluate", "--models", str(ckpt), "--dataset", "synthetic",
                         "--out", str(tmp_path / "runs")])
        assert code == 2


class TestMcmCommand:
    def test_report_matches_library_oracle(self, tmp_path):
        table = ResultsTable(["a", "b"], ["d1", "d2", "d3"],
                             np.array([[0.9, 0.8, 0.7], [0.8, 0.8, 0.6]]))
        results = tmp_path / "results.csv"
        table.to_csv(results)
        assert dispatch(["mcm", "--results", str(results),
                         "--out", str(tmp_path / "runs")]) == 0
        payload = json.loads((tmp_path / "runs" / "mcm" / "mcm_report.json").read_text())
        want = mcm(table).to_json_dict()
        assert payload == json.loads(json.dumps(want))
        assert (tmp_path / "runs" / "mcm" / "mcm_matrix.csv").is_file()

    def test_missing_results_flag(self, tmp_path):
        assert dispatch(["mcm", "--out", str(tmp_path)]) == 1


class TestDiversityCommand:
    def test_artifacts_written(self, tmp_path, train_args):
        dispatch(train_args)
        dispatch(["train", "--dataset", "synthetic", "--seeds", "1", "--epochs", "6",
                  "--batch-size", "16", "--out", str(tmp_path / "runs")])
        root = tmp_path / "runs" / "synthetic" / "base-1"
        ck = [str(root / f"seed{s}" / "checkpoint_best.ckpt") for s in (0, 1)]
        code = dispatch(["diversity", "--models", ",".join(ck), "--dataset",
                         "synthetic", "--out", str(tmp_path / "runs")])
        assert code == 0
        out = tmp_path / "runs" / "synthetic" / "diversity"
        for name in ("feature_stats.json", "fid_report.json",
                     "filter_distances.csv", "embedding.csv"):
            assert (out / name).is_file()
        fid_payload = json.loads((out / "fid_report.json").read_text())
        assert len(fid_payload["pairs"]) == 1
        assert fid_payload["pairs"][0]["fid"] >= 0.0
        header = (out / "filter_distances.csv").read_text().splitlines()[0]
        assert header.startswith("filter,model0:0")


class TestSmokeCommand:
    def test_passes_and_prints_table(self, tmp_path, capsys):
        assert dispatch(["smoke", "--out", str(tmp_path / "runs")]) == 0
        lines = capsys.readouterr().out.splitlines()
        passes = [ln for ln in lines if ln.startswith("[PASS]")]
        assert len(passes) == 13
        report = json.loads((tmp_path / "runs" / "smoke" / "smoke_report.json").read_text())
        assert report["passed"] is True

    def test_repeat_invocation_identical_table(self, tmp_path, capsys):
        dispatch(["smoke", "--out", str(tmp_path / "a")])
        first = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("[")]
        dispatch(["smoke", "--out", str(tmp_path / "b")])
        second = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("[")]
        assert first == second

    def test_injected_checkpoint_corruption_is_named_failure(self, tmp_path, capsys,
                                                             monkeypatch):
        import decolite.model as model_mod
        real_save = arrayio.save_bundle

        def corrupting_save(path, kind, meta, arrays):
            real_save(path, kind, meta, arrays)
            blob = bytearray(open(path, "rb").read())
            blob[-1] ^= 0x01
            open(path, "wb").write(bytes(blob))

        # save_model writes through this binding, so every checkpoint the
        # smoke run produces lands on disk corrupted
        monkeypatch.setattr(model_mod, "save_bundle", corrupting_save)
        code = dispatch(["smoke", "--out", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        assert code == 1
        assert "[FAIL] checkpoint-roundtrip" in out


class TestByteDeterminism:
    def test_same_argv_same_bytes_outside_manifest_and_timings(self, tmp_path):
        args = lambda out: ["ensemble", "--dataset", "synthetic", "--kind", "base",  # noqa: E731
                            "--size", "2", "--epochs", "4", "--batch-size", "16",
                            "--out", str(out)]
        assert dispatch(args(tmp_path / "a")) == 0
        assert dispatch(args(tmp_path / "b")) == 0
        root_a, root_b = tmp_path / "a", tmp_path / "b"
        rels = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.is_file())
        assert rels == sorted(p.relative_to(root_b) for p in root_b.rglob("*")
                              if p.is_file())
        for rel in rels:
            fa, fb = root_a / rel, root_b / rel
            if rel.name == "manifest.json":
                continue  # timestamps live here by design
            if rel.name == "train_log.csv":
                # identical apart from the wall-time column
                rows_a = [r.rsplit(",", 1)[0] for r in fa.read_text().splitlines()]
                rows_b = [r.rsplit(",", 1)[0] for r in fb.read_text().splitlines()]
                assert rows_a == rows_b
                continue
            assert fa.read_bytes() == fb.read_bytes(), rel
