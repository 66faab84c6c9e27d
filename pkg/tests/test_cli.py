import hashlib
import json

import pytest

from skipgru import cli, training
from skipgru.errors import ConfigError


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(argv):
    return cli.main(argv)


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0
        assert "skipgru" in capsys.readouterr().out

    def test_invalid_flag_exits_two(self, capsys):
        assert run(["gen-data", "--no-such-flag"]) == 2

    def test_unknown_command_exits_two(self, capsys):
        assert run(["frobnicate"]) == 2


class TestGenData:
    def test_deterministic_files(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        argv = ["gen-data", "--sessions", "30", "--tracks", "50", "--seed", "7"]
        assert run(argv + ["--out-dir", str(a)]) == 0
        assert run(argv + ["--out-dir", str(b)]) == 0
        assert sha256(a / "sessions.csv") == sha256(b / "sessions.csv")
        assert sha256(a / "tracks.csv") == sha256(b / "tracks.csv")

    def test_summary_counts(self, tmp_path, capsys):
        assert run(["gen-data", "--out-dir", str(tmp_path / "d"), "--sessions", "25",
                    "--tracks", "50", "--holdout", "5"]) == 0
        out = capsys.readouterr().out
        assert "sessions=25" in out
        assert "holdout_sessions=5" in out
        assert (tmp_path / "d" / "sessions_holdout.csv").exists()

    def test_track_bound_is_config_error(self, tmp_path, capsys):
        assert run(["gen-data", "--out-dir", str(tmp_path), "--tracks", "10"]) == 3
        assert "50" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data + embed once for the command tests."""
    root = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--out-dir", str(root), "--sessions", "60",
                "--tracks", "50", "--acoustic-dim", "3", "--seed", "5",
                "--holdout", "8"]) == 0
    assert run(["embed", "--sessions", str(root / "sessions.csv"),
                "--out", str(root / "emb.txt"), "--dims", "8",
                "--epochs", "4", "--seed", "1"]) == 0
    return root


class TestEmbed:
    def test_deterministic(self, workspace, tmp_path, capsys):
        out = tmp_path / "emb2.txt"
        assert run(["embed", "--sessions", str(workspace / "sessions.csv"),
                    "--out", str(out), "--dims", "8", "--epochs", "4",
                    "--seed", "1"]) == 0
        assert sha256(out) == sha256(workspace / "emb.txt")

    def test_loss_log_emitted(self, workspace, tmp_path, capsys):
        assert run(["embed", "--sessions", str(workspace / "sessions.csv"),
                    "--out", str(tmp_path / "e.txt"), "--dims", "4",
                    "--epochs", "3"]) == 0
        out = capsys.readouterr().out
        assert out.count("loss=") == 3
        assert "loss_decreased=true" in out

    def test_missing_sessions_path(self, tmp_path, capsys):
        assert run(["embed", "--sessions", str(tmp_path / "nope.csv"),
                    "--out", str(tmp_path / "e.txt")]) == 3


class TestTrain:
    def test_writes_checkpoint(self, workspace, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        assert run(["train", "--sessions", str(workspace / "sessions.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--embeddings", str(workspace / "emb.txt"),
                    "--out", str(ckpt), "--epochs", "1", "--batch-size", "16",
                    "--hidden-size", "4", "--seed", "3"]) == 0
        assert ckpt.exists()
        loaded = training.load_checkpoint(ckpt)
        assert loaded.metadata["epochs"] == 1

    def test_zero_epochs_writes_init_checkpoint(self, workspace, tmp_path):
        ckpt = tmp_path / "init.ckpt"
        assert run(["train", "--sessions", str(workspace / "sessions.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--embeddings", str(workspace / "emb.txt"),
                    "--out", str(ckpt), "--epochs", "0",
                    "--hidden-size", "4"]) == 0
        loaded = training.load_checkpoint(ckpt)
        assert loaded.metadata["best_val_aa"] is None

    def test_config_file_with_flag_override(self, workspace, tmp_path):
        config = {
            "paths": {
                "sessions": str(workspace / "sessions.csv"),
                "tracks": str(workspace / "tracks.csv"),
                "embeddings": str(workspace / "emb.txt"),
            },
            "model": {"hidden_size": 4},
            "training": {"epochs": 0, "batch_size": 16, "seed": 2},
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(config))
        ckpt = tmp_path / "cfg.ckpt"
        assert run(["train", "--config", str(cfg_path), "--out", str(ckpt),
                    "--epochs", "1"]) == 0
        assert training.load_checkpoint(ckpt).metadata["epochs"] == 1

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"training": {"learning_rate": 0.1}}))
        assert run(["train", "--config", str(cfg_path), "--out",
                    str(tmp_path / "x.ckpt")]) == 3
        assert "learning_rate" in capsys.readouterr().err

    def test_unknown_config_section_rejected(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"optimizer": {}}))
        with pytest.raises(ConfigError):
            cli.load_config(cfg_path)

    def test_missing_required_path(self, tmp_path, capsys):
        assert run(["train", "--out", str(tmp_path / "x.ckpt")]) == 3
        assert "sessions" in capsys.readouterr().err

    def test_numeric_abort_exits_four(self, workspace, tmp_path, capsys, monkeypatch):
        from skipgru import cli as cli_mod
        from skipgru.errors import TrainingError

        def explode(*args, **kwargs):
            raise TrainingError("aborting: non-finite value in epoch 1, batch 0")

        monkeypatch.setattr(cli_mod.training, "train", explode)
        assert run(["train", "--sessions", str(workspace / "sessions.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--embeddings", str(workspace / "emb.txt"),
                    "--out", str(tmp_path / "x.ckpt"), "--epochs", "1"]) == 4
        assert "non-finite" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(workspace, tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    paths = []
    for k, extra in enumerate((["--activation", "relu"], ["--activation", "elu"])):
        ckpt = root / f"m{k}.ckpt"
        assert run(["train", "--sessions", str(workspace / "sessions.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--embeddings", str(workspace / "emb.txt"),
                    "--out", str(ckpt), "--epochs", "1", "--batch-size", "16",
                    "--hidden-size", "4", "--seed", str(k)] + extra) == 0
        paths.append(ckpt)
    return paths


class TestPredictAndEvaluate:
    def test_single_model_predict(self, workspace, trained, tmp_path, capsys):
        sub = tmp_path / "sub.txt"
        assert run(["predict", "--model", str(trained[0]),
                    "--sessions", str(workspace / "sessions_holdout.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--out", str(sub)]) == 0
        lines = sub.read_text().splitlines()
        assert len(lines) == 8
        assert all(set(line) <= {"0", "1"} for line in lines)

    def test_ensemble_predict(self, workspace, trained, tmp_path, capsys):
        sub = tmp_path / "sub.txt"
        assert run(["predict", "--model", str(trained[0]), "--model", str(trained[1]),
                    "--sessions", str(workspace / "sessions_holdout.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--out", str(sub)]) == 0
        assert "models=2" in capsys.readouterr().out

    def test_malformed_checkpoint(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_text("{not a checkpoint")
        assert run(["predict", "--model", str(bad),
                    "--sessions", str(workspace / "sessions_holdout.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--out", str(tmp_path / "s.txt")]) == 3

    def test_evaluate_identity(self, workspace, tmp_path, capsys):
        truth = workspace / "sessions_holdout.csv"
        from skipgru import data, metrics
        sessions = data.load_sessions(truth, None, mode="train")
        sub = tmp_path / "perfect.txt"
        metrics.write_submission(sub, metrics.second_half_truth(sessions))
        assert run(["evaluate", "--truth", str(truth), "--submission", str(sub)]) == 0
        out = capsys.readouterr().out
        assert "mean_aa=1.000000" in out
        assert "first_position_accuracy=1.000000" in out

    def test_evaluate_mismatch_nonzero(self, workspace, tmp_path, capsys):
        sub = tmp_path / "short.txt"
        sub.write_text("0101\n")
        assert run(["evaluate", "--truth", str(workspace / "sessions_holdout.csv"),
                    "--submission", str(sub)]) == 3

    def test_evaluate_breakdown(self, workspace, trained, tmp_path, capsys):
        sub = tmp_path / "sub.txt"
        assert run(["predict", "--model", str(trained[0]),
                    "--sessions", str(workspace / "sessions_holdout.csv"),
                    "--tracks", str(workspace / "tracks.csv"),
                    "--out", str(sub)]) == 0
        breakdown = tmp_path / "positions.csv"
        per_session = tmp_path / "per_session.csv"
        assert run(["evaluate", "--truth", str(workspace / "sessions_holdout.csv"),
                    "--submission", str(sub), "--breakdown", str(breakdown),
                    "--per-session", str(per_session)]) == 0
        assert breakdown.read_text().startswith("position,accuracy,count")
        assert per_session.read_text().startswith("session_id,aa")

    def test_evaluate_submission_format_truth(self, tmp_path, capsys):
        truth = tmp_path / "truth.txt"
        truth.write_text("01010\n11100\n")
        sub = tmp_path / "sub.txt"
        sub.write_text("01010\n11100\n")
        assert run(["evaluate", "--truth", str(truth), "--submission", str(sub)]) == 0
        assert "mean_aa=1.000000" in capsys.readouterr().out


class TestPipelineComposition:
    def test_end_to_end_green(self, tmp_path, capsys):
        root = tmp_path / "flow"
        assert run(["gen-data", "--out-dir", str(root), "--sessions", "70",
                    "--tracks", "50", "--acoustic-dim", "3", "--seed", "11",
                    "--holdout", "10"]) == 0
        assert run(["embed", "--sessions", str(root / "sessions.csv"),
                    "--out", str(root / "emb.txt"), "--dims", "8",
                    "--epochs", "3", "--seed", "0"]) == 0
        assert run(["train", "--sessions", str(root / "sessions.csv"),
                    "--tracks", str(root / "tracks.csv"),
                    "--embeddings", str(root / "emb.txt"),
                    "--out", str(root / "m.ckpt"), "--epochs", "1",
                    "--batch-size", "16", "--hidden-size", "4"]) == 0
        assert run(["predict", "--model", str(root / "m.ckpt"),
                    "--sessions", str(root / "sessions_holdout.csv"),
                    "--tracks", str(root / "tracks.csv"),
                    "--out", str(root / "sub.txt")]) == 0
        assert run(["evaluate", "--truth", str(root / "sessions_holdout.csv"),
                    "--submission", str(root / "sub.txt")]) == 0
        assert "mean_aa=" in capsys.readouterr().out
