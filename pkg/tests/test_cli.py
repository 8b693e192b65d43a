import json
import os

import numpy as np
import pytest

from videopop.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_SCHEMA,
    main,
)

SYNTH_CONFIG = {
    "synth": {
        "n_posts": 160,
        "n_users": 60,
        "n_tags": 200,
        "embedding_dim": 8,
        "frame_count_min": 2,
        "frame_count_max": 4,
        "seed": 17,
    },
    "pipeline": {
        "k_folds": 3,
        "seed": 17,
        "pca_components": 3,
        "n_trees": 8,
        "max_depth": 2,
        "min_samples_leaf": 2,
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> train once; several tests reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(SYNTH_CONFIG))
    data_dir = root / "data"
    assert main(["synth", "--config", str(config_path), "--out", str(data_dir)]) == EXIT_OK

    train_dir = root / "train"
    code = main(
        [
            "train",
            "--config", str(config_path),
            "--posts", str(data_dir / "posts.csv"),
            "--users", str(data_dir / "users.csv"),
            "--video-embeddings", str(data_dir / "video_embeddings.emb"),
            "--out", str(train_dir),
        ]
    )
    assert code == EXIT_OK
    return {"root": root, "config": config_path, "data": data_dir, "train": train_dir}


class TestSynthCommand:
    def test_outputs_exist(self, workspace):
        data = workspace["data"]
        for name in ("posts.csv", "users.csv", "video_embeddings.emb", "truth.csv",
                     "summary.json", "manifest.json"):
            assert (data / name).exists(), name

    def test_manifest_carries_config_hash(self, workspace):
        manifest = json.loads((workspace["data"] / "manifest.json").read_text())
        assert len(manifest["config_hash"]) == 64
        assert manifest["seed"] == 17
        assert "videopop" in manifest["versions"]


class TestTrainCommand:
    def test_bundle_and_metrics_written(self, workspace):
        train = workspace["train"]
        assert (train / "model.json").exists()
        metrics = json.loads((train / "metrics.json").read_text())
        assert metrics["mape"] > 0
        assert len(metrics["per_fold_mape"]) == 3
        assert (train / "histograms.csv").exists()
        assert (train / "oof_predictions.csv").exists()

    def test_rerun_reproduces_predictions_bitwise(self, workspace, tmp_path):
        again = tmp_path / "train2"
        code = main(
            [
                "train",
                "--config", str(workspace["config"]),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--users", str(workspace["data"] / "users.csv"),
                "--video-embeddings", str(workspace["data"] / "video_embeddings.emb"),
                "--out", str(again),
            ]
        )
        assert code == EXIT_OK
        assert (again / "oof_predictions.csv").read_bytes() == (
            workspace["train"] / "oof_predictions.csv"
        ).read_bytes()


class TestPredictCommand:
    def test_predictions_written(self, workspace, tmp_path):
        out = tmp_path / "pred"
        code = main(
            [
                "predict",
                "--model", str(workspace["train"] / "model.json"),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--users", str(workspace["data"] / "users.csv"),
                "--video-embeddings", str(workspace["data"] / "video_embeddings.emb"),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "post_id,yhat"
        assert len(lines) == SYNTH_CONFIG["synth"]["n_posts"] + 1

    def test_schema_mismatch_without_embeddings(self, workspace, tmp_path, capsys):
        code = main(
            [
                "predict",
                "--model", str(workspace["train"] / "model.json"),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--users", str(workspace["data"] / "users.csv"),
                "--out", str(tmp_path / "pred2"),
            ]
        )
        assert code == EXIT_SCHEMA
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "schema_mismatch"


class TestEvaluateCommand:
    def test_round_trip(self, workspace, tmp_path):
        pred_dir = tmp_path / "pred"
        main(
            [
                "predict",
                "--model", str(workspace["train"] / "model.json"),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--users", str(workspace["data"] / "users.csv"),
                "--video-embeddings", str(workspace["data"] / "video_embeddings.emb"),
                "--out", str(pred_dir),
            ]
        )
        out = tmp_path / "eval"
        code = main(
            [
                "evaluate",
                "--predictions", str(pred_dir / "predictions.csv"),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["mape"] >= 0


class TestImportanceCommand:
    def test_importance_csv(self, workspace, tmp_path):
        out = tmp_path / "imp"
        code = main(
            [
                "importance",
                "--model", str(workspace["train"] / "model.json"),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        lines = (out / "importance.csv").read_text().strip().splitlines()
        assert lines[0] == "scope,name,share"
        scopes = {line.split(",")[0] for line in lines[1:]}
        assert {"feature", "block", "group"} <= scopes
        feature_shares = [
            float(line.split(",")[2])
            for line in lines[1:]
            if line.split(",")[0] == "feature"
        ]
        assert sum(feature_shares) == pytest.approx(1.0, abs=1e-9)


class TestAblateCommand:
    def test_small_ablation(self, workspace, tmp_path):
        out = tmp_path / "abl"
        code = main(
            [
                "ablate",
                "--config", str(workspace["config"]),
                "--posts", str(workspace["data"] / "posts.csv"),
                "--users", str(workspace["data"] / "users.csv"),
                "--video-embeddings", str(workspace["data"] / "video_embeddings.emb"),
                "--groups", "user,kfold_ensemble",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        table = (out / "ablation.csv").read_text().strip().splitlines()
        assert table[0] == "configuration,mape"
        names = {line.split(",")[0] for line in table[1:]}
        assert {"full", "without_user", "without_kfold_ensemble"} <= names


class TestErrorPaths:
    def test_missing_file_exit_code(self, tmp_path, capsys):
        code = main(
            [
                "train",
                "--posts", str(tmp_path / "nope.csv"),
                "--users", str(tmp_path / "nope2.csv"),
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_MISSING_FILE
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "missing_file"

    def test_unknown_config_key_exit_code(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"pipeline": {"bogus_key": 1}}))
        code = main(["synth", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "config_error"
        assert "bogus_key" in record["message"]

    def test_malformed_posts_exit_code(self, tmp_path, capsys):
        posts = tmp_path / "posts.csv"
        posts.write_text(
            "post_id,user_id,raw_views,days_since_publish,post_timestamp,category,"
            "language,location,video_format,music_id,duration_s,width_px,height_px,"
            "caption,suggested_keywords,tags\n"
            "p1,u1,-5,1,0,,,,,,,,,,,\n"
        )
        users = tmp_path / "users.csv"
        users.write_text(
            "user_id,follower_count,following_count,video_count,like_count,"
            "digg_count,heart_count,friend_count,historical_mean_popularity\nu1,,,,,,,,\n"
        )
        code = main(
            [
                "train",
                "--posts", str(posts),
                "--users", str(users),
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_DATA

    def test_threads_env_fallback(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("MVP_THREADS", "2")
        out = tmp_path / "imp-threads"
        code = main(
            [
                "importance",
                "--model", str(workspace["train"] / "model.json"),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["threads"] == 2

    def test_invalid_threads_env_rejected(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("MVP_THREADS", "banana")
        code = main(
            [
                "importance",
                "--model", str(workspace["train"] / "model.json"),
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == EXIT_CONFIG
