"""Command-line surface: synth, train, predict, evaluate, ablate, importance.

Every run resolves a JSON config (flags override file values), writes a
manifest with the resolved config and its hash so the run can be reproduced
exactly, and exits with a distinct code per failure class. Errors are
emitted to stderr as a JSON record.
"""

import argparse
import csv
import hashlib
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .dataset import load_dataset, load_posts
from .ensemble import (
    EnsembleModel,
    MetricsReport,
    PipelineConfig,
    ablation_run,
    distribution_summary,
    evaluation_report,
    mape_result,
    train_cv,
)
from .errors import ConfigError, DataError, SchemaMismatchError
from .synth import SynthConfig, describe, generate, write_dataset

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_SCHEMA = 5

_CONFIG_SECTIONS = ("paths", "synth", "pipeline", "gbdt")
_PATH_KEYS = ("posts", "users", "video_embeddings", "text_embeddings", "out_dir")
_GBDT_KEYS = (
    "n_trees",
    "learning_rate",
    "max_depth",
    "min_samples_leaf",
    "huber_delta",
    "prior_weight",
)


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(payload) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    paths = payload.get("paths", {})
    unknown = set(paths) - set(_PATH_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown path keys {sorted(unknown)}")
    gbdt = payload.get("gbdt", {})
    unknown = set(gbdt) - set(_GBDT_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown gbdt keys {sorted(unknown)}")
    return payload


def _resolve_threads(args):
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("MVP_THREADS")
        if env is not None:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"MVP_THREADS must be an integer, got {env!r}") from None
    if value is None:
        value = 1
    if value < 1:
        raise ConfigError(f"--threads must be >= 1, got {value}")
    return value


def _resolve(args):
    """Merge the config file with CLI flags; flags win."""
    payload = _load_config_file(getattr(args, "config", None))
    paths = dict(payload.get("paths", {}))
    for key in ("posts", "users", "video_embeddings", "text_embeddings"):
        flag = getattr(args, key, None)
        if flag is not None:
            paths[key] = flag
    if getattr(args, "out", None) is not None:
        paths["out_dir"] = args.out

    pipeline_payload = dict(payload.get("pipeline", {}))
    gbdt_payload = dict(payload.get("gbdt", {}))
    pipeline_payload.update(gbdt_payload)
    if getattr(args, "seed", None) is not None:
        pipeline_payload["seed"] = args.seed
    pipeline = PipelineConfig.from_dict(pipeline_payload)

    synth_payload = dict(payload.get("synth", {}))
    if getattr(args, "seed", None) is not None:
        synth_payload["seed"] = args.seed
    synth_config = SynthConfig.from_dict(synth_payload)

    threads = _resolve_threads(args)
    return paths, pipeline, synth_config, threads


def _resolved_config_dict(command, paths, pipeline, synth_config, threads):
    return {
        "command": command,
        "paths": {key: paths.get(key) for key in _PATH_KEYS},
        "pipeline": pipeline.to_dict(),
        "synth": synth_config.to_dict(),
        "threads": threads,
    }


def _write_manifest(out_dir, resolved):
    # The hash covers the run determinants; where the outputs land is not one.
    determinants = dict(resolved)
    determinants["paths"] = {
        k: v for k, v in resolved["paths"].items() if k != "out_dir"
    }
    canonical = json.dumps(determinants, sort_keys=True)
    manifest = {
        "config": resolved,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": resolved["pipeline"]["seed"],
        "versions": {
            "videopop": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _require(paths, key, command):
    value = paths.get(key)
    if value is None:
        raise ConfigError(f"{command} requires a '{key}' path (config or flag)")
    return value


def _out_dir(paths):
    out = paths.get("out_dir")
    if out is None:
        raise ConfigError("an output directory is required (--out or paths.out_dir)")
    os.makedirs(out, exist_ok=True)
    return out


def _load_inputs(paths, command, strict=False):
    posts = _require(paths, "posts", command)
    users = _require(paths, "users", command)
    return load_dataset(
        posts,
        users,
        video_embeddings_path=paths.get("video_embeddings"),
        text_embeddings_path=paths.get("text_embeddings"),
        strict=strict,
    )


def _write_predictions(path, post_ids, predictions):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["post_id", "yhat"])
        for post_id, value in zip(post_ids, predictions):
            writer.writerow([post_id, repr(float(value))])


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    data = generate(synth_config)
    written = write_dataset(data, out)
    summary = describe(data)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
    _write_manifest(out, _resolved_config_dict("synth", paths, pipeline, synth_config, threads))
    print(json.dumps({"written": written, "n_posts": len(data.posts), "n_users": len(data.users)}))
    return EXIT_OK


def cmd_train(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    dataset = _load_inputs(paths, "train")
    model, report = train_cv(dataset, pipeline)
    bundle_path = os.path.join(out, "model.json")
    model.save(bundle_path)
    with open(os.path.join(out, "schema.json"), "w", encoding="utf-8") as fh:
        payload = model.schema.to_dict()
        payload["hash"] = model.schema_hash()
        json.dump(payload, fh, indent=2)
    metrics = evaluation_report(model, report, pipeline)
    metrics.histograms = distribution_summary(
        dataset.labels(), report.oof_predictions, pipeline.histogram_bins
    )
    metrics.write_json(os.path.join(out, "metrics.json"))
    metrics.histograms.write_csv(os.path.join(out, "histograms.csv"))
    _write_predictions(
        os.path.join(out, "oof_predictions.csv"),
        [ex.post.post_id for ex in dataset.examples],
        report.oof_predictions,
    )
    _write_manifest(out, _resolved_config_dict("train", paths, pipeline, synth_config, threads))
    print(
        json.dumps(
            {
                "model": bundle_path,
                "oof_mape": metrics.mape,
                "per_fold_mape": metrics.per_fold_mape,
                "baseline_mape": metrics.baseline_mape,
            }
        )
    )
    return EXIT_OK


def cmd_predict(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    model = EnsembleModel.load(args.model)
    dataset = _load_inputs(paths, "predict")
    schema_groups = set(model.schema.groups_present())
    if "video_embedding" in schema_groups and dataset.video_embeddings is None:
        raise SchemaMismatchError(
            "model was trained with video embeddings but none were supplied"
        )
    if "text_embedding" in schema_groups and dataset.text_embeddings is None:
        raise SchemaMismatchError(
            "model was trained with text embeddings but none were supplied"
        )
    predictions = model.predict(dataset)
    path = os.path.join(out, "predictions.csv")
    _write_predictions(path, [ex.post.post_id for ex in dataset.examples], predictions)
    _write_manifest(out, _resolved_config_dict("predict", paths, pipeline, synth_config, threads))
    print(json.dumps({"predictions": path, "n": len(predictions)}))
    return EXIT_OK


def cmd_evaluate(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    posts = load_posts(_require(paths, "posts", "evaluate"))
    from .dataset import compute_label

    labels_by_id = {
        p.post_id: compute_label(p.raw_views, p.days_since_publish) for p in posts
    }
    predictions = []
    labels = []
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["post_id", "yhat"]:
            raise DataError(f"{args.predictions}: expected columns post_id,yhat")
        for row in reader:
            post_id = row["post_id"]
            if post_id not in labels_by_id:
                raise DataError(f"{args.predictions}: unknown post_id {post_id!r}")
            labels.append(labels_by_id[post_id])
            predictions.append(float(row["yhat"]))
    result = mape_result(labels, predictions, pipeline.near_zero_guard)
    metrics = MetricsReport(
        mape=result.value,
        n=result.n_used,
        excluded_near_zero=result.excluded_near_zero,
        histograms=distribution_summary(labels, predictions, pipeline.histogram_bins),
    )
    metrics.write_json(os.path.join(out, "metrics.json"))
    metrics.histograms.write_csv(os.path.join(out, "histograms.csv"))
    _write_manifest(out, _resolved_config_dict("evaluate", paths, pipeline, synth_config, threads))
    print(json.dumps({"mape": result.value, "n": result.n_used}))
    return EXIT_OK


def cmd_ablate(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    dataset = _load_inputs(paths, "ablate")
    groups = None
    if args.groups:
        groups = tuple(g for g in args.groups.split(",") if g)
    metrics = ablation_run(dataset, pipeline, groups)
    metrics.write_json(os.path.join(out, "metrics.json"))
    metrics.write_ablation_csv(os.path.join(out, "ablation.csv"))
    metrics.histograms.write_csv(os.path.join(out, "histograms.csv"))
    _write_manifest(out, _resolved_config_dict("ablate", paths, pipeline, synth_config, threads))
    print(json.dumps({"full_mape": metrics.mape, "ablation": metrics.ablation}))
    return EXIT_OK


def cmd_importance(args):
    paths, pipeline, synth_config, threads = _resolve(args)
    out = _out_dir(paths)
    model = EnsembleModel.load(args.model)
    shares, has_splits = model.importance()
    block_of = model.schema.block_of()
    group_of = model.schema.group_of()
    blocks = {}
    groups = {}
    for name, share in shares.items():
        blocks[block_of[name]] = blocks.get(block_of[name], 0.0) + share
        groups[group_of[name]] = groups.get(group_of[name], 0.0) + share
    path = os.path.join(out, "importance.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scope", "name", "share"])
        for name, share in shares.items():
            writer.writerow(["feature", name, repr(share)])
        for name, share in sorted(blocks.items()):
            writer.writerow(["block", name, repr(share)])
        for name, share in sorted(groups.items()):
            writer.writerow(["group", name, repr(share)])
    _write_manifest(
        out, _resolved_config_dict("importance", paths, pipeline, synth_config, threads)
    )
    print(json.dumps({"importance": path, "has_splits": has_splits}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--threads",
        type=int,
        help="worker threads (MVP_THREADS env var is the fallback; "
        "training is deterministic regardless)",
    )


def _add_data_flags(parser):
    parser.add_argument("--posts", help="posts.csv path")
    parser.add_argument("--users", help="users.csv path")
    parser.add_argument("--video-embeddings", dest="video_embeddings")
    parser.add_argument("--text-embeddings", dest="text_embeddings")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="videopop",
        description="Multimodal video popularity prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the k-fold ensemble")
    _add_common(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a trained bundle")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--model", required=True, help="model.json bundle path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--predictions", required=True, help="predictions.csv path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation table")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--groups", help="comma-separated subset of ablation groups")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("importance", help="export feature importance")
    _add_common(p)
    p.add_argument("--model", required=True, help="model.json bundle path")
    p.set_defaults(func=cmd_importance)
    return parser


def _error_record(exc):
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING_FILE, "missing_file"
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config_error"
    if isinstance(exc, SchemaMismatchError):
        return EXIT_SCHEMA, "schema_mismatch"
    if isinstance(exc, DataError):
        return EXIT_DATA, "data_error"
    return EXIT_ERROR, "internal_error"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - boundary: map to exit codes
        code, kind = _error_record(exc)
        record = {"error": kind, "message": str(exc), "exit_code": code}
        print(json.dumps(record), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
