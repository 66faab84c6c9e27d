"""Command-line entry point exposing the full pipeline as subcommands.

    skipgru gen-data  --out-dir data --sessions 2000 --tracks 500 --seed 7
    skipgru embed     --sessions data/sessions.csv --out data/embeddings.txt
    skipgru train     --sessions data/sessions.csv --tracks data/tracks.csv \
                      --embeddings data/embeddings.txt --out model.ckpt
    skipgru predict   --model model.ckpt --sessions held_out.csv \
                      --tracks data/tracks.csv --out submission.txt
    skipgru evaluate  --truth held_out.csv --submission submission.txt

Every subcommand accepts ``--config FILE`` pointing at a JSON file with the
sections ``paths``, ``model``, ``training`` and ``glove``; unknown keys are
rejected. Explicit flags win over config-file values, which win over the
built-in defaults. Exit codes: 0 success, 2 usage, 3 data/format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data, glove, metrics, training
from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    DataError,
    EnsembleError,
    NumericError,
    ShapeError,
    TrainingError,
)
from .features import FeaturePipeline
from .model import VariantConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class PathsConfig:
    sessions: str | None = None
    tracks: str | None = None
    embeddings: str | None = None
    checkpoint_dir: str | None = None


@dataclass
class ModelSection:
    activation: str = "relu"
    hidden_size: int = 96
    use_batchnorm: bool = False


@dataclass
class TrainSection:
    batch_size: int = 64
    epochs: int = 10
    lr: float = 0.0005
    seed: int = 0
    clip_norm: float | None = None
    val_fraction: float = 0.1


@dataclass
class GloveSection:
    dims: int = 150
    window: int = 5
    epochs: int = 25
    x_max: float = 100.0
    alpha: float = 0.75
    lr: float = 0.05
    seed: int = 0


@dataclass
class RunConfig:
    paths: PathsConfig
    model: ModelSection
    training: TrainSection
    glove: GloveSection

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(PathsConfig(), ModelSection(), TrainSection(), GloveSection())


def _build_section(cls, payload: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in config section '{section}': {sorted(unknown)}")
    return cls(**payload)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid config JSON ({err})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config root must be an object")
    sections = {"paths": PathsConfig, "model": ModelSection,
                "training": TrainSection, "glove": GloveSection}
    unknown = set(payload) - set(sections)
    if unknown:
        raise ConfigError(f"{path}: unknown config section(s) {sorted(unknown)}")
    built = {}
    for name, cls in sections.items():
        section_payload = payload.get(name, {})
        if not isinstance(section_payload, dict):
            raise ConfigError(f"{path}: config section '{name}' must be an object")
        built[name] = _build_section(cls, section_payload, name)
    return RunConfig(**built)


def _config_for(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig.defaults()


def pick(flag_value, config_value):
    return config_value if flag_value is None else flag_value


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing {what}: pass the flag or set it in the config file")
    return value


def _file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = args.sessions + args.holdout
    tracks, sessions = data.gen_synthetic(
        n_sessions=total,
        n_tracks=args.tracks,
        acoustic_dim=args.acoustic_dim,
        seed=args.seed,
        label_noise=args.noise,
    )
    data.write_tracks(out_dir / "tracks.csv", tracks)
    data.write_sessions(out_dir / "sessions.csv", sessions[: args.sessions], mode="train")
    print(f"tracks={len(tracks)}")
    print(f"sessions={args.sessions}")
    if args.holdout:
        data.write_sessions(out_dir / "sessions_holdout.csv",
                            sessions[args.sessions:], mode="train")
        print(f"holdout_sessions={args.holdout}")
    events = sum(len(s.events) for s in sessions[: args.sessions])
    print(f"events={events}")
    return EXIT_OK


def cmd_embed(args) -> int:
    config = _config_for(args)
    sessions_path = _require(pick(args.sessions, config.paths.sessions), "sessions path")
    out_path = _require(pick(args.out, config.paths.embeddings), "embedding output path")
    g = config.glove
    sessions = data.load_sessions(sessions_path, None, mode="train")
    table = glove.build_cooccurrence(sessions, window=pick(args.window, g.window))
    emb = glove.train_glove(
        table,
        dims=pick(args.dims, g.dims),
        epochs=pick(args.epochs, g.epochs),
        lr=pick(args.lr, g.lr),
        seed=pick(args.seed, g.seed),
        x_max=pick(args.x_max, g.x_max),
        alpha=pick(args.alpha, g.alpha),
    )
    glove.export_embeddings(emb, out_path)
    for k, epoch_loss in enumerate(emb.epoch_losses, start=1):
        print(f"epoch {k}: loss={epoch_loss:.6f}")
    decreased = emb.epoch_losses[-1] < emb.epoch_losses[0]
    print(f"loss_decreased={'true' if decreased else 'false'}")
    print(f"tracks={table.n_tracks}")
    print(f"pairs={len(table.pairs)}")
    print(f"embeddings={out_path}")
    return EXIT_OK


def _split_validation(sessions, fraction, seed):
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {fraction}")
    n_valid = max(1, int(round(len(sessions) * fraction)))
    if n_valid >= len(sessions):
        raise ConfigError("validation split leaves no training sessions")
    order = np.random.default_rng([seed, 2]).permutation(len(sessions))
    valid_idx = set(order[:n_valid].tolist())
    train_split = [s for i, s in enumerate(sessions) if i not in valid_idx]
    valid_split = [s for i, s in enumerate(sessions) if i in valid_idx]
    return train_split, valid_split


def cmd_train(args) -> int:
    config = _config_for(args)
    sessions_path = _require(pick(args.sessions, config.paths.sessions), "sessions path")
    tracks_path = _require(pick(args.tracks, config.paths.tracks), "tracks path")
    embeddings_path = _require(pick(args.embeddings, config.paths.embeddings),
                               "embeddings path")
    out = args.out
    if out is None and config.paths.checkpoint_dir is not None:
        out = str(Path(config.paths.checkpoint_dir) / "model.ckpt")
    out = _require(out, "checkpoint output path")

    t = config.training
    m = config.model
    variant = VariantConfig(
        activation=pick(args.activation, m.activation),
        hidden_size=pick(args.hidden_size, m.hidden_size),
        use_batchnorm=pick(args.batchnorm, m.use_batchnorm),
    )
    train_config = training.TrainConfig(
        batch_size=pick(args.batch_size, t.batch_size),
        epochs=pick(args.epochs, t.epochs),
        lr=pick(args.lr, t.lr),
        seed=pick(args.seed, t.seed),
        clip_norm=pick(args.clip_norm, t.clip_norm),
    )
    tracks = data.load_tracks(tracks_path)
    sessions = data.load_sessions(sessions_path, tracks, mode="train")
    embeddings = glove.load_embeddings(embeddings_path)
    train_split, valid_split = _split_validation(
        sessions, pick(args.val_fraction, t.val_fraction), train_config.seed
    )
    pipeline = FeaturePipeline(embeddings).fit(train_split, tracks)
    embedding_ref = {"path": str(embeddings_path), "sha256": _file_sha256(embeddings_path)}
    checkpoint = training.train(
        train_split, valid_split, tracks, pipeline, variant, train_config,
        embedding_ref=embedding_ref, log=print,
    )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(checkpoint, out)
    print(f"checkpoint={out}")
    print(f"train_sessions={len(train_split)}")
    print(f"valid_sessions={len(valid_split)}")
    if checkpoint.metadata["best_val_aa"] is not None:
        print(f"best_val_aa={checkpoint.metadata['best_val_aa']:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _config_for(args)
    sessions_path = _require(pick(args.sessions, config.paths.sessions), "sessions path")
    tracks_path = _require(pick(args.tracks, config.paths.tracks), "tracks path")
    members = []
    for path in args.model:
        checkpoint = training.load_checkpoint(path)
        members.append(checkpoint.build())
    tracks = data.load_tracks(tracks_path)
    sessions = data.load_sessions(sessions_path, tracks, mode="infer")
    predictions = metrics.ensemble_predict(members, sessions, tracks,
                                           threshold=args.threshold)
    metrics.write_submission(args.out, predictions)
    print(f"models={len(members)}")
    print(f"sessions={len(sessions)}")
    print(f"submission={args.out}")
    return EXIT_OK


def _load_truth(path) -> dict[str, list[bool]]:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    if head.startswith("session_id,"):
        sessions = data.load_sessions(path, None, mode="train")
        return metrics.second_half_truth(sessions)
    rows = metrics.read_submission(path)
    return {f"line{k:06d}": row for k, row in enumerate(rows, start=1)}


def cmd_evaluate(args) -> int:
    truth = _load_truth(args.truth)
    submission = metrics.read_submission(args.submission)
    mean, report = metrics.score_submission(truth, submission)
    print(f"sessions={report['sessions']}")
    print(f"mean_aa={mean:.6f}")
    print(f"first_position_accuracy={report['first_position_accuracy']:.6f}")
    if args.per_session:
        with open(args.per_session, "w", encoding="utf-8") as fh:
            fh.write("session_id,aa\n")
            for sid in sorted(report["per_session"]):
                fh.write(f"{sid},{report['per_session'][sid]!r}\n")
        print(f"per_session={args.per_session}")
    if args.breakdown:
        with open(args.breakdown, "w", encoding="utf-8") as fh:
            fh.write("position,accuracy,count\n")
            for pos, acc, count in report["per_position"]:
                fh.write(f"{pos},{acc!r},{count}\n")
        print(f"breakdown={args.breakdown}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skipgru",
        description="Session skip prediction: data, embeddings, training, "
                    "prediction and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic sessions/tracks corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sessions", type=int, default=2000)
    p.add_argument("--tracks", type=int, default=500)
    p.add_argument("--acoustic-dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--holdout", type=int, default=0,
                   help="also write sessions_holdout.csv with this many sessions")
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("embed", help="train track embeddings from sessions")
    p.add_argument("--config")
    p.add_argument("--sessions")
    p.add_argument("--out")
    p.add_argument("--dims", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--x-max", dest="x_max", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train a skip-prediction model")
    p.add_argument("--config")
    p.add_argument("--sessions")
    p.add_argument("--tracks")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--activation", choices=["relu", "elu"])
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--batchnorm", dest="batchnorm",
                   action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write a submission from checkpoint(s)")
    p.add_argument("--model", action="append", required=True,
                   help="checkpoint path; repeat for an ensemble")
    p.add_argument("--config")
    p.add_argument("--sessions")
    p.add_argument("--tracks")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a submission against the truth")
    p.add_argument("--truth", required=True,
                   help="sessions.csv with second-half interactions, or a "
                        "submission-format file")
    p.add_argument("--submission", required=True)
    p.add_argument("--per-session", dest="per_session")
    p.add_argument("--breakdown")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DataError, ConfigError, CheckpointError, AlignmentError,
            EnsembleError, ShapeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())
