"""Command-line entry point for the batch pipeline.

Subcommands: extract, train, predict, eval, mos, split, serve.  Every knob
is a flag; an optional TOML config file (one table per subcommand) supplies
defaults for any flag left unset.  Exit status is nonzero exactly when a
pipeline error contract fires.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import media
from .features import (
    FeatureError,
    FileMotionProvider,
    FileSemanticProvider,
    ToyMotionBackbone,
    ToySemanticBackbone,
    extract_clip_features,
    load_clip_features,
    read_feature_file,
    save_clip_features,
)
from .media import MediaError, SamplerConfig
from .metrics import UndefinedCorrelationError
from .model import ModelDims, load_model, save_model, score_video
from .protocol import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    crf_summary,
    crf_summary_csv,
    run_protocol,
    split_dataset,
)
from .subjective import StudyError, process_study, read_ratings_csv, write_mos_csv
from .training import TrainConfig, VideoSample, train

_PIPELINE_ERRORS = (
    MediaError, FeatureError, StudyError, ManifestError,
    UndefinedCorrelationError, ValueError, OSError,
)


class CliError(ValueError):
    pass


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise CliError(
            "missing required options: " + ", ".join(f"--{n}" for n in missing)
        )


def _load_input(path: Path) -> media.FrameSequence:
    if path.is_dir():
        return media.load_frame_dir(path)
    return media.parse_y4m(path.read_bytes())


def cmd_extract(args: argparse.Namespace) -> int:
    _require(args, "input", "out-dir")
    if args.video_id is None:
        args.video_id = Path(args.input).stem
    seq = _load_input(Path(args.input))
    cfg = SamplerConfig(half_samples=args.L)
    if args.provider == "toy":
        semantic = ToySemanticBackbone(args.seed)
        motion = ToyMotionBackbone(args.seed)
    else:
        if not args.semantic_file or not args.motion_file:
            raise CliError(
                "--provider files requires --semantic-file and --motion-file"
            )
        semantic = FileSemanticProvider.from_file(
            args.semantic_file, args.L, seq.frame_rate, video_id=args.video_id
        )
        motion = FileMotionProvider.from_file(args.motion_file, video_id=args.video_id)
    bundles = extract_clip_features(seq, cfg, semantic, motion)
    feature_set = save_clip_features(args.out_dir, args.video_id, bundles)

    if args.manifest:
        manifest_path = Path(args.manifest)
        if manifest_path.exists():
            manifest = DatasetManifest.load(manifest_path)
            entries = [e for e in manifest.entries if e.video_id != args.video_id]
        else:
            entries = []
        entries.append(ManifestEntry(
            video_id=args.video_id,
            source_group=args.source_group or args.video_id,
            crf=args.crf,
            resolution=f"{seq.frames[0].width}x{seq.frames[0].height}",
            fps=seq.rate_num / seq.rate_den,
            mos=args.mos,
            features=feature_set,
        ))
        DatasetManifest(sorted(entries, key=lambda e: e.video_id)).save(manifest_path)
    print(f"{args.video_id}: {feature_set.clip_count} clips, "
          f"{feature_set.clip_count * 2 * args.L} sampled frames")
    return 0


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def _dims_from_manifest(manifest: DatasetManifest, args: argparse.Namespace,
                        base_dir: Path | None) -> ModelDims:
    entry = next((e for e in manifest.entries if e.features is not None), None)
    if entry is None:
        raise ManifestError("manifest has no entries with features")
    fs = entry.features
    sem = read_feature_file(_resolve(fs.semantic_path, base_dir))
    mot = read_feature_file(_resolve(fs.motion_path, base_dir))
    dis = read_feature_file(_resolve(fs.distortion_path, base_dir))
    return ModelDims(
        half_samples=fs.half_samples,
        n_semantic=sem.dim,
        n_distortion=dis.dim,
        n_motion=mot.dim,
        hidden_semantic=args.hidden_semantic,
        hidden_distortion=args.hidden_distortion,
        motion_out=args.motion_out,
    )


def _labeled_samples(manifest: DatasetManifest, base_dir: Path | None) -> list[VideoSample]:
    unlabeled = [e.video_id for e in manifest.entries if e.mos is None]
    if unlabeled:
        raise ManifestError("entries without MOS labels: " + ", ".join(unlabeled))
    samples = []
    for e in manifest.entries:
        if e.features is None:
            raise ManifestError(f"entry {e.video_id} has no feature files")
        try:
            clips = load_clip_features(e.features, base_dir)
        except OSError as exc:
            raise FeatureError(f"video {e.video_id}: {exc}") from exc
        samples.append(VideoSample(tuple(clips), float(e.mos), e.video_id))
    return samples


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        plateau_epochs=args.plateau,
        lr_decay=args.lr_decay,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "manifest", "out")
    _apply_dims_override(args)
    manifest = DatasetManifest.load(args.manifest)
    base_dir = Path(args.manifest).parent
    samples = _labeled_samples(manifest, base_dir)
    dims = _dims_from_manifest(manifest, args, base_dir)
    result = train(samples, _train_config(args), dims=dims)
    save_model(args.out, result.params)
    if args.loss_csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss", "learning_rate"])
        for i, (loss, lr) in enumerate(zip(result.epoch_losses, result.learning_rates)):
            writer.writerow([i, repr(loss), repr(lr)])
        Path(args.loss_csv).write_text(buf.getvalue())
    print(f"trained {args.epochs} epochs, final loss {result.epoch_losses[-1]:.6g}, "
          f"model written to {args.out}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    _require(args, "model", "manifest", "out")
    params = load_model(args.model)
    manifest = DatasetManifest.load(args.manifest)
    base_dir = Path(args.manifest).parent
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "score"])
    for e in manifest.entries:
        if e.features is None:
            raise ManifestError(f"entry {e.video_id} has no feature files")
        clips = load_clip_features(e.features, base_dir)
        writer.writerow([e.video_id, repr(score_video(params, clips))])
    Path(args.out).write_text(buf.getvalue())
    print(f"scored {len(manifest.entries)} videos -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "manifest", "out-dir")
    _apply_dims_override(args)
    manifest = DatasetManifest.load(args.manifest)
    base_dir = Path(args.manifest).parent
    dims = _dims_from_manifest(manifest, args, base_dir)
    report = run_protocol(
        manifest, dims, _train_config(args),
        n_splits=args.splits, ratio=args.ratio, base_seed=args.seed,
        grouped=args.grouped, base_dir=base_dir,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "splits.csv").write_text(report.to_csv())
    (out_dir / "aggregate.json").write_text(report.to_json())
    rows = crf_summary(manifest)
    if rows:
        (out_dir / "crf_mos.csv").write_text(crf_summary_csv(rows))
    summary = report.summary()
    print(f"{summary['n_splits']} splits: "
          f"SRCC {summary['srcc_mean']:.4f} +/- {summary['srcc_std']:.4f}, "
          f"PLCC {summary['plcc_mean']:.4f} +/- {summary['plcc_std']:.4f}")
    return 0


def cmd_mos(args: argparse.Namespace) -> int:
    _require(args, "ratings", "out")
    records = read_ratings_csv(args.ratings)
    result = process_study(records, rejection=args.rejection)
    write_mos_csv(args.out, result.mos)
    rejected = ", ".join(result.rejected_subjects) or "none"
    print(f"{len(records)} ratings, {len(result.mos.videos)} videos, "
          f"rejected subjects: {rejected} (screened on {result.rejection_input})")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    _require(args, "manifest", "out-dir")
    manifest = DatasetManifest.load(args.manifest)
    train_ids, test_ids = split_dataset(
        manifest, ratio=args.ratio, seed=args.seed, grouped=args.grouped
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_ids.txt").write_text("\n".join(train_ids) + "\n")
    (out_dir / "test_ids.txt").write_text("\n".join(test_ids) + "\n")
    print(f"{len(train_ids)} train / {len(test_ids)} test videos -> {out_dir}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    _require(args, "data-dir", "media-dir")
    import uvicorn

    from .server.app import create_app

    app = create_app(data_dir=args.data_dir, media_dir=args.media_dir,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lr-decay", type=float, default=0.5)
    p.add_argument("--plateau", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dims", default=None,
                   help="compact hidden-width overrides, e.g. hs=128,hd=32,nm2=64")
    p.add_argument("--hidden-semantic", type=int, default=128)
    p.add_argument("--hidden-distortion", type=int, default=32)
    p.add_argument("--motion-out", type=int, default=64)


_DIMS_KEYS = {"hs": "hidden_semantic", "hd": "hidden_distortion", "nm2": "motion_out"}


def _apply_dims_override(args: argparse.Namespace) -> None:
    if not getattr(args, "dims", None):
        return
    for part in args.dims.split(","):
        key, _, value = part.partition("=")
        attr = _DIMS_KEYS.get(key.strip())
        if attr is None or not value.strip().isdigit():
            raise CliError(
                f"bad --dims entry {part!r}; expected hs=/hd=/nm2= integers"
            )
        setattr(args, attr, int(value))


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="nrvqa",
        description="No-reference video quality assessment pipeline",
    )
    parser.add_argument("--config", help="TOML file with per-subcommand defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = commands["extract"] = sub.add_parser(
        "extract", help="extract per-clip features from raw video")
    p.add_argument("--input", help=".y4m file or PNG frame directory")
    p.add_argument("--video-id", default=None)
    p.add_argument("--out-dir")
    p.add_argument("--manifest", default=None, help="manifest JSON to create/update")
    p.add_argument("--L", type=int, default=8, help="half the frames sampled per clip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--provider", choices=["toy", "files"], default="toy")
    p.add_argument("--semantic-file", default=None)
    p.add_argument("--motion-file", default=None)
    p.add_argument("--source-group", default=None)
    p.add_argument("--crf", type=int, default=0)
    p.add_argument("--mos", type=float, default=None)
    p.set_defaults(func=cmd_extract)

    p = commands["train"] = sub.add_parser("train", help="train the fusion regressor")
    p.add_argument("--manifest")
    p.add_argument("--out", help="output model file")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = commands["predict"] = sub.add_parser(
        "predict", help="score videos with a trained model")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--out", help="output scores CSV")
    p.set_defaults(func=cmd_predict)

    p = commands["eval"] = sub.add_parser(
        "eval", help="run the repeated split/train/test protocol")
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.add_argument("--splits", type=int, default=30)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grouped", dest="grouped", action="store_true", default=True)
    p.add_argument("--ungrouped", dest="grouped", action="store_false")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = commands["mos"] = sub.add_parser(
        "mos", help="process a ratings CSV into MOS labels")
    p.add_argument("--ratings")
    p.add_argument("--out")
    p.add_argument("--rejection", choices=["raw", "zscore"], default="raw")
    p.set_defaults(func=cmd_mos)

    p = commands["split"] = sub.add_parser("split", help="write train/test id lists")
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grouped", dest="grouped", action="store_true", default=True)
    p.add_argument("--ungrouped", dest="grouped", action="store_false")
    p.set_defaults(func=cmd_split)

    p = commands["serve"] = sub.add_parser(
        "serve", help="run the rating-collection HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir")
    p.add_argument("--media-dir")
    p.add_argument("--ui-dir", default=None, help="static frontend to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser, commands


def _peek_config(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, commands = build_parser()
    config_path = _peek_config(argv)
    if config_path:
        try:
            with open(config_path, "rb") as fh:
                config = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            print(f"error: bad config file: {exc}", file=sys.stderr)
            return 2
        for command, section in config.items():
            if command in commands and isinstance(section, dict):
                commands[command].set_defaults(
                    **{k.replace("-", "_"): v for k, v in section.items()}
                )
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _PIPELINE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
