"""
TriDet command-line entry point.

Subcommands: synth, train, detect, eval, gradcheck and rank. Exit codes are
0 on success, 1 when input validation (or a verification run) fails and 2 on
internal errors.

    python -m cli.app synth --videos 10 --seed 7 --out data/synthetic
    python -m cli.app train --config run.json --annotations data/synthetic/annotations.json \
        --features data/synthetic/features --checkpoint runs/model.tdck
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from components.detector import TriDetModel
from components.gradcheck_suite import run_gradcheck_suite
from components.inference_eval import detect, mean_ap
from components.rank_analysis import (
    attention_monotone_trials,
    compare_depth_profiles,
    profile_gap_wins,
    summarize_profiles,
    verify_angle_contraction,
)
from components.synthetic_data import generate_synthetic, write_synthetic
from components.training import train
from config.settings import get_settings
from config.train_config import config_from_dict, read_config_data
from utils.data_processor import DataProcessor, Detection
from utils.exceptions import (
    VALIDATION_ERRORS,
    ConfigurationError,
    DataValidationError,
    TriDetException,
    UsageError,
)
from utils.plots import depth_profile_figure, loss_curve_figure, write_figure

INFERENCE_FIELDS = ("score_threshold", "nms_sigma", "nms_min_score", "max_detections")


class _ArgumentParser(argparse.ArgumentParser):
    """Raise instead of exiting so usage errors share the exit-code mapping."""

    def error(self, message: str) -> None:
        raise UsageError(message, usage=self.format_usage())


class TriDetApp:
    """Command-line application for the detector pipeline."""

    def __init__(self, processor: Optional[DataProcessor] = None):
        """
        Initialize the application.

        Args:
            processor: File layer; relative paths resolve against the working directory by default
        """
        self.settings = get_settings()
        self.processor = processor or DataProcessor(Path("."))
        self.parser = self._build_parser()

    # ---------------------------------------------------------------- parser
    def _build_parser(self) -> argparse.ArgumentParser:
        common = _ArgumentParser(add_help=False)
        common.add_argument("--config", default=None, help="Run configuration JSON (every field optional)")

        parser = _ArgumentParser(prog="tridet", description="One-stage temporal action detection")
        sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

        synth = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
        synth.add_argument("--out", default=None, help="Output directory (default: <data dir>/synthetic)")
        synth.add_argument("--videos", type=int, default=10)
        synth.add_argument("--instants", type=int, default=256)
        synth.add_argument("--classes", type=int, default=None, help="Defaults to the config's num_classes")
        synth.add_argument("--dim", type=int, default=None, help="Defaults to the config's input_dim")
        synth.add_argument("--density", type=float, default=3.0)
        synth.add_argument("--noise", type=float, default=1.0)
        synth.add_argument("--seed", type=int, default=None, help="Defaults to the config's seed")
        synth.add_argument("--id-prefix", default="video")
        synth.set_defaults(handler=self.cmd_synth)

        tr = sub.add_parser("train", parents=[common], help="Train a detector")
        tr.add_argument("--annotations", default=None)
        tr.add_argument("--features", default=None, help="Directory of <video_id>.tdft files")
        tr.add_argument("--checkpoint", default=None)
        tr.add_argument("--loss-log", default=None)
        tr.add_argument("--epochs", type=int, default=None)
        tr.add_argument("--seed", type=int, default=None)
        tr.add_argument("--plot", action="store_true", help="Also write an HTML loss chart")
        tr.set_defaults(handler=self.cmd_train)

        det = sub.add_parser("detect", parents=[common], help="Detect actions with a trained checkpoint")
        det.add_argument("--checkpoint", default=None)
        det.add_argument("--features", required=True, help="Directory of <video_id>.tdft files")
        det.add_argument("--annotations", default=None, help="Restrict to the videos listed here")
        det.add_argument("--out", default=None, help="Detections JSON-lines file")
        det.set_defaults(handler=self.cmd_detect)

        ev = sub.add_parser("eval", parents=[common], help="Compute mAP of detections")
        ev.add_argument("--detections", required=True)
        ev.add_argument("--annotations", default=None)
        ev.add_argument("--out", default=None, help="Report JSON")
        ev.add_argument("--table", default=None, help="Optional per-class AP CSV")
        ev.add_argument("--thresholds", type=float, nargs="+", default=None)
        ev.set_defaults(handler=self.cmd_eval)

        gc = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient checks")
        gc.add_argument("--tolerance", type=float, default=None)
        gc.add_argument("--seed", type=int, default=None, help="Defaults to the config's seed")
        gc.add_argument(
            "--max-entries",
            type=int,
            default=None,
            help="Check a random sample of this many entries per tensor instead of every entry",
        )
        gc.set_defaults(handler=self.cmd_gradcheck)

        rk = sub.add_parser("rank", parents=[common], help="Rank-collapse diagnostics")
        rk.add_argument("--out", default=None, help="Output directory (default: <data dir>/rank)")
        rk.add_argument("--trials", type=int, default=1000)
        rk.add_argument("--profile-trials", type=int, default=100)
        rk.add_argument("--depth", type=int, default=4)
        rk.add_argument("--seed", type=int, default=None, help="Defaults to the config's seed")
        rk.add_argument("--plot", action="store_true", help="Also write an HTML depth-profile chart")
        rk.set_defaults(handler=self.cmd_rank)
        return parser

    # --------------------------------------------------------------- helpers
    def _config_data(self, args: argparse.Namespace, overrides: Dict[str, Any]) -> Dict[str, Any]:
        data = read_config_data(args.config)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return data

    def _default_path(self, name: str) -> Path:
        return self.settings.DATA_DIRECTORY / name

    # -------------------------------------------------------------- commands
    def cmd_synth(self, args: argparse.Namespace) -> int:
        cfg = config_from_dict(self._config_data(args, {"seed": args.seed}))
        dataset = generate_synthetic(
            num_videos=args.videos,
            num_instants=args.instants,
            num_classes=args.classes if args.classes is not None else cfg.num_classes,
            density=args.density,
            noise_std=args.noise,
            seed=cfg.seed,
            feature_dim=args.dim if args.dim is not None else cfg.input_dim,
            id_prefix=args.id_prefix,
        )
        out = Path(args.out) if args.out else self._default_path("synthetic")
        path = write_synthetic(dataset, out, self.processor)
        print(f"Wrote {len(dataset.samples)} videos to {path.parent}")
        return 0

    def cmd_train(self, args: argparse.Namespace) -> int:
        data = self._config_data(args, {
            "annotations": args.annotations,
            "feature_dir": args.features,
            "checkpoint": args.checkpoint,
            "loss_log": args.loss_log,
            "epochs": args.epochs,
            "seed": args.seed,
        })
        if not data.get("annotations") or not data.get("feature_dir"):
            raise ConfigurationError(
                "train needs annotations and feature_dir (--annotations/--features or the config)",
                error_code="MISSING_INPUT",
            )
        samples, annotations = self.processor.load_dataset(data["annotations"], data["feature_dir"])
        data.setdefault("num_classes", annotations.num_classes)
        if samples:
            data.setdefault("input_dim", int(samples[0].features.shape[1]))
        cfg = config_from_dict(data)
        if annotations.num_classes > cfg.num_classes:
            raise ConfigurationError(
                f"Annotations use {annotations.num_classes} classes but num_classes is {cfg.num_classes}",
                error_code="CLASS_MISMATCH",
            )

        result = train(samples, cfg)
        checkpoint = Path(cfg.checkpoint) if cfg.checkpoint else self._default_path("checkpoint.tdck")
        loss_log = Path(cfg.loss_log) if cfg.loss_log else checkpoint.with_suffix(".losses.csv")
        self.processor.save_checkpoint(checkpoint, cfg.to_json(), result.model.state_dict())
        table = pd.DataFrame({
            "epoch": range(1, len(result.losses) + 1),
            "lr": result.learning_rates,
            "loss": result.losses,
        })
        self.processor.save_table(loss_log, table)
        if args.plot:
            write_figure(loss_curve_figure(table), loss_log.with_suffix(".html"), self.processor)
        print(f"Final loss {result.losses[-1]:.5f}; checkpoint written to {checkpoint}")
        return 0

    def cmd_detect(self, args: argparse.Namespace) -> int:
        data = read_config_data(args.config)
        checkpoint = args.checkpoint or data.get("checkpoint")
        if not checkpoint:
            raise ConfigurationError("detect needs --checkpoint (or checkpoint in the config)", error_code="MISSING_INPUT")
        config_json, state = self.processor.load_checkpoint(checkpoint)
        model = TriDetModel.from_checkpoint(config_json, state)
        inference = {k: data[k] for k in INFERENCE_FIELDS if k in data}
        cfg = config_from_dict({**model.cfg.to_dict(), **inference}, apply_env=False) if inference else model.cfg

        feature_dir = self.processor.resolve(args.features)
        if args.annotations:
            video_ids = [v.video_id for v in self.processor.load_annotations(args.annotations).videos]
        else:
            video_ids = sorted(p.stem for p in feature_dir.glob("*.tdft"))
        detections: List[Detection] = []
        for video_id in video_ids:
            features = self.processor.read_features(feature_dir / f"{video_id}.tdft")
            if features.shape[1] != cfg.input_dim:
                raise DataValidationError(
                    f"{video_id}: features have {features.shape[1]} channels, the model expects {cfg.input_dim}",
                    error_code="FEATURE_DIM",
                )
            detections.extend(detect(model, features, video_id, cfg))
        out = Path(args.out) if args.out else self._default_path("detections.jsonl")
        self.processor.save_detections(out, detections)
        print(f"{len(detections)} detections from {len(video_ids)} videos written to {out}")
        return 0

    def cmd_eval(self, args: argparse.Namespace) -> int:
        data = self._config_data(args, {"annotations": args.annotations, "iou_thresholds": args.thresholds})
        if not data.get("annotations"):
            raise ConfigurationError("eval needs --annotations (or annotations in the config)", error_code="MISSING_INPUT")
        cfg = config_from_dict(data)
        detections = self.processor.load_detections(args.detections)
        annotations = self.processor.load_annotations(cfg.annotations)
        report = mean_ap(detections, annotations, cfg.iou_thresholds)
        out = Path(args.out) if args.out else self._default_path("eval_report.json")
        self.processor.save_eval_report(out, report.map_per_threshold, report.average_map)
        if args.table:
            self.processor.save_table(args.table, report.ap)
        for threshold, value in report.map_per_threshold.items():
            print(f"mAP@{threshold:g}: {value:.4f}")
        print(f"average mAP: {report.average_map:.4f}")
        return 0

    def cmd_gradcheck(self, args: argparse.Namespace) -> int:
        if args.max_entries is not None and args.max_entries < 1:
            raise ConfigurationError("--max-entries must be at least 1", error_code="BAD_ARGUMENT")
        cfg = config_from_dict(self._config_data(args, {"seed": args.seed}))
        table = run_gradcheck_suite(
            tolerance=args.tolerance,
            seed=cfg.seed,
            max_entries=args.max_entries,
        )
        print(table.to_string(index=False))
        print(f"worst relative error: {table['worst_error'].max():.3e}")
        return 0 if bool(table["passed"].all()) else 1

    def cmd_rank(self, args: argparse.Namespace) -> int:
        seed = config_from_dict(self._config_data(args, {"seed": args.seed})).seed
        out = Path(args.out) if args.out else self._default_path("rank")
        report = verify_angle_contraction(trials=args.trials, seed=seed)
        profiles = compare_depth_profiles(trials=args.profile_trials, depth=args.depth, seed=seed)
        self.processor.save_table(out / "angles.csv", report.records)
        summary = summarize_profiles(profiles)
        self.processor.save_table(out / "depth_profile.csv", summary)
        self.processor.save_table(out / "depth_profile_trials.csv", profiles)
        if args.plot:
            write_figure(depth_profile_figure(summary), out / "depth_profile.html", self.processor)
        print(f"angle contraction: {report.violations} violations in {len(report.records)} mixes "
              f"(worst margin {report.worst_margin:.3e})")
        print(f"self-attention non-decreasing in {attention_monotone_trials(profiles)}/{args.profile_trials} trials; "
              f"SGP below self-attention at depth {args.depth} in "
              f"{profile_gap_wins(profiles, args.depth)}/{args.profile_trials} trials")
        print(summary.to_string(index=False))
        return 0 if report.passed else 1

    # ------------------------------------------------------------------- run
    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse ``argv`` and dispatch; returns the process exit code."""
        try:
            args = self.parser.parse_args(argv)
        except UsageError as e:
            sys.stderr.write(e.usage)
            sys.stderr.write(f"error: {e.message}\n")
            return 1
        except SystemExit as e:
            # --help
            return int(e.code or 0)

        handler: Callable[[argparse.Namespace], int] = args.handler
        try:
            return handler(args)
        except VALIDATION_ERRORS as e:
            logger.error(f"{args.command}: [{e.error_code}] {e.message}")
            return 1
        except TriDetException as e:
            logger.error(f"{args.command}: internal error [{e.error_code}] {e.message}")
            return 2
        except Exception as e:
            logger.exception(f"{args.command}: unexpected error: {e}")
            return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    return TriDetApp().run(argv)


if __name__ == "__main__":
    sys.exit(main())
