"""Command-line entry point: ``vidslots <command> [options]``.

Every command writes ``config.yaml`` (the resolved configuration), ``log.jsonl``
(line-delimited JSON log records) and ``artifacts.json`` (what it produced)
into its output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .core import ConfigError, RunConfig, ShapeError, apply_overrides, load_config, save_config

OUTPUT_ROOT_ENV = "VIDSLOTS_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

log = logging.getLogger("vidslots")


class _JsonLines(logging.Handler):
    def __init__(self, path: Path):
        super().__init__()
        self.fh = open(path, "a", encoding="utf-8")

    def emit(self, record: logging.LogRecord) -> None:
        self.fh.write(json.dumps({"time": round(record.created, 3), "level": record.levelname,
                                  "logger": record.name, "message": record.getMessage()}) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()
        super().close()


class _Run:
    """Output directory bookkeeping shared by all commands."""

    def __init__(self, out_dir: Path, command: str):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.artifacts: list[str] = []
        self.handler = _JsonLines(self.out / "log.jsonl")
        logging.getLogger("vidslots").addHandler(self.handler)

    def snapshot(self, cfg: RunConfig) -> None:
        save_config(cfg, self.out / "config.yaml")
        self.add("config.yaml")

    def add(self, name: str | Path) -> None:
        self.artifacts.append(str(Path(name).relative_to(self.out)) if Path(name).is_absolute() else str(name))

    def write_json(self, name: str, payload) -> Path:
        path = self.out / name
        path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=float), encoding="utf-8")
        self.add(name)
        return path

    def close(self, status: int) -> None:
        manifest = {"command": self.command, "exit_status": status, "artifacts": sorted(set(self.artifacts))}
        (self.out / "artifacts.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        logging.getLogger("vidslots").removeHandler(self.handler)
        self.handler.close()


def _resolve_config(args) -> RunConfig:
    overrides = list(args.overrides or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "encoder", None):
        overrides.append(f"encoder={args.encoder}")
    if args.config:
        return load_config(args.config, overrides)
    return apply_overrides(RunConfig(), overrides)


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{args.command}-{time.strftime('%Y%m%d-%H%M%S')}"


def _dataset_cfg(cfg: RunConfig):
    from .data import DatasetConfig
    return DatasetConfig.from_run(cfg)


def _load_clips(path):
    from .data import load_dataset
    if path is None:
        raise FileNotFoundError("a --data directory is required")
    return load_dataset(path)


def _external_features(cfg: RunConfig, data_dir, clips) -> torch.Tensor | None:
    """``[N, T, h, w, c]`` from ``<data>/features/<clip_id>.feat`` when the encoder is external."""
    if cfg.encoder != "external":
        return None
    from .data import ingest_external_features
    maps = [ingest_external_features(Path(data_dir) / "features" / f"{c.clip_id}.feat", cfg) for c in clips]
    return torch.as_tensor(np.stack([np.stack([m.values for m in clip]) for clip in maps]))


def _model(args, cfg: RunConfig):
    from .model import build_model
    from .train import load_checkpoint
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)[0]
    log.info("no checkpoint given; using a freshly initialized model")
    return build_model(cfg)


# ---- commands -------------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig, run: _Run) -> None:
    from .data import generate_dataset
    manifest = generate_dataset(run.out / "clips", args.n_clips, cfg.seed, _dataset_cfg(cfg))
    run.add("clips/manifest.json")
    if args.export_features:
        from .data import export_features, load_dataset
        from .eval.evaluate import clip_features
        from .model import build_model
        model = build_model(cfg.replace(encoder="patch" if cfg.encoder == "external" else cfg.encoder))
        (run.out / "clips" / "features").mkdir(exist_ok=True)
        for clip in load_dataset(run.out / "clips"):
            export_features(run.out / "clips" / "features" / f"{clip.clip_id}.feat",
                            clip_features(model, [clip])[0].numpy(), clip.clip_id)
        run.add("clips/features")
    log.info("wrote %d clips to %s", args.n_clips, manifest.parent)


def cmd_train(args, cfg: RunConfig, run: _Run) -> None:
    from .train import train_loop
    train = _load_clips(args.data)
    val = _load_clips(args.val_data) if args.val_data else []
    res = train_loop(cfg, train, val, run.out, train_features=_external_features(cfg, args.data, train),
                     val_features=_external_features(cfg, args.val_data, val) if val else None)
    for name in ("metrics.jsonl", "last.ckpt", "best.ckpt"):
        if (run.out / name).exists():
            run.add(name)
    log.info("trained %d steps, final loss %.6f", cfg.optim.steps, res.final_loss)


def cmd_eval(args, cfg: RunConfig, run: _Run) -> None:
    from .eval import evaluate_model
    model = _model(args, cfg)
    clips = _load_clips(args.data)
    report = evaluate_model(model, clips, features=_external_features(model.cfg, args.data, clips))
    if not all(np.isfinite(v) or k == "ARI_fg" for k, v in report.aggregate.items()):
        raise FloatingPointError(f"non-finite metrics {report.aggregate}")
    run.write_json("eval.json", report.to_dict())
    log.info("eval %s", {k: round(v, 4) for k, v in report.aggregate.items()})


def cmd_matrix(args, cfg: RunConfig, run: _Run) -> None:
    from .analysis import JobManifest, offset_matrix
    if not args.checkpoint:
        raise ConfigError("matrix needs --checkpoint")
    if cfg.encoder == "external":
        raise ConfigError("matrix runs on clips with the checkpoint's own encoder")
    mat = offset_matrix(args.checkpoint, _load_clips(args.data), args.metric, args.delta,
                        manifest=JobManifest(run.out / "jobs.json"))
    run.add("jobs.json")
    run.write_json(Path(args.matrix_out).name if args.matrix_out else "matrix.json", mat.to_dict())
    log.info("matrix %s rows=slot offsets %s cols=feature offsets %s", args.metric, mat.slot_offsets,
             mat.feature_offsets)


def cmd_ablate(args, cfg: RunConfig, run: _Run) -> None:
    from .analysis import ABLATION_AXES, JobManifest, ablation_grid, run_job
    axes = ABLATION_AXES
    if args.axes:
        axes = {}
        for item in args.axes:
            if "=" not in item:
                raise ConfigError(f"axis {item!r} is not name=v1,v2")
            name, values = item.split("=", 1)
            axes[name] = [apply_overrides(cfg, [f"{name}={v}"]).to_dict()[name] for v in values.split(",")]
    train, val, test = _load_clips(args.data), _load_clips(args.val_data), _load_clips(args.test_data)
    manifest = JobManifest(run.out / "jobs.json")
    grid = ablation_grid(cfg, axes, args.seeds, lambda c: run_job(c, train, val, test, run.out, manifest))
    run.add("jobs.json")
    run.write_json("grid.json", grid)


def cmd_probe(args, cfg: RunConfig, run: _Run) -> None:
    from .eval import evaluate_probe, probe_targets, run_clips, train_probe
    model = _model(args, cfg)
    model.eval()
    train, test = _load_clips(args.data), _load_clips(args.test_data)
    n = model.cfg.n_slots
    outs = {name: run_clips(model, clips, features=_external_features(model.cfg, path, clips))
            for name, clips, path in (("train", train, args.data), ("test", test, args.test_data))}
    probe = train_probe(probe_targets(outs["train"], train, n))
    scores = evaluate_probe(probe, probe_targets(outs["test"], test, n))
    run.write_json("probe.json", scores)
    log.info("probe %s", scores)


def cmd_plot(args, cfg: RunConfig, run: _Run) -> None:
    from . import plot
    for src in args.inputs:
        payload = json.loads(Path(src).read_text(encoding="utf-8"))
        target = run.out / (Path(src).stem + ".png")
        if "values" in payload:
            plot.plot_matrix(payload, target)
        elif "variants" in payload:
            plot.plot_ablation(payload, target)
        else:
            raise ValueError(f"{src}: neither a matrix nor an ablation table")
        run.add(target.name)


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "matrix": cmd_matrix,
    "ablate": cmd_ablate, "probe": cmd_probe, "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>-<time>)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--device", default="cpu", help="torch device (only cpu is supported)")
    common.add_argument("--workers", type=int, default=1, help="torch intra-op threads")
    common.add_argument("--encoder", choices=["patch", "conv", "external"])
    common.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable (dotted keys, e.g. optim.steps=500)")
    common.add_argument("--data", help="clip directory (input)")

    parser = argparse.ArgumentParser(
        prog="vidslots", description="Synthetic-video object discovery with slot-feature query prediction.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic clip dataset")
    p.add_argument("--n-clips", type=int, default=200)
    p.add_argument("--export-features", action="store_true",
                   help="also write per-clip encoder features under clips/features/ for --encoder external")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--val-data")
    p = sub.add_parser("eval", parents=[common], help="evaluate object discovery")
    p.add_argument("--checkpoint")
    p = sub.add_parser("matrix", parents=[common], help="evaluation-time offset matrix")
    p.add_argument("--checkpoint")
    p.add_argument("--delta", type=int)
    p.add_argument("--metric", default="ARI_fg")
    p.add_argument("--matrix-out", help="file name for the matrix inside the output directory")
    p = sub.add_parser("ablate", parents=[common], help="ablation grid over config axes")
    p.add_argument("--axes", nargs="*", metavar="NAME=V1,V2")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--val-data", required=True)
    p.add_argument("--test-data", required=True)
    p = sub.add_parser("probe", parents=[common], help="class/box probe on slots")
    p.add_argument("--checkpoint")
    p.add_argument("--test-data", required=True)
    p = sub.add_parser("plot", parents=[common], help="render matrix/ablation JSON files to images")
    p.add_argument("inputs", nargs="+")
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.device != "cpu":
        parser.print_usage(sys.stderr)
        print(f"vidslots: unsupported device {args.device!r}", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(max(1, args.workers))
    if not logging.getLogger("vidslots").handlers:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("vidslots").addHandler(console)
    logging.getLogger("vidslots").setLevel(logging.INFO)

    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"vidslots: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = _Run(_out_dir(args), args.command)
    status = EXIT_OK
    try:
        run.snapshot(cfg)
        COMMANDS[args.command](args, cfg, run)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        status = EXIT_CONFIG
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        status = EXIT_NUMERIC
    except (OSError, ShapeError, ValueError, KeyError) as exc:
        log.error("data error: %s", exc)
        status = EXIT_DATA
    finally:
        run.close(status)
    return status


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
