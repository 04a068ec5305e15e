import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from fairstitch import create_method_manager
from fairstitch.analysis import default_grid, emit_report, interpolate_loss, report_roc_frames
from fairstitch.checkpoint import Checkpoint, CheckpointMeta, load_checkpoint, save_checkpoint
from fairstitch.config import RunConfig, load_config, parse_seed_override
from fairstitch.datasets import (
    SynthSpec,
    TripletDataset,
    balanced_subsample,
    cell_counts,
    load_csv,
    save_csv,
    split,
    synth_biased,
)
from fairstitch.errors import CheckpointError, DataError, FairStitchError
from fairstitch.network import init_mlp
from fairstitch.pipeline import OptimizerState, TrainingResult, evaluate_model, objective_value
from fairstitch.utils import config_hash, metadata_line, write_commented_csv, write_json, write_jsonl


class Workspace:
    """File layout of one output directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = Path(config.output.dir)
        self.hash = config_hash(config.to_dict())

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    def split_path(self, name: str) -> Path:
        return self.data_dir / f"{name}.csv"

    def checkpoint_path(self, name: str) -> Path:
        return self.root / f"{name}.json"

    def header(self) -> str:
        return metadata_line(self.hash, self.config.seed_dict())

    def load_split(self, name: str) -> TripletDataset:
        path = self.split_path(name)
        if not path.is_file():
            raise DataError(f"missing data file: expected {path}; run `gen-data` first")
        return load_csv(path, name)

    def require_checkpoint(self, name: str, producer: str) -> Checkpoint:
        path = self.checkpoint_path(name)
        if not path.is_file():
            raise CheckpointError(f"missing checkpoint: expected {path}; run `{producer}` first")
        return load_checkpoint(path)


def _optimizer(config: RunConfig) -> OptimizerState:
    return OptimizerState(config.optimizer.lr, config.optimizer.momentum, config.optimizer.weight_decay)


def _meta(config: RunConfig, phase: str, epoch: int) -> CheckpointMeta:
    return CheckpointMeta(phase, epoch, _optimizer(config).hyperparameters(), config.seed_dict())


def cmd_gen_data(config: RunConfig) -> Dict[str, TripletDataset]:
    ws = Workspace(config)
    data = config.data
    seed = config.seeds.data
    if data.source == "csv":
        print(f"Loading data from {data.csv_path}")
        full = load_csv(data.csv_path, "full")
    else:
        synth = data.synthetic
        print(f"Generating {synth.n} synthetic rows")
        full = synth_biased(SynthSpec(synth.n, synth.d, tuple(synth.cell_probs), synth.class_separation,
                                      synth.attribute_shift, synth.label_noise, seed))

    train, val, test = split(full, data.fractions, seed, data.stratify)
    balanced = balanced_subsample(train, val, seed)
    fraction = data.balanced_val_fraction
    balanced_train, balanced_val = split(balanced, (1.0 - fraction, fraction), seed, True,
                                         names=("balanced_train", "balanced_val"))
    splits = {"train": train, "val": val, "test": test, "balanced": balanced,
              "balanced_train": balanced_train, "balanced_val": balanced_val}
    for name, ds in splits.items():
        save_csv(ds, ws.split_path(name))

    write_json(ws.data_dir / "manifest.json", {
        "config_hash": ws.hash,
        "seeds": config.seed_dict(),
        "source": data.source,
        "total": len(full),
        "features": full.dim,
        "cell_counts": {name: cell_counts(ds).to_dict() for name, ds in splits.items()},
        "full_cell_counts": cell_counts(full).to_dict(),
        "metadata": {"created_at": datetime.now(timezone.utc).isoformat()},
    })
    print(f"Wrote {len(splits)} splits to {ws.data_dir}")
    return splits


def _write_run(ws: Workspace, prefix: Path, result: TrainingResult, splits: Dict[str, str], wall_time: float):
    write_jsonl(prefix.with_name(prefix.name + "_records.jsonl"), (r.to_dict() for r in result.records))
    write_json(prefix.with_name(prefix.name + "_run.json"), {
        "config_hash": ws.hash,
        "phase": result.phase,
        "epochs": result.epochs,
        "best_epoch": result.best_epoch,
        "splits": splits,
        "metadata": {"wall_time": wall_time},
    })


def cmd_pretrain(config: RunConfig, manager) -> TrainingResult:
    ws = Workspace(config)
    train = ws.load_split("train")
    val = ws.load_split("val")
    net = init_mlp(config.dims(train.dim), config.seeds.init)
    save_checkpoint(net, _meta(config, "erm", 0), ws.checkpoint_path("erm_init"))

    print(f"Pretraining for {config.epochs.erm} epochs on {len(train)} rows")
    started = time.perf_counter()
    result = manager.run("erm", net=net, train=train, val=val, epochs=config.epochs.erm, opt=_optimizer(config),
                         seed=config.seeds.train, settings=config.evaluation.metric_settings())
    save_checkpoint(result.final, _meta(config, "erm", result.epochs), ws.checkpoint_path("erm_final"))
    _write_run(ws, ws.root / "erm", result, {"train": "train", "val": "val"}, time.perf_counter() - started)
    return result


def cmd_finetune(config: RunConfig, method: str, manager, jobs: int = 1) -> List[TrainingResult]:
    """Stitch training (tfs) or last-block fine-tuning (fdr) from the pretrained checkpoint."""
    ws = Workspace(config)
    pretrained = ws.require_checkpoint("erm_final", "pretrain").network
    balanced = ws.load_split("balanced_train")
    val = ws.load_split("balanced_val")
    common = dict(pretrained=pretrained, balanced=balanced, val=val, constraint=config.constraint.build(),
                  epochs=config.epochs.finetune, opt=_optimizer(config),
                  settings=config.evaluation.metric_settings())
    if method == "tfs":
        common.update(stitch_index=config.model.stitch_index, stitch_init=config.model.stitch_init)

    seeds = list(config.sweep.train_seeds) or [config.seeds.train]
    sweep = bool(config.sweep.train_seeds)
    print(f"Running {method} for {config.epochs.finetune} epochs on {len(balanced)} balanced rows, seeds {seeds}")
    started = time.perf_counter()
    results = manager.run_sweep(method, [dict(common, seed=s) for s in seeds], jobs)
    wall_time = time.perf_counter() - started

    for seed, result in zip(seeds, results):
        root = ws.root / "sweep" / f"seed_{seed}" if sweep else ws.root
        seeds_meta = dict(config.seed_dict(), train=seed)
        optimizer = _optimizer(config).hyperparameters()
        save_checkpoint(result.initial, CheckpointMeta(method, 0, optimizer, seeds_meta), root / f"{method}_init.json")
        save_checkpoint(result.best, CheckpointMeta(method, result.best_epoch, optimizer, seeds_meta),
                        root / f"{method}_best.json")
        save_checkpoint(result.final, CheckpointMeta(method, result.epochs, optimizer, seeds_meta),
                        root / f"{method}_final.json")
        _write_run(ws, root / method, result, {"train": "balanced_train", "val": "balanced_val"}, wall_time)
        print(f"Seed {seed}: best epoch {result.best_epoch} of {result.epochs}")
    return results


def cmd_evaluate(config: RunConfig, checkpoints: List[str]) -> List[Path]:
    ws = Workspace(config)
    constraint = config.constraint.build()
    settings = config.evaluation.metric_settings()
    splits = {name: ws.load_split(name) for name in ("train", "val", "test", "balanced_train")}
    written = []
    for checkpoint_path in checkpoints:
        ckpt = load_checkpoint(checkpoint_path)
        print(f"Evaluating {checkpoint_path}")
        results = {}
        for name, ds in splits.items():
            label = "balanced" if name == "balanced_train" else name
            report = evaluate_model(ckpt.network, ds, constraint.kind, settings)
            report.split = label
            results[label] = {"metrics": report.to_dict(),
                              "objective": objective_value(ckpt.network, ds, constraint)}
        out = ws.root / f"evaluate_{Path(checkpoint_path).stem}.json"
        write_json(out, {
            "config_hash": ws.hash,
            "checkpoint": Path(checkpoint_path).name,
            "phase": ckpt.meta.phase,
            "epoch": ckpt.meta.epoch,
            "constraint": constraint.to_dict(),
            "splits": results,
        })
        written.append(out)
    return written


def cmd_interpolate(config: RunConfig, method: str) -> Path:
    ws = Workspace(config)
    theta_star = ws.require_checkpoint(f"{method}_best", method)
    theta0 = ws.require_checkpoint("tfs_init" if method == "tfs" else "erm_init",
                                   method if method == "tfs" else "pretrain")
    datasets = {"balanced": ws.load_split("balanced_train"), "val": ws.load_split("val")}
    evaluation = config.evaluation
    curve = interpolate_loss(theta0, theta_star, datasets, config.constraint.build(),
                             grid=default_grid(evaluation.interpolation_points),
                             ce_only=evaluation.interpolation_ce_only,
                             interpolate_frozen=evaluation.interpolate_frozen)
    out = ws.root / f"interpolate_{method}.csv"
    header = f"{ws.header()} theta0={Path(curve.theta0_id).name} theta_star={Path(curve.theta_star_id).name}"
    write_commented_csv(out, curve.to_frame(), header)
    print(f"Wrote {len(curve.alphas)} interpolation points to {out}")
    return out


def cmd_report(config: RunConfig) -> Path:
    ws = Workspace(config)
    models = {
        "baseline": ws.require_checkpoint("erm_final", "pretrain").network,
        "fdr": ws.require_checkpoint("fdr_best", "fdr").network,
        "tfs": ws.require_checkpoint("tfs_best", "tfs").network,
    }
    splits = {"train": ws.load_split("train"), "balanced": ws.load_split("balanced_train"),
              "test": ws.load_split("test")}
    report = emit_report(models, splits, config.constraint.build(), config.evaluation.metric_settings(),
                         metadata={"config_hash": ws.hash, "seeds": config.seed_dict()})
    write_json(ws.root / "report.json", report.to_dict())
    (ws.root / "report.txt").write_text(ws.header() + "\n" + report.to_text(), encoding="utf-8")
    for method, frame in report_roc_frames(models, splits["test"]).items():
        write_commented_csv(ws.root / f"roc_{method}.csv", frame, ws.header())
    print(report.to_text())
    return ws.root / "report.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Train and compare fairness stitching, last-layer fine-tuning and an ERM baseline",
        epilog="Defaults for every config key live in src/config.toml; keys left out of --config fall back to them.",
    )
    parser.add_argument("--config", "-c", type=str, help="Path to a TOML or JSON config file")
    parser.add_argument("--out", "-o", type=str, help="Output directory (overrides output.dir)")
    parser.add_argument("--jobs", "-j", type=int, default=1, help="Worker processes for seed sweeps")
    parser.add_argument("--seed-override", action="append", default=[], metavar="K=V",
                        help="Replace one named seed (init, data or train); repeatable")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen-data", help="Generate or load data and write the splits plus a manifest")
    commands.add_parser("pretrain", help="ERM pretraining of the base network")
    commands.add_parser("tfs", help="Train a stitching layer under the fairness constraint")
    commands.add_parser("fdr", help="Fine-tune the last block under the fairness constraint")
    evaluate = commands.add_parser("evaluate", help="Metrics and objective of checkpoints on every split")
    evaluate.add_argument("checkpoints", nargs="+", help="Checkpoint JSON files")
    interpolate = commands.add_parser("interpolate", help="Objective along the init-to-trained line")
    interpolate.add_argument("--method", choices=["tfs", "fdr"], default="tfs")
    commands.add_parser("report", help="Compare baseline, fdr and tfs on train, balanced and test")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        overrides = dict(parse_seed_override(text) for text in args.seed_override)
        if args.out:
            overrides["output.dir"] = args.out
        config = load_config(args.config, overrides)
        manager = create_method_manager()

        if args.command == "gen-data":
            cmd_gen_data(config)
        elif args.command == "pretrain":
            cmd_pretrain(config, manager)
        elif args.command in ("tfs", "fdr"):
            cmd_finetune(config, args.command, manager, args.jobs)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.checkpoints)
        elif args.command == "interpolate":
            cmd_interpolate(config, args.method)
        elif args.command == "report":
            cmd_report(config)
        if args.command in ("pretrain", "tfs", "fdr"):
            manager.print_stats()
    except FairStitchError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 5
    print("Done!")
    return 0


if __name__ == "__main__":
    sys.exit(main())
