"""Command-line entry point: ``rul-forge <subcommand>``.

Stages are file-mediated. ``preprocess`` writes the fitted pipeline and the
train/val/test window batches into ``--out-dir``; ``train``, ``evaluate``,
``ablate`` and ``baselines`` read them back from there.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import cmapss_io, gradcheck, metrics
from .cmapss_io import DataError
from .model import VARIANT_LABELS, VARIANTS, Checkpoint, ConfigError, ModelConfig
from .preprocessing import MULTI, SINGLE, FittedPipeline, ForestConfig, WindowBatch, prepare
from .synthetic import FleetSpec, generate_fleet
from .training import NumericalError, TrainConfig, default_workers, train

logger = logging.getLogger("rul_forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SYNTHETIC_NAME = "SYN"
DEFAULT_BLOCK_SWEEP = (2, 4, 6, 8, 10)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    dataset: str
    synthetic: Optional[Path]
    data_dir: Path
    out_dir: Path
    variant: str = "biclstm"
    blocks: int = 4
    hidden: int = 64
    proj: int = 64
    corrector_hidden: int = 32
    lr: float = 1e-3
    batch: int = 256
    patience: int = 10
    max_epochs: int = 100
    seed: int = 42
    formats: tuple = ("json", "csv")
    sweep: tuple = DEFAULT_BLOCK_SWEEP

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        synthetic = Path(args.synthetic).resolve() if getattr(args, "synthetic", None) else None
        if synthetic is not None:
            dataset = SYNTHETIC_NAME
        elif args.subset:
            dataset = args.subset.upper()
            try:
                cmapss_io.subset_meta(dataset)
            except KeyError as exc:
                raise UsageError(str(exc.args[0])) from None
        elif args.command == "gradcheck":
            dataset = "none"
        else:
            raise UsageError("give --subset FD00x or --synthetic spec.json")
        fmt = args.format
        return cls(
            subcommand=args.command,
            dataset=dataset,
            synthetic=synthetic,
            data_dir=Path(args.data_dir).resolve(),
            out_dir=Path(args.out_dir).resolve(),
            variant=args.variant,
            blocks=args.blocks,
            hidden=args.hidden,
            proj=args.proj,
            corrector_hidden=args.corrector_hidden,
            lr=args.lr,
            batch=args.batch,
            patience=args.patience,
            max_epochs=args.max_epochs,
            seed=args.seed,
            formats=("json", "csv") if fmt == "all" else (fmt,),
            sweep=tuple(args.sweep) if getattr(args, "sweep", None) else DEFAULT_BLOCK_SWEEP,
        )

    def model_config(self, input_dim: int, variant: Optional[str] = None, blocks: Optional[int] = None, seed: Optional[int] = None) -> ModelConfig:
        return ModelConfig.for_variant(
            variant or self.variant,
            input_dim,
            projection_dim=self.proj,
            hidden_dim=self.hidden,
            num_blocks=blocks or self.blocks,
            corrector_hidden_dim=self.corrector_hidden,
            seed=self.seed if seed is None else seed,
        )

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            batch_size=self.batch,
            max_epochs=self.max_epochs,
            early_stop_patience=self.patience,
            seed=self.seed if seed is None else seed,
            workers=default_workers(),
        )

    def path(self, suffix: str) -> Path:
        return self.out_dir / f"{self.dataset}_{suffix}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_raw(cfg: RunConfig):
    if cfg.synthetic is not None:
        if not cfg.synthetic.exists():
            raise FileNotFoundError(f"missing synthetic spec: {cfg.synthetic}")
        spec = FleetSpec.from_json(cfg.synthetic.read_text())
        data_dir = cfg.out_dir / "data"
        generate_fleet(spec).write(data_dir, SYNTHETIC_NAME)
        train_t, test_t, offsets = cmapss_io.load_subset(data_dir, SYNTHETIC_NAME)
        return train_t, test_t, offsets, (MULTI if spec.n_regimes > 1 else SINGLE)
    train_t, test_t, offsets = cmapss_io.load_subset(cfg.data_dir, cfg.dataset)
    cmapss_io.check_against_meta(cfg.dataset, train_t, test_t)
    return train_t, test_t, offsets, None


def cmd_preprocess(cfg: RunConfig) -> dict:
    """fit the pipeline and write train/val/test window batches"""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    train_t, test_t, offsets, mode = _load_raw(cfg)
    prepared = prepare(
        train_t, test_t, offsets, subset=cfg.dataset, mode=mode, seed=cfg.seed,
        forest=ForestConfig(n_jobs=default_workers()),
    )  # fmt: skip
    cfg.path("pipeline.json").write_text(prepared.pipeline.to_json())
    for split in ("train", "val", "test"):
        getattr(prepared, split).save(cfg.path(f"{split}.rulw"))
    p = prepared.pipeline
    print(f"{cfg.dataset}: mode={p.mode} retained={len(p.selection.retained)} F={p.n_features}")
    print(f"windows: train={len(prepared.train)} val={len(prepared.val)} test={len(prepared.test)}")
    return {"pipeline": prepared.pipeline, "train": prepared.train, "val": prepared.val, "test": prepared.test}


def _load_batches(cfg: RunConfig, splits=("train", "val", "test")):
    out = {}
    for split in splits:
        path = cfg.path(f"{split}.rulw")
        if not path.exists():
            raise FileNotFoundError(f"missing {path.name}; run `rul-forge preprocess` first")
        out[split] = WindowBatch.load(path)
    return out


def _pipeline_digest(cfg: RunConfig) -> str:
    path = cfg.path("pipeline.json")
    return metrics.config_digest(FittedPipeline.from_json(path.read_text()).to_dict()) if path.exists() else ""


def _fit(cfg: RunConfig, batches, variant: str, blocks: Optional[int] = None, seed: Optional[int] = None):
    F = batches["train"].inputs.shape[2]
    model_cfg = cfg.model_config(F, variant, blocks, seed)
    train_cfg = cfg.train_config(seed)
    b_tr, b_va = batches["train"], batches["val"]
    logger.info("training %s (%d blocks) on %d windows", variant, model_cfg.num_blocks, len(b_tr))
    return train(model_cfg, b_tr.inputs, b_tr.labels, b_va.inputs, b_va.labels, train_cfg)


def _report_config(cfg: RunConfig, checkpoint: Checkpoint, pipeline_digest: str) -> dict:
    return {
        "dataset": cfg.dataset,
        "model": asdict(checkpoint.config),
        "train": checkpoint.metadata.get("train_config", {}),
        "best_epoch": checkpoint.metadata.get("best_epoch"),
        "pipeline_digest": pipeline_digest,
    }


def cmd_train(cfg: RunConfig):
    """train one variant with early stopping"""
    batches = _load_batches(cfg, ("train", "val"))
    result = _fit(cfg, batches, cfg.variant)
    result.checkpoint.save(cfg.path(f"{cfg.variant}_checkpoint.json"))
    cfg.path(f"{cfg.variant}_history.csv").write_text(result.history_csv())
    print(
        f"{VARIANT_LABELS[cfg.variant]}: best epoch {result.best_epoch} "
        f"val RMSE {result.checkpoint.metadata.get('best_val_rmse', float('nan')):.3f} "
        f"after {len(result.history)} epochs"
    )
    return result


def cmd_evaluate(cfg: RunConfig):
    """score a trained checkpoint on the test windows"""
    ckpt_path = cfg.path(f"{cfg.variant}_checkpoint.json")
    if not ckpt_path.exists():
        raise FileNotFoundError(f"missing {ckpt_path.name}; run `rul-forge train` first")
    checkpoint = Checkpoint.load(ckpt_path)
    test = _load_batches(cfg, ("test",))["test"]
    report = metrics.evaluate_windows(checkpoint, test, cfg.dataset, _report_config(cfg, checkpoint, _pipeline_digest(cfg)))
    metrics.emit_report(report, cfg.out_dir, cfg.formats)
    print(f"{cfg.dataset} {VARIANT_LABELS[report.variant]}: RMSE {report.rmse:.4f} MAE {report.mae_cycles:.4f} "
          f"(normalised {report.mae_normalized:.4f}) R2 {report.r2:.4f}")  # fmt: skip
    return report


def cmd_ablate(cfg: RunConfig):
    """test RMSE as a function of the number of blocks"""
    batches = _load_batches(cfg)
    digest = _pipeline_digest(cfg)
    lines = ["dataset,blocks,seed,rmse"]
    rows = []
    for blocks in cfg.sweep:
        seed = cfg.seed + blocks
        result = _fit(cfg, batches, cfg.variant, blocks=blocks, seed=seed)
        report = metrics.evaluate_windows(result.checkpoint, batches["test"], cfg.dataset,
                                          _report_config(cfg, result.checkpoint, digest))  # fmt: skip
        rows.append((blocks, seed, report.rmse))
        lines.append(f"{cfg.dataset},{blocks},{seed},{report.rmse:.17g}")
        print(f"{cfg.dataset} blocks={blocks:2d} seed={seed} RMSE {report.rmse:.4f}")
    cfg.path("ablation.csv").write_text("\n".join(lines) + "\n")
    return rows


def cmd_baselines(cfg: RunConfig):
    """train and score all four variants"""
    batches = _load_batches(cfg)
    digest = _pipeline_digest(cfg)
    lines = ["variant,rmse,mae_cycles,mae_normalized,r2"]
    reports = {}
    for variant in VARIANTS:
        result = _fit(cfg, batches, variant)
        report = metrics.evaluate_windows(result.checkpoint, batches["test"], cfg.dataset,
                                          _report_config(cfg, result.checkpoint, digest))  # fmt: skip
        metrics.emit_report(report, cfg.out_dir, cfg.formats)
        reports[variant] = report
        lines.append(
            f"{VARIANT_LABELS[variant]},{report.rmse:.17g},{report.mae_cycles:.17g},"
            f"{report.mae_normalized:.17g},{report.r2:.17g}"
        )
        print(f"{VARIANT_LABELS[variant]:9s} RMSE {report.rmse:8.4f} MAE {report.mae_cycles:8.4f} "
              f"MAE(norm) {report.mae_normalized:.4f} R2 {report.r2:.4f}")  # fmt: skip
    cfg.path("baselines.csv").write_text("\n".join(lines) + "\n")
    return reports


def cmd_gradcheck(cfg: RunConfig) -> gradcheck.GradcheckReport:
    """finite-difference check of every parameter gradient"""
    config = ModelConfig.for_variant(
        cfg.variant, 8, projection_dim=8, hidden_dim=cfg.hidden, num_blocks=cfg.blocks,
        corrector_hidden_dim=8, seed=cfg.seed,
    )  # fmt: skip
    report = gradcheck.check_model(config, window=6, batch=2, seed=cfg.seed)
    for line in report.lines():
        print(line)
    return report


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "baselines": cmd_baselines,
    "gradcheck": cmd_gradcheck,
}


def _common_flags() -> argparse.ArgumentParser:
    # built per subcommand: argparse parents share Action objects, so a
    # set_defaults on one subparser would otherwise leak into the others
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--subset", help="C-MAPSS subset id, FD001..FD004")
    src.add_argument("--synthetic", metavar="SPEC_JSON", help="synthetic fleet spec instead of a real subset")
    common.add_argument("--data-dir", default="data", help="directory holding train_/test_/RUL_ files")
    common.add_argument("--out-dir", default="runs", help="where pipelines, batches and reports go")
    common.add_argument("--variant", choices=sorted(VARIANTS), default="biclstm")
    common.add_argument("--blocks", type=int, default=4)
    common.add_argument("--hidden", type=int, default=64)
    common.add_argument("--proj", type=int, default=64)
    common.add_argument("--corrector-hidden", type=int, default=32)
    common.add_argument("--lr", type=float, default=1e-3)
    common.add_argument("--batch", type=int, default=256)
    common.add_argument("--patience", type=int, default=10)
    common.add_argument("--max-epochs", type=int, default=100)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--format", choices=("json", "csv", "all"), default="all")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rul-forge", description="Bi-cLSTM remaining-useful-life pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[_common_flags()], help=(COMMANDS[name].__doc__ or name))
        if name == "ablate":
            p.add_argument("--sweep", type=int, nargs="+", help="block counts (default 2 4 6 8 10)")
        if name == "gradcheck":
            p.set_defaults(blocks=2, hidden=8)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.from_args(args)
        result = COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command == "gradcheck" and not result.passed:
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
