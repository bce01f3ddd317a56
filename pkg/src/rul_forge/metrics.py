"""Regression metrics, the per-test-unit evaluation, and report files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .model import VARIANT_LABELS, Checkpoint
from .preprocessing import RUL_CAP, FittedPipeline, WindowBatch, build_windows, transform
from .cmapss_io import DataError


def _pair(true, pred):
    t = np.asarray(true, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise ValueError("metrics need at least one value")
    return t, p


def rmse(true, pred) -> float:
    t, p = _pair(true, pred)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def mae(true, pred) -> float:
    t, p = _pair(true, pred)
    return float(np.mean(np.abs(t - p)))


def r2(true, pred) -> float:
    t, p = _pair(true, pred)
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("r2 is undefined when the true values have zero variance")
    return 1.0 - float(np.sum((t - p) ** 2)) / sst


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class EvaluationReport:
    subset: str
    variant: str
    rmse: float
    mae_cycles: float
    mae_normalized: float
    r2: float
    unit_ids: List[int]
    true_rul: List[float]
    pred_rul: List[float]
    config: dict = field(default_factory=dict)
    config_digest: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "variant": self.variant,
            "variant_label": VARIANT_LABELS.get(self.variant, self.variant),
            "rmse": self.rmse,
            "mae_cycles": self.mae_cycles,
            "mae_normalized": self.mae_normalized,
            "r2": self.r2,
            "n_units": len(self.unit_ids),
            "seed": self.seed,
            "config_digest": self.config_digest,
            "config": self.config,
            "per_unit": [
                {"unit_id": u, "true_rul": t, "pred_rul": p}
                for u, t, p in zip(self.unit_ids, self.true_rul, self.pred_rul)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        per = d["per_unit"]
        return cls(
            d["subset"], d["variant"], d["rmse"], d["mae_cycles"], d["mae_normalized"], d["r2"],
            [r["unit_id"] for r in per], [r["true_rul"] for r in per], [r["pred_rul"] for r in per],
            d.get("config", {}), d.get("config_digest", ""), d.get("seed", 0),
        )  # fmt: skip


def report_from_predictions(subset, variant, unit_ids, true_rul, pred_rul, config=None, seed=0) -> EvaluationReport:
    t, p = _pair(true_rul, pred_rul)
    config = config or {}
    return EvaluationReport(
        subset=subset,
        variant=variant,
        rmse=rmse(t, p),
        mae_cycles=mae(t, p),
        mae_normalized=mae(t / RUL_CAP, p / RUL_CAP),
        r2=r2(t, p),
        unit_ids=[int(u) for u in unit_ids],
        true_rul=[float(v) for v in t],
        pred_rul=[float(v) for v in p],
        config=config,
        config_digest=config_digest(config),
        seed=int(seed),
    )


def evaluate_windows(checkpoint: Checkpoint, test: WindowBatch, subset: str, config: Optional[dict] = None) -> EvaluationReport:
    """Score one last-window-per-unit batch against its capped terminal RUL."""
    from .training import predict_batch

    if len(np.unique(test.unit_ids)) != len(test):
        raise DataError("test batch must hold exactly one window per unit")
    pred = predict_batch(checkpoint, test.inputs)
    config = dict(config or {})
    config.setdefault("model", asdict(checkpoint.config))
    return report_from_predictions(
        subset, checkpoint.config.variant, test.unit_ids, test.labels_cycles, pred, config, checkpoint.seed
    )


def evaluate_test(
    checkpoint: Checkpoint,
    pipeline: FittedPipeline,
    test_trajectories,
    rul_offsets: Sequence[int],
    config: Optional[dict] = None,
) -> EvaluationReport:
    if len(test_trajectories) != len(rul_offsets):
        raise DataError(f"{len(rul_offsets)} RUL offsets for {len(test_trajectories)} test units")
    units = [transform(pipeline, t, o) for t, o in zip(test_trajectories, rul_offsets)]
    batch = build_windows(pipeline, units, "test")
    config = dict(config or {})
    config.setdefault("pipeline_digest", config_digest(pipeline.to_dict()))
    return evaluate_windows(checkpoint, batch, pipeline.subset, config)


def report_paths(out_dir, subset: str, variant: str) -> Dict[str, Path]:
    base = Path(out_dir)
    stem = f"{subset}_{variant}"
    return {
        "json": base / f"{stem}_report.json",
        "csv": base / f"{stem}_predictions.csv",
        "fig2": base / f"{stem}_fig2_series.csv",
    }


def _csv(rows) -> str:
    lines = ["unit_id,true_rul,pred_rul"]
    lines += [f"{u},{t:.17g},{p:.17g}" for u, t, p in rows]
    return "\n".join(lines) + "\n"


def emit_report(report: EvaluationReport, out_dir, formats: Sequence[str] = ("json", "csv")) -> Dict[str, Path]:
    """Write the JSON report and/or the predictions and true-vs-predicted series CSVs."""
    paths = report_paths(out_dir, report.subset, report.variant)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    written = {}
    rows = list(zip(report.unit_ids, report.true_rul, report.pred_rul))
    if "json" in formats:
        paths["json"].write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        written["json"] = paths["json"]
    if "csv" in formats:
        paths["csv"].write_text(_csv(rows))
        # stable sort: ties keep unit order
        series = sorted(rows, key=lambda r: -r[1])
        paths["fig2"].write_text(_csv(series))
        written["csv"] = paths["csv"]
        written["fig2"] = paths["fig2"]
    return written


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text()))
