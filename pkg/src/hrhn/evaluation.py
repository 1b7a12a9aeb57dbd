"""Ablation tables and parameter-sensitivity sweeps, reported as medians over seeds."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import SeriesDataset, denormalize, make_windows, normalize
from .metrics import MetricsReport, compute_metrics
from .model import (
    HRHN,
    RHN,
    RHN_CONV,
    RHN_HA,
    ModelConfig,
    TrainConfig,
    TrainResult,
    VariantConfig,
    init_params,
    predict,
    train,
)

log = logging.getLogger(__name__)

DEFAULT_T_GRID = (4, 6, 8, 10, 12, 14)
DEFAULT_K_GRID = (1, 2, 3, 4, 5)


def ablation_variants(K: int) -> dict[str, VariantConfig]:
    """The four core variants plus one single-layer row per non-top depth."""
    out = {"RHN": RHN, "RHN + ConvNet": RHN_CONV, "RHN + HA": RHN_HA, "HRHN": HRHN}
    for k in range(1, K):
        out[f"RHN-attn{k}"] = VariantConfig(False, "single_layer", k)
    return out


@dataclass
class RunOutcome:
    result: TrainResult
    metrics: MetricsReport
    predictions: np.ndarray  # raw scale
    targets: np.ndarray
    seconds: float


def fit_and_evaluate(
    dataset: SeriesDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    variant: VariantConfig,
    seed: int,
    split: str = "test",
    use_normalization: bool = True,
) -> RunOutcome:
    """Train one model on the train split and score ``split`` on the raw scale."""
    start = time.perf_counter()
    if use_normalization:
        norm, stats = normalize(dataset)
        denorm = lambda a: denormalize(a, stats)  # noqa: E731
    else:
        norm, denorm = dataset, None
    T = model_config.T
    tr = make_windows(norm, T, "train")
    va = make_windows(norm, T, "validation") if norm.split_range("validation")[1] - norm.split_range("validation")[0] >= T else None
    te = make_windows(norm, T, split)
    params = init_params(model_config, variant, seed=seed)
    result = train(tr, va, params, replace(train_config, seed=seed), variant, denormalize=denorm)
    pred = predict(te, result.params, variant)
    tgt = te.target
    if denorm is not None:
        pred, tgt = denorm(pred), denorm(tgt)
    return RunOutcome(result, compute_metrics(pred, tgt), pred, tgt, time.perf_counter() - start)


def _median(values):
    values = [v for v in values if v is not None]
    return float(np.median(values)) if values else None


@dataclass
class AblationRow:
    name: str
    variant: VariantConfig
    runs: list[dict] = field(default_factory=list)  # per seed: seed + metrics, or seed + error
    errors: list[str] = field(default_factory=list)

    def median(self, key: str):
        return _median([r[key] for r in self.runs if "error" not in r])

    def to_dict(self) -> dict:
        mape = self.median("mape")
        return {
            "variant": self.name,
            "use_conv_frontend": self.variant.use_conv_frontend,
            "attention": self.variant.mode_string,
            "rmse": self.median("rmse"),
            "mae": self.median("mae"),
            "mape": mape,
            "mape_percent": None if mape is None else 100.0 * mape,
            "runs": self.runs,
            "errors": self.errors,
        }


def run_ablation(
    dataset: SeriesDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds,
    variants: dict[str, VariantConfig] | None = None,
) -> list[AblationRow]:
    """Train every variant with identical data, seeds and budget; failures are recorded, not raised."""
    variants = variants or ablation_variants(model_config.K)
    rows = []
    for name, variant in variants.items():
        row = AblationRow(name, variant)
        for seed in seeds:
            try:
                out = fit_and_evaluate(dataset, model_config, train_config, variant, seed)
            except Exception as exc:  # one failed run must not sink the table
                log.exception("variant %s seed %s failed", name, seed)
                row.runs.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                row.errors.append(f"seed {seed}: {exc}")
                continue
            m = out.metrics
            row.runs.append(
                {"seed": seed, "rmse": m.rmse, "mae": m.mae, "mape": m.mape, "steps": out.result.steps,
                 "best_epoch": out.result.best_epoch, "seconds": out.seconds}
            )
            log.info("%s seed %s: rmse %.5f", name, seed, m.rmse)
        rows.append(row)
    return rows


@dataclass
class SweepResult:
    axis: str
    values: list[int]
    median_rmse: list[float | None]
    runs: list[list[dict]]

    def series(self) -> list[tuple[int, float | None]]:
        return list(zip(self.values, self.median_rmse))

    def to_dict(self) -> dict:
        return {"axis": self.axis, "values": self.values, "median_rmse": self.median_rmse, "runs": self.runs}


def run_sweep(
    axis: str,
    values,
    dataset: SeriesDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds,
    variant: VariantConfig = HRHN,
) -> SweepResult:
    """Vary T or K with everything else fixed; one failed point does not stop the sweep."""
    if axis not in ("T", "K"):
        raise ValueError(f"sweep axis must be 'T' or 'K', got {axis!r}")
    values = [int(v) for v in values]
    if not values:
        raise ValueError("sweep grid is empty")
    if values != sorted(values):
        raise ValueError(f"sweep values must be ascending, got {values}")
    medians, runs = [], []
    for value in values:
        cfg = replace(model_config, **{axis: value})
        point = []
        for seed in seeds:
            try:
                out = fit_and_evaluate(dataset, cfg, train_config, variant, seed)
                point.append({"seed": seed, "rmse": out.metrics.rmse, "mae": out.metrics.mae})
            except Exception as exc:
                log.exception("sweep %s=%s seed %s failed", axis, value, seed)
                point.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
        runs.append(point)
        medians.append(_median([r.get("rmse") for r in point]))
    return SweepResult(axis, values, medians, runs)


# ---------------------------------------------------------------- writers


def write_ablation(rows: list[AblationRow], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = [r.to_dict() for r in rows]
    json_path = out_dir / "ablation.json"
    json_path.write_text(json.dumps(table, indent=2))
    csv_path = out_dir / "ablation.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "use_conv_frontend", "attention", "rmse", "mae", "mape", "mape_percent", "n_runs", "n_errors"])
        for r in table:
            w.writerow([r["variant"], r["use_conv_frontend"], r["attention"], r["rmse"], r["mae"], r["mape"],
                        r["mape_percent"], len(r["runs"]), len(r["errors"])])
    return csv_path, json_path


def write_sweep(result: SweepResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"sweep_{result.axis}.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([result.axis, "median_rmse"])
        for x, y in result.series():
            w.writerow([x, "" if y is None else y])
    json_path = out_dir / f"sweep_{result.axis}.json"
    json_path.write_text(json.dumps(result.to_dict(), indent=2))
    return csv_path, json_path
