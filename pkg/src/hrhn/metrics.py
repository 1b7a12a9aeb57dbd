"""RMSE / MAE / MAPE for one-step-ahead predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    rmse: float
    mae: float
    mape: float | None  # fraction, not percent; None when any target is zero
    rmse_per_dim: list[float]
    mae_per_dim: list[float]
    mape_per_dim: list[float] | None
    n: int
    d: int

    @property
    def mape_defined(self) -> bool:
        return self.mape is not None

    @property
    def mape_percent(self) -> float | None:
        return None if self.mape is None else 100.0 * self.mape

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mape_defined"] = self.mape_defined
        out["mape_percent"] = self.mape_percent
        return out


def compute_metrics(predictions, targets) -> MetricsReport:
    """RMSE is per-dimension RMSE averaged over dimensions; MAE and MAPE average over samples and dimensions."""
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    if pred.shape != tgt.shape:
        raise ValueError(f"predictions {pred.shape} and targets {tgt.shape} differ")
    if pred.shape[0] < 1:
        raise ValueError("need at least one sample")
    err = pred - tgt
    rmse_d = np.sqrt(np.mean(err * err, axis=0))
    mae_d = np.mean(np.abs(err), axis=0)
    if np.any(tgt == 0):
        mape_d = None
    else:
        mape_d = np.mean(np.abs(err / tgt), axis=0)
    return MetricsReport(
        rmse=float(rmse_d.mean()),
        mae=float(mae_d.mean()),
        mape=None if mape_d is None else float(mape_d.mean()),
        rmse_per_dim=rmse_d.tolist(),
        mae_per_dim=mae_d.tolist(),
        mape_per_dim=None if mape_d is None else mape_d.tolist(),
        n=int(pred.shape[0]),
        d=int(pred.shape[1]),
    )
