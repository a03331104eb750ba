"""Metrics, the cubic-interpolation baseline, and comparison harnesses.

MAE and RMSE score per velocity component then average; R-squared follows
the magnitude-scatter convention (predicted vs true speeds). The cubic
baseline interpolates each component with a C1 Clough-Tocher element over
the Delaunay triangulation of the retained nodes, falling back to nearest
neighbor outside the convex hull (and everywhere when the retained set is
degenerate). run_ablation reproduces the two ablation grids on one shared
dataset and seed; evaluate_methods compares a trained model against the
baseline with per-size-class aggregates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CloughTocher2DInterpolator, NearestNDInterpolator
from scipy.spatial import QhullError

from .featprop import propagate_features
from .model import GacnModel, gacn_forward
from .sparsify import SparseSample
from .training import TrainConfig, TrainingDivergedError, train


class CubicFallbackWarning(RuntimeWarning):
    """Emitted when the cubic baseline degrades to nearest-neighbor."""


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Error summary of one reconstruction on one snapshot."""

    mae: float                      # m/s
    rmse: float                     # m/s
    r2: float                       # dimensionless
    per_node_abs_error: np.ndarray  # (n_eval,) m/s
    n_eval: int
    method: str
    snapshot: str

    def __post_init__(self):
        if not self.mae <= self.rmse + 1e-12:
            raise ValueError(f"mae {self.mae} > rmse {self.rmse}")
        if not self.r2 <= 1.0 + 1e-12:
            raise ValueError(f"r2 {self.r2} > 1")
        if np.any(self.per_node_abs_error < 0):
            raise ValueError("negative per-node error")


def _masked(pred, target, eval_mask):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(eval_mask, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not mask.any():
        raise ValueError("metric over an empty mask")
    return pred[mask], target[mask]


def mae(pred: np.ndarray, target: np.ndarray, eval_mask: np.ndarray) -> float:
    """Mean absolute error per component, averaged over both components."""
    p, t = _masked(pred, target, eval_mask)
    return float(np.mean(np.abs(p - t)))


def rmse(pred: np.ndarray, target: np.ndarray, eval_mask: np.ndarray) -> float:
    """Root of the masked mean squared error (both components)."""
    p, t = _masked(pred, target, eval_mask)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def r2(pred: np.ndarray, target: np.ndarray, eval_mask: np.ndarray) -> float:
    """1 - SS_res/SS_tot over masked velocity magnitudes."""
    p, t = _masked(pred, target, eval_mask)
    mag_p = np.hypot(p[:, 0], p[:, 1])
    mag_t = np.hypot(t[:, 0], t[:, 1])
    ss_tot = float(np.sum((mag_t - mag_t.mean()) ** 2))
    if ss_tot <= 0.0:
        raise ValueError("r2 undefined: zero variance of target magnitudes on mask")
    ss_res = float(np.sum((mag_p - mag_t) ** 2))
    return 1.0 - ss_res / ss_tot


def metrics_report(
    pred: np.ndarray,
    target: np.ndarray,
    eval_mask: np.ndarray,
    method: str,
    snapshot: str,
) -> MetricsReport:
    p, t = _masked(pred, target, eval_mask)
    per_node = 0.5 * np.abs(p - t).sum(axis=1)
    return MetricsReport(
        mae=mae(pred, target, eval_mask),
        rmse=rmse(pred, target, eval_mask),
        r2=r2(pred, target, eval_mask),
        per_node_abs_error=per_node,
        n_eval=int(len(p)),
        method=method,
        snapshot=snapshot,
    )


# ---------------------------------------------------------------------------
# baselines and reconstruction


def cubic_baseline(sample: SparseSample) -> np.ndarray:
    """Interpolate each velocity component from the retained nodes.

    C1 piecewise-cubic (Clough-Tocher) on the Delaunay triangulation of the
    retained nodes, evaluated at every node; outside the convex hull the
    nearest retained node's value is used. Fewer than 3 retained nodes, or a
    collinear retained set, degrades to nearest-neighbor everywhere with a
    CubicFallbackWarning.
    """
    keep = sample.keep_mask
    pts = sample.graph.coords
    known_pts = pts[keep]
    known_vals = sample.target[keep]
    nearest = NearestNDInterpolator(known_pts, known_vals)
    if keep.sum() < 3:
        warnings.warn(
            f"cubic baseline: {int(keep.sum())} retained nodes, using nearest-neighbor",
            CubicFallbackWarning,
        )
        return np.asarray(nearest(pts), dtype=np.float64)
    try:
        ct = CloughTocher2DInterpolator(known_pts, known_vals)
        out = np.asarray(ct(pts), dtype=np.float64)
    except QhullError:
        warnings.warn(
            "cubic baseline: degenerate (collinear) retained set, using nearest-neighbor",
            CubicFallbackWarning,
        )
        return np.asarray(nearest(pts), dtype=np.float64)
    hole = ~np.isfinite(out).all(axis=1)
    if hole.any():
        out[hole] = nearest(pts[hole])
    return out


def reconstruct_sample(model: GacnModel, sample: SparseSample) -> np.ndarray:
    """Full inference for one sample honoring the model's training flags:
    feature propagation when use_fp, then the network forward."""
    propagated = None
    if model.use_fp:
        propagated = propagate_features(
            sample.graph,
            sample.graph.node_features[:, 0:2],
            sample.keep_mask,
            max_iters=model.fp_max_iters,
            tol=model.fp_tol,
        ).values
    return gacn_forward(model, sample, propagated)


# ---------------------------------------------------------------------------
# harnesses


def _size_class(snapshot_tag: str) -> str:
    return "slice" if snapshot_tag.startswith("slice") else "panel"


def _quartiles(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "q1": float(np.quantile(arr, 0.25)),
        "q3": float(np.quantile(arr, 0.75)),
    }


@dataclass(frozen=True, eq=False)
class EvaluationTable:
    """Per-snapshot reports plus mean/median/quartile aggregates keyed by
    method and size class ("panel", "slice", "all")."""

    reports: list[MetricsReport]
    aggregates: dict


def evaluate_methods(
    test_samples: list[SparseSample], model: GacnModel
) -> EvaluationTable:
    """Score the trained model and the cubic baseline on masked test samples.

    Masks come with the samples (seeded upstream), so identical inputs give
    identical tables.
    """
    reports: list[MetricsReport] = []
    for s in test_samples:
        tag = s.graph.domain_tag or "snapshot"
        pred_g = reconstruct_sample(model, s)
        reports.append(metrics_report(pred_g, s.target, s.eval_mask, "gacn", tag))
        pred_c = cubic_baseline(s)
        reports.append(metrics_report(pred_c, s.target, s.eval_mask, "cubic", tag))

    aggregates: dict = {}
    for method in ("gacn", "cubic"):
        aggregates[method] = {}
        rows = [r for r in reports if r.method == method]
        for cls in ("panel", "slice", "all"):
            sel = [r for r in rows if cls == "all" or _size_class(r.snapshot) == cls]
            if not sel:
                continue
            aggregates[method][cls] = {
                "mae": _quartiles([r.mae for r in sel]),
                "rmse": _quartiles([r.rmse for r in sel]),
                "r2": _quartiles([r.r2 for r in sel]),
                "n_snapshots": len(sel),
            }
    return EvaluationTable(reports=reports, aggregates=aggregates)


ABLATION_GRID = (
    # label, layer_kind, use_fp, use_bi
    ("none", "attention", False, False),
    ("fp_only", "attention", True, False),
    ("fp_bi", "attention", True, True),
    ("gcn", "gcn", True, True),
    ("mean_aggregator", "mean_aggregator", True, True),
)


@dataclass(frozen=True, eq=False)
class AblationRow:
    label: str
    layer_kind: str
    use_fp: bool
    use_bi: bool
    status: str                 # "ok" or "failed"
    mae: float                  # mean over test snapshots (nan when failed)
    rmse: float
    r2: float


@dataclass(frozen=True, eq=False)
class ReconstructionDataset:
    """Prepared sample bundle: a training pool (train() splits validation
    out of it internally) and a held-out test list."""

    pool: list[SparseSample]
    test: list[SparseSample]


def run_ablation(
    dataset: ReconstructionDataset,
    base_config: TrainConfig,
    widths: tuple[int, ...] | None = None,
    fp_max_iters: int = 40,
    fp_tol: float = 1e-6,
) -> list[AblationRow]:
    """Train and score the five-variant grid with one config and seed.

    Rows: {no-FP/no-BI, FP-only, FP+BI} with attention layers, then
    {gcn, mean_aggregator} at FP+BI. A diverging run yields a row with
    status "failed" and NaN metrics; the harness continues.
    """
    rows: list[AblationRow] = []
    for label, kind, use_fp, use_bi in ABLATION_GRID:
        try:
            model, _ = train(
                dataset.pool,
                base_config,
                layer_kind=kind,
                use_fp=use_fp,
                use_bi=use_bi,
                widths=widths,
                fp_max_iters=fp_max_iters,
                fp_tol=fp_tol,
            )
            maes, rmses, r2s = [], [], []
            for s in dataset.test:
                pred = reconstruct_sample(model, s)
                maes.append(mae(pred, s.target, s.eval_mask))
                rmses.append(rmse(pred, s.target, s.eval_mask))
                r2s.append(r2(pred, s.target, s.eval_mask))
            rows.append(
                AblationRow(
                    label=label, layer_kind=kind, use_fp=use_fp, use_bi=use_bi,
                    status="ok",
                    mae=float(np.mean(maes)),
                    rmse=float(np.mean(rmses)),
                    r2=float(np.mean(r2s)),
                )
            )
        except TrainingDivergedError:
            rows.append(
                AblationRow(
                    label=label, layer_kind=kind, use_fp=use_fp, use_bi=use_bi,
                    status="failed", mae=float("nan"), rmse=float("nan"),
                    r2=float("nan"),
                )
            )
    return rows
