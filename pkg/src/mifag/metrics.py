"""Evaluation metrics (AUC, aIOU, SIM, MAE) and report aggregation."""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NUM_THRESHOLDS = 100  # 0.00 .. 0.99 step 0.01


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. one-class AUC)."""


def binarize_gt(labels):
    """Ground-truth positives are the strictly positive labels."""
    return np.asarray(labels) > 0.0


def auc(pred, gt):
    """Area under the ROC curve via trapezoidal integration.

    Sweeps every distinct prediction value as a threshold; equals the
    rank-statistic (pair-counting with ties at 0.5) value.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    pos = gt.sum()
    neg = (~gt).sum()
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC undefined: only one class present")
    order = np.argsort(-pred, kind="stable")
    sorted_pred = pred[order]
    sorted_gt = gt[order]
    tps = np.cumsum(sorted_gt)
    fps = np.cumsum(~sorted_gt)
    # keep only the last point of each tied-prediction run
    distinct = np.r_[sorted_pred[1:] != sorted_pred[:-1], True]
    tpr = np.r_[0.0, tps[distinct] / pos]
    fpr = np.r_[0.0, fps[distinct] / neg]
    return float(np.trapezoid(tpr, fpr))


def aiou(pred, gt):
    """IOU of (pred > t) vs gt, averaged over the 100 thresholds 0.00..0.99.

    At a threshold where both sets are empty the IOU counts as 1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    thresholds = np.arange(NUM_THRESHOLDS) / 100.0
    hard = pred[None, :] > thresholds[:, None]  # (T, N)
    inter = (hard & gt[None, :]).sum(axis=1)
    union = (hard | gt[None, :]).sum(axis=1)
    iou = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(iou.mean())


def sim_metric(pred, gt, max_normalized=False):
    """Histogram intersection of the two maps.

    Both maps are normalized to sum to 1 before taking the pointwise min.
    With max_normalized=True each map is divided by its maximum instead
    (kept for comparison; the result is then not bounded by 1).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    ps, gs = pred.sum(), gt.sum()
    if ps <= 0.0 or gs <= 0.0:
        log.warning("SIM undefined for a zero-sum map; returning 0")
        return 0.0
    if max_normalized:
        return float(np.minimum(pred / pred.max(), gt / gt.max()).sum())
    return float(np.minimum(pred / ps, gt / gs).sum())


def mae(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return float(np.abs(pred - gt).mean())


@dataclass
class SampleMetrics:
    sample_id: str
    affordance: int
    auc: float  # nan when undefined
    aiou: float
    sim: float
    mae: float


@dataclass
class MetricsReport:
    per_sample: list
    per_affordance: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    auc_undefined_count: int = 0
    num_affordances: int = 17

    def to_json_obj(self):
        return {
            "overall": self.overall,
            "auc_undefined_count": self.auc_undefined_count,
            "per_affordance": {str(k): v for k, v in self.per_affordance.items()},
            "per_sample": [
                {"sample_id": s.sample_id, "affordance": s.affordance,
                 "auc": s.auc, "aiou": s.aiou, "sim": s.sim, "mae": s.mae}
                for s in self.per_sample
            ],
        }


def _mean_or_none(values):
    vals = [v for v in values if v is not None and not np.isnan(v)]
    return float(np.mean(vals)) if vals else None


def build_report(samples, num_affordances=17):
    """Aggregate per-sample rows into per-affordance and overall means.

    AUC-undefined samples (nan) are excluded from AUC means only; aIOU is
    reported as a percentage in [0, 100].
    """
    per_affordance = {}
    for a in range(num_affordances):
        rows = [s for s in samples if s.affordance == a]
        per_affordance[a] = {
            "auc": _mean_or_none([s.auc for s in rows]) if rows else None,
            "aiou": _mean_or_none([s.aiou for s in rows]) if rows else None,
            "sim": _mean_or_none([s.sim for s in rows]) if rows else None,
            "mae": _mean_or_none([s.mae for s in rows]) if rows else None,
            "count": len(rows),
        }
    overall = {
        "auc": _mean_or_none([s.auc for s in samples]),
        "aiou": _mean_or_none([s.aiou for s in samples]),
        "sim": _mean_or_none([s.sim for s in samples]),
        "mae": _mean_or_none([s.mae for s in samples]),
        "count": len(samples),
    }
    undefined = sum(1 for s in samples if np.isnan(s.auc))
    return MetricsReport(list(samples), per_affordance, overall, undefined,
                         num_affordances)


def score_sample(sample_id, affordance, pred, labels):
    """Compute all four metrics for one sample (AUC nan when undefined).

    AUC and SIM are fractions in [0, 1]; aIOU is stored as a percentage.
    """
    gt_bin = binarize_gt(labels)
    try:
        auc_val = auc(pred, gt_bin)
    except UndefinedMetricError:
        log.warning("sample %s: AUC undefined (single-class ground truth)",
                    sample_id)
        auc_val = float("nan")
    return SampleMetrics(sample_id, affordance,
                         auc_val,
                         100.0 * aiou(pred, gt_bin),
                         sim_metric(pred, labels),
                         mae(pred, labels))


def write_report_json(path, report):
    with open(path, "w", newline="\n") as f:
        json.dump(report.to_json_obj(), f, indent=2)
        f.write("\n")


def write_report_csv(path, report):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "affordance", "auc", "aiou", "sim", "mae"])
        for s in report.per_sample:
            writer.writerow([s.sample_id, s.affordance,
                             f"{s.auc:.6f}", f"{s.aiou:.6f}",
                             f"{s.sim:.6f}", f"{s.mae:.6f}"])


def format_report_table(report, affordance_names=None):
    """Plain-text table: one row per affordance, columns AUC/aIOU/SIM/MAE."""
    names = affordance_names or [f"affordance_{a:02d}"
                                 for a in range(report.num_affordances)]
    lines = [f"{'Affordance':<16}{'AUC':>9}{'aIOU':>9}{'SIM':>9}{'MAE':>9}{'N':>5}"]
    fmt = lambda v: "     -" if v is None else f"{v:8.3f}"
    for a in range(report.num_affordances):
        row = report.per_affordance[a]
        lines.append(f"{names[a]:<16}"
                     f"{fmt(row['auc']):>9}{fmt(row['aiou']):>9}"
                     f"{fmt(row['sim']):>9}{fmt(row['mae']):>9}"
                     f"{row['count']:>5}")
    o = report.overall
    lines.append(f"{'overall':<16}"
                 f"{fmt(o['auc']):>9}{fmt(o['aiou']):>9}"
                 f"{fmt(o['sim']):>9}{fmt(o['mae']):>9}"
                 f"{o['count']:>5}")
    return "\n".join(lines)
