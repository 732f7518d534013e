"""ROC curves, anchored TPR/FPR lookups, model lift and degradation reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def _check_labels(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")
    return n_pos, n_neg


def roc(scores, labels) -> RocCurve:
    """ROC over every distinct score threshold, from (0, 0) to (1, 1).

    A point at threshold ``s`` classifies ``score >= s`` as positive. Tied
    scores produce a single diagonal step, so the trapezoidal area counts
    ties as half-concordant.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    n_pos, n_neg = _check_labels(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thr, fpr, tpr, auc)


def concordance_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted half (midranks)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    n_pos, n_neg = _check_labels(y)
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """Highest TPR reachable at ``fpr_target``, linear between curve points."""
    if not 0.0 < fpr_target < 1.0:
        raise ValueError("fpr_target must be in (0, 1)")
    f, t = curve.fpr, curve.tpr
    i = int(np.searchsorted(f, fpr_target, side="right")) - 1
    if f[i] == fpr_target or i + 1 >= f.size:
        return float(t[i])
    return float(t[i] + (fpr_target - f[i]) * (t[i + 1] - t[i]) / (f[i + 1] - f[i]))


def fpr_at_tpr(curve: RocCurve, tpr_target: float) -> float:
    """Lowest FPR reaching ``tpr_target``, linear between curve points."""
    if not 0.0 < tpr_target < 1.0:
        raise ValueError("tpr_target must be in (0, 1)")
    f, t = curve.fpr, curve.tpr
    i = int(np.searchsorted(t, tpr_target, side="left"))
    if t[i] == tpr_target or i == 0:
        return float(f[i])
    return float(f[i - 1] + (tpr_target - t[i - 1]) * (f[i] - f[i - 1]) / (t[i] - t[i - 1]))


@dataclass(frozen=True)
class LiftReport:
    fpr_anchor: float
    tpr_anchor: float
    tpr_static: float
    tpr_dynamic: float
    fpr_static: float
    fpr_dynamic: float
    tpr_lift: float | None
    fpr_reduction: float | None
    auc_static: float
    auc_dynamic: float


def compare_scores(static_scores, dynamic_scores, labels, fpr_anchor: float = 0.005,
                   tpr_anchor: float = 0.5) -> LiftReport:
    """Relative TPR gain at a fixed FPR and relative FPR cut at a fixed TPR.

    Either lift is ``None`` when the reference model's value at the anchor is
    zero, so the ratio is undefined.
    """
    rs, rd = roc(static_scores, labels), roc(dynamic_scores, labels)
    ts, td = tpr_at_fpr(rs, fpr_anchor), tpr_at_fpr(rd, fpr_anchor)
    fs, fd = fpr_at_tpr(rs, tpr_anchor), fpr_at_tpr(rd, tpr_anchor)
    return LiftReport(fpr_anchor, tpr_anchor, ts, td, fs, fd,
                      (td - ts) / ts if ts > 0 else None,
                      (fs - fd) / fs if fs > 0 else None,
                      rs.auc, rd.auc)


def compare_models(static_model, dynamic_model, test_slice, fpr_anchor: float = 0.005,
                   tpr_anchor: float = 0.5) -> LiftReport:
    from dynrisk.gbdt import DYNAMIC, STATIC, select_mode

    labels = test_slice["label"].to_numpy()
    s = static_model.predict_proba(select_mode(test_slice, STATIC))
    d = dynamic_model.predict_proba(select_mode(test_slice, DYNAMIC))
    return compare_scores(s, d, labels, fpr_anchor, tpr_anchor)


@dataclass(frozen=True)
class Degradation:
    auc_in_time: float
    auc_offline: float

    @property
    def drop(self) -> float:
        return self.auc_in_time - self.auc_offline


def degradation_study(models: Mapping[str, tuple], in_time_slice, offline_slice) -> dict[str, Degradation]:
    """AUC on the in-time and offline slices for each ``name -> (model, mode)``."""
    from dynrisk.gbdt import select_mode

    if len(in_time_slice) == 0 or len(offline_slice) == 0:
        raise ValueError("degradation study needs non-empty in-time and offline slices")
    out = {}
    for name, (model, mode) in models.items():
        aucs = [roc(model.predict_proba(select_mode(sl, mode)), sl["label"].to_numpy()).auc
                for sl in (in_time_slice, offline_slice)]
        out[name] = Degradation(*aucs)
    return out


def degradation_dict(report: Mapping[str, Degradation]) -> dict:
    return {k: {"auc_in_time": v.auc_in_time, "auc_offline": v.auc_offline, "drop": v.drop}
            for k, v in report.items()}


def lift_dict(report: LiftReport) -> dict:
    return asdict(report)


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for thr, f, t in curve.points():
            w.writerow([repr(thr), repr(f), repr(t)])


def write_summary(path, summary: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
