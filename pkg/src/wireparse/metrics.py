"""Evaluation: structural AP of segments, junction mAP and heatmap F/AP.

All metrics rescale coordinates to ``eval_resolution`` first.  Average
precision is the step sum ``sum_k (r_k - r_{k-1}) * p_k`` over true-positive
ranks of the score-sorted, dataset-pooled predictions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .scene_io import ScoredWireframe, Wireframe


@dataclass(frozen=True)
class MetricConfig:
    sap_thresholds: tuple[float, ...] = (5.0, 10.0, 15.0)
    junc_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0)
    eval_resolution: tuple[int, int] = (128, 128)  # (width, height)
    heatmap_tolerance: float = 1.5
    heatmap_threshold_count: int = 99

    def __post_init__(self):
        for name in ("sap_thresholds", "junc_thresholds"):
            t = tuple(float(v) for v in getattr(self, name))
            if not t or min(t) <= 0 or list(t) != sorted(t):
                raise ValueError(f"{name} must be positive and ascending")
            object.__setattr__(self, name, t)


@dataclass
class PRCurve:
    scores: np.ndarray
    tp: np.ndarray  # cumulative
    fp: np.ndarray  # cumulative
    recall: np.ndarray
    precision: np.ndarray

    def rows(self):
        for s, t, f, r, p in zip(self.scores, self.tp, self.fp, self.recall, self.precision):
            yield float(s), int(t), int(f), float(r), float(p)


@dataclass
class EvalReport:
    sap: dict[float, float]
    msap: float
    mapj: float
    fh: float
    aph: float
    junction_ap: dict[float, float] = field(default_factory=dict)
    pr_curves: dict[str, PRCurve] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sap": {f"{k:g}": v for k, v in self.sap.items()},
            "msap": self.msap,
            "mapj": self.mapj,
            "junction_ap": {f"{k:g}": v for k, v in self.junction_ap.items()},
            "fh": self.fh,
            "aph": self.aph,
            **self.extra,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _scale(spec_w, spec_h, cfg: MetricConfig):
    rw, rh = cfg.eval_resolution
    return np.array([rw / spec_w, rh / spec_h])


def _scaled_lines(wf: Wireframe, cfg: MetricConfig) -> np.ndarray:
    s = _scale(wf.width, wf.height, cfg)
    return wf.lines * np.tile(s, 2)


def _scaled_junctions(wf: Wireframe, cfg: MetricConfig) -> np.ndarray:
    return wf.junctions * _scale(wf.width, wf.height, cfg)


def average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    if n_gt == 0 or len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    precision = tp / np.arange(1, len(tp_flags) + 1)
    return float(precision[tp_flags.astype(bool)].sum() / n_gt)


def _pr_curve(scores, tp_flags, n_gt) -> PRCurve:
    tp = np.cumsum(tp_flags).astype(int)
    fp = np.cumsum(1 - tp_flags).astype(int)
    rank = np.arange(1, len(tp_flags) + 1)
    recall = tp / n_gt if n_gt else np.zeros(len(tp))
    return PRCurve(np.asarray(scores, float), tp, fp, recall, tp / np.maximum(rank, 1))


def _pooled_order(scores_per_image: list[np.ndarray]):
    """Dataset-wide order: score descending, then image index, then insertion order."""
    img = np.concatenate([np.full(len(s), i) for i, s in enumerate(scores_per_image)] or [np.zeros(0)]).astype(int)
    local = np.concatenate([np.arange(len(s)) for s in scores_per_image] or [np.zeros(0)]).astype(int)
    scores = np.concatenate(scores_per_image or [np.zeros(0)]).astype(float)
    order = np.lexsort((local, img, -scores))
    return img[order], local[order], scores[order]


def _greedy_tp(dist_per_image, scores_per_image, threshold):
    """TP flags for pooled predictions; each claims its nearest unclaimed GT within threshold."""
    img, local, scores = _pooled_order(scores_per_image)
    claimed = [np.zeros(d.shape[1], dtype=bool) for d in dist_per_image]
    flags = np.zeros(len(img))
    for k, (i, j) in enumerate(zip(img, local)):
        d = dist_per_image[i][j]
        ok = (d <= threshold) & ~claimed[i]
        if ok.any():
            g = np.flatnonzero(ok)[np.argmin(d[ok])]
            claimed[i][g] = True
            flags[k] = 1
    return flags, scores


def _line_dist(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Overlap measure of a prediction and GT: min over pairings of summed squared endpoint distances."""
    p = pred[:, None, :]
    g = gt[None, :, :]
    direct = ((p[..., :2] - g[..., :2]) ** 2).sum(-1) + ((p[..., 2:] - g[..., 2:]) ** 2).sum(-1)
    cross = ((p[..., :2] - g[..., 2:]) ** 2).sum(-1) + ((p[..., 2:] - g[..., :2]) ** 2).sum(-1)
    return np.minimum(direct, cross)


def _check_lists(predictions, gts):
    if len(predictions) != len(gts):
        raise ValueError(f"{len(predictions)} predictions for {len(gts)} ground truths")


def sap(predictions: list[ScoredWireframe], gts: list[Wireframe], threshold: float,
        cfg: MetricConfig | None = None) -> tuple[float, PRCurve]:
    cfg = cfg or MetricConfig()
    _check_lists(predictions, gts)
    dists, scores = [], []
    n_gt = 0
    for pred, gt in zip(predictions, gts):
        pl, gl = _scaled_lines(pred, cfg), _scaled_lines(gt, cfg)
        dists.append(_line_dist(pl, gl))
        scores.append(pred.segment_scores)
        n_gt += len(gl)
    flags, s = _greedy_tp(dists, scores, threshold)
    return average_precision(flags, n_gt), _pr_curve(s, flags, n_gt)


def msap(predictions, gts, cfg: MetricConfig | None = None) -> float:
    cfg = cfg or MetricConfig()
    return float(np.mean([sap(predictions, gts, t, cfg)[0] for t in cfg.sap_thresholds]))


def junction_ap(predictions, gts, threshold: float, cfg: MetricConfig | None = None) -> tuple[float, PRCurve]:
    cfg = cfg or MetricConfig()
    _check_lists(predictions, gts)
    dists, scores = [], []
    n_gt = 0
    for pred, gt in zip(predictions, gts):
        pj, gj = _scaled_junctions(pred, cfg), _scaled_junctions(gt, cfg)
        dists.append(np.hypot(pj[:, None, 0] - gj[None, :, 0], pj[:, None, 1] - gj[None, :, 1]))
        scores.append(pred.junction_scores)
        n_gt += len(gj)
    flags, s = _greedy_tp(dists, scores, threshold)
    return average_precision(flags, n_gt), _pr_curve(s, flags, n_gt)


def mapj(predictions, gts, cfg: MetricConfig | None = None) -> float:
    cfg = cfg or MetricConfig()
    return float(np.mean([junction_ap(predictions, gts, t, cfg)[0] for t in cfg.junc_thresholds]))


def rasterize(lines: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Integer pixels (x, y) covered by the segments, one DDA step per pixel, deduplicated."""
    W, H = resolution
    lines = np.asarray(lines, float).reshape(-1, 4)
    pts = []
    for x1, y1, x2, y2 in lines:
        n = int(np.ceil(max(abs(x2 - x1), abs(y2 - y1)))) + 1
        t = np.linspace(0.0, 1.0, n)
        xs = np.rint(x1 + t * (x2 - x1)).astype(int)
        ys = np.rint(y1 + t * (y2 - y1)).astype(int)
        pts.append(np.stack([xs, ys], axis=-1))
    if not pts:
        return np.zeros((0, 2), dtype=int)
    p = np.concatenate(pts)
    p = p[(p[:, 0] >= 0) & (p[:, 0] < W) & (p[:, 1] >= 0) & (p[:, 1] < H)]
    return np.unique(p, axis=0)


def match_pixels(pred: np.ndarray, gt: np.ndarray, tolerance: float) -> int:
    """One-to-one greedy matching in ascending distance; returns the number of matches."""
    if len(pred) == 0 or len(gt) == 0:
        return 0
    sdm = cKDTree(pred).sparse_distance_matrix(cKDTree(gt), tolerance, output_type="ndarray")
    if len(sdm) == 0:
        return 0
    order = np.lexsort((sdm["j"], sdm["i"], sdm["v"]))
    used_p = np.zeros(len(pred), dtype=bool)
    used_g = np.zeros(len(gt), dtype=bool)
    count = 0
    for i, j in zip(sdm["i"][order], sdm["j"][order]):
        if not used_p[i] and not used_g[j]:
            used_p[i] = used_g[j] = True
            count += 1
    return count


def heatmap_metrics(predictions, gts, cfg: MetricConfig | None = None) -> tuple[float, float, PRCurve]:
    cfg = cfg or MetricConfig()
    _check_lists(predictions, gts)
    res = cfg.eval_resolution
    thresholds = np.arange(1, cfg.heatmap_threshold_count + 1) / (cfg.heatmap_threshold_count + 1)
    gt_pix = [rasterize(_scaled_lines(g, cfg), res) for g in gts]
    n_gt = sum(len(g) for g in gt_pix)
    pred_lines = [_scaled_lines(p, cfg) for p in predictions]
    precision = np.zeros(len(thresholds))
    recall = np.zeros(len(thresholds))
    n_pred_tot = np.zeros(len(thresholds), dtype=int)
    n_match_tot = np.zeros(len(thresholds), dtype=int)
    for k, t in enumerate(thresholds):
        n_match = n_pred = 0
        for pl, p, g in zip(pred_lines, predictions, gt_pix):
            pp = rasterize(pl[p.segment_scores >= t], res)
            n_pred += len(pp)
            n_match += match_pixels(pp, g, cfg.heatmap_tolerance)
        precision[k] = n_match / n_pred if n_pred else 1.0
        recall[k] = n_match / n_gt if n_gt else 0.0
        n_pred_tot[k], n_match_tot[k] = n_pred, n_match
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    order = np.lexsort((-precision, recall))
    # extend the lowest-recall point horizontally to recall 0
    r = np.concatenate([[0.0], recall[order]])
    p = np.concatenate([[precision[order][0]], precision[order]])
    aph = float(np.sum((r[1:] - r[:-1]) * (p[1:] + p[:-1]) / 2)) if len(r) > 1 else 0.0
    curve = PRCurve(thresholds, n_match_tot, n_pred_tot - n_match_tot, recall, precision)
    return float(f.max()), aph, curve


def evaluate(predictions, gts, cfg: MetricConfig | None = None) -> EvalReport:
    cfg = cfg or MetricConfig()
    _check_lists(predictions, gts)
    saps, curves = {}, {}
    for t in cfg.sap_thresholds:
        saps[t], curves[f"sap{t:g}"] = sap(predictions, gts, t, cfg)
    japs = {}
    for t in cfg.junc_thresholds:
        japs[t], curves[f"apj{t:g}"] = junction_ap(predictions, gts, t, cfg)
    fh, aph, curves["heatmap"] = heatmap_metrics(predictions, gts, cfg)
    return EvalReport(
        sap=saps,
        msap=float(np.mean(list(saps.values()))),
        mapj=float(np.mean(list(japs.values()))),
        fh=fh,
        aph=aph,
        junction_ap=japs,
        pr_curves=curves,
    )


def write_pr_curve(curve: PRCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["score", "tp", "fp", "recall", "precision"])
        for row in curve.rows():
            w.writerow([repr(row[0]), row[1], row[2], repr(row[3]), repr(row[4])])


def auc(pos_scores, neg_scores) -> float:
    """ROC AUC via the rank-sum statistic, ties counted as one half."""
    from scipy.stats import rankdata

    pos = np.asarray(pos_scores, float)
    neg = np.asarray(neg_scores, float)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))
