"""
Coordinate accuracy (precision / recall / F1 within radius R) and
topological plausibility (Betti-0, Betti-1) of extracted centerlines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from errors import ConfigError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["case_id", "R", "precision", "recall", "f1", "betti0", "betti1", "degenerate"]
MEAN_ROW_ID = "mean"


@dataclass(frozen=True)
class MatchReport:
    radius: float
    precision: float
    recall: float
    f1: float
    tp_pred: int
    fp: int
    tp_gt: int
    fn: int
    pred_empty: bool = False
    gt_empty: bool = False

    @property
    def degenerate(self):
        return self.pred_empty or self.gt_empty


@dataclass(frozen=True)
class BettiReport:
    betti0: int
    betti1: int
    n_vertices: int = 0
    n_edges: int = 0


def within_radius(queries, reference, radius):
    """Boolean mask: query point has a reference point within Euclidean radius (inclusive)"""
    if len(queries) == 0:
        return np.zeros(0, dtype=bool)
    if len(reference) == 0:
        return np.zeros(len(queries), dtype=bool)
    _, idx = cKDTree(reference).query(queries, k=1)
    # integer squared distances keep the boundary exact
    d2 = np.sum((queries - reference[idx]) ** 2, axis=1)
    return d2 <= radius * radius


def precision_recall(pred, gt, radius) -> MatchReport:
    """Directional point matching: pred->gt for precision, gt->pred for recall"""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    pred_pts, gt_pts = pred.points, gt.points
    pred_hit = within_radius(pred_pts, gt_pts, radius)
    gt_hit = within_radius(gt_pts, pred_pts, radius)

    tp_pred = int(pred_hit.sum())
    fp = len(pred_pts) - tp_pred
    tp_gt = int(gt_hit.sum())
    fn = len(gt_pts) - tp_gt

    precision = tp_pred / len(pred_pts) if len(pred_pts) else 0.0
    recall = tp_gt / len(gt_pts) if len(gt_pts) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MatchReport(
        float(radius), precision, recall, f1, tp_pred, fp, tp_gt, fn,
        pred_empty=len(pred_pts) == 0, gt_empty=len(gt_pts) == 0,
    )


def adjacency_edges(points, connectivity=26):
    """Index pairs (i < j) of voxels adjacent under 26- or 6-connectivity"""
    if connectivity == 26:
        norm = np.inf
    elif connectivity == 6:
        norm = 1
    else:
        raise ConfigError(f"connectivity must be 26 or 6, got {connectivity}")
    if len(points) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(points).query_pairs(r=1.0, p=norm, output_type="ndarray")
    return pairs.astype(np.int64).reshape(-1, 2)


def betti_numbers(points, connectivity=26) -> BettiReport:
    """Components and cycle rank E - V + C of the voxel adjacency graph"""
    pts = points.points
    n = len(pts)
    if n == 0:
        return BettiReport(0, 0)
    edges = adjacency_edges(pts, connectivity)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_components, _ = connected_components(graph, directed=False)
    return BettiReport(int(n_components), int(len(edges) - n + n_components), n, int(len(edges)))


def evaluate_case(pred, gt, radii, case_id="case", connectivity=26) -> pd.DataFrame:
    """One row per radius in the metrics CSV schema"""
    if len(radii) == 0:
        raise ValueError("radii must be non-empty")
    betti = betti_numbers(pred, connectivity)
    rows = []
    for r in radii:
        report = precision_recall(pred, gt, r)
        if report.degenerate:
            which = "prediction" if report.pred_empty else "ground truth"
            logger.warning(f"{case_id}: empty {which}, R={r} scores reported as 0")
        rows.append({
            "case_id": case_id, "R": r,
            "precision": report.precision, "recall": report.recall, "f1": report.f1,
            "betti0": betti.betti0, "betti1": betti.betti1, "degenerate": int(report.degenerate),
        })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def evaluate_cases(pairs, radii, connectivity=26) -> pd.DataFrame:
    """Per-case rows for (case_id, pred, gt) triples plus a final mean row"""
    frames = [evaluate_case(pred, gt, radii, case_id, connectivity) for case_id, pred, gt in pairs]
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CSV_COLUMNS)
    # the mean of the degenerate flag is the fraction of flagged rows
    numeric = ["precision", "recall", "f1", "betti0", "betti1", "degenerate"]
    mean_row = {"case_id": MEAN_ROW_ID, "R": "all"}
    mean_row.update({col: float(table[col].astype(float).mean()) if len(table) else 0.0 for col in numeric})
    return pd.concat([table, pd.DataFrame([mean_row], columns=CSV_COLUMNS)], ignore_index=True)


def summarize_by_radius(table: pd.DataFrame) -> pd.DataFrame:
    """Mean precision/recall/F1/Betti per radius, ignoring the mean row"""
    cases = table[table["case_id"] != MEAN_ROW_ID].copy()
    cases["R"] = cases["R"].astype(float)
    numeric = ["precision", "recall", "f1", "betti0", "betti1"]
    cases[numeric] = cases[numeric].astype(float)
    return cases.groupby("R", sort=True)[numeric].mean().reset_index()
