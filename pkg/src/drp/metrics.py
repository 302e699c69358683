"""Ranking and classification metrics plus the per-area heatmap."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from drp.errors import UndefinedMetricError
from drp.reconstruction import CLAMP_HI, CLAMP_LO
from drp.synthworld import AREA_TABLE

STAGES = ("fixed", "global", "local")
N_AREAS = 6
MIN_AREA_COUNT = 10


def auc(scores, labels) -> float:
    """Mann-Whitney form: (concordant pairs + ties / 2) / (n_pos * n_neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    first = np.cumsum(counts) - counts + 1.0
    avg_rank = first + (counts - 1.0) / 2.0
    rank_sum = avg_rank[inverse][labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64), CLAMP_LO, CLAMP_HI)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _dcg(rels: np.ndarray, cutoff: int) -> float:
    rels = rels[:cutoff]
    return float(np.sum((2.0 ** rels - 1.0) / np.log2(np.arange(2, len(rels) + 2))))


def ranking_metrics(scores, labels, sessions, cutoff: int = 10) -> tuple[float, float, int]:
    """Mean NDCG@cutoff and HR@cutoff over sessions that contain a positive.

    Returns ``(ndcg, hr, n_sessions)``. Within a session items are ranked by
    descending score; ties keep their original order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    sessions = np.asarray(sessions)
    order = np.argsort(sessions, kind="stable")
    bounds = np.flatnonzero(np.diff(sessions[order])) + 1
    ndcgs, hits = [], []
    for group in np.split(order, bounds):
        rel = labels[group]
        if group.size == 0 or rel.max() <= 0:
            continue
        ranked = rel[np.argsort(-scores[group], kind="stable")]
        ideal = np.sort(rel)[::-1]
        ndcgs.append(_dcg(ranked, cutoff) / _dcg(ideal, cutoff))
        hits.append(float(ranked[:cutoff].max() > 0))
    if not ndcgs:
        raise UndefinedMetricError("no session with a positive label")
    return float(np.mean(ndcgs)), float(np.mean(hits)), len(ndcgs)


@dataclass
class MetricsReport:
    auc: float
    logloss: float
    ndcg: float
    hr: float
    n_examples: int
    n_sessions: int
    label: str = ""

    CSV_HEADER = ("label", "auc", "logloss", "ndcg@10", "hr@10", "n_examples", "n_sessions")

    def row(self) -> list:
        return [self.label, repr(self.auc), repr(self.logloss), repr(self.ndcg), repr(self.hr),
                self.n_examples, self.n_sessions]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_scores(scores, labels, sessions, cutoff: int = 10, label: str = "") -> MetricsReport:
    ndcg, hr, n_sess = ranking_metrics(scores, labels, sessions, cutoff)
    return MetricsReport(auc(scores, labels), logloss(scores, labels), ndcg, hr,
                         len(labels), n_sess, label)


def reports_to_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsReport.CSV_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def aggregate(reports: list[MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of each metric across runs."""
    out = {}
    for key in ("auc", "logloss", "ndcg", "hr"):
        vals = np.array([getattr(r, key) for r in reports])
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(np.mean(vals)), std)
    return out


# --- heatmap ------------------------------------------------------------------

@dataclass
class HeatmapTable:
    mode: str
    means: dict[str, list[float]]
    counts: list[int]
    overflow_count: int = 0
    overflow_means: dict[str, float] = field(default_factory=dict)
    sparse_areas: list[int] = field(default_factory=list)

    @property
    def warning(self) -> bool:
        return bool(self.sparse_areas)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("stage", "area", "mean_prediction", "count"))
        for stage in STAGES:
            for area in range(N_AREAS):
                w.writerow((stage, area, repr(self.means[stage][area]), self.counts[area]))
            if self.overflow_count:
                w.writerow((stage, "contradiction", repr(self.overflow_means[stage]), self.overflow_count))
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["warning"] = self.warning
        return json.dumps(d, sort_keys=True)


def top_fraction_mask(scores, fraction: float = 0.2) -> np.ndarray:
    """True for scores at or above the value ranked ``ceil(fraction * n)`` from the top."""
    scores = np.asarray(scores, dtype=np.float64)
    k = max(1, math.ceil(fraction * len(scores)))
    threshold = np.sort(scores)[::-1][k - 1]
    return scores >= threshold


def areas_from_scores(r_scores, p_scores, labels, fraction: float = 0.2) -> np.ndarray:
    """Area id per example from thresholded scores; -1 marks forbidden (P, R, B) triples."""
    R = top_fraction_mask(r_scores, fraction).astype(int)
    P = top_fraction_mask(p_scores, fraction).astype(int)
    B = np.asarray(labels).astype(int)
    return AREA_TABLE[P, R, B]


def heatmap_from_stages(stages: dict[str, np.ndarray], areas: np.ndarray, mode: str) -> HeatmapTable:
    areas = np.asarray(areas)
    counts = [int(np.sum(areas == a)) for a in range(N_AREAS)]
    means = {}
    for stage in STAGES:
        vals = np.asarray(stages[stage], dtype=np.float64)
        means[stage] = [float(vals[areas == a].mean()) if counts[a] else float("nan") for a in range(N_AREAS)]
    overflow = areas < 0
    n_over = int(overflow.sum())
    over_means = {s: float(np.asarray(stages[s])[overflow].mean()) for s in STAGES} if n_over else {}
    sparse = [a for a in range(N_AREAS) if counts[a] < MIN_AREA_COUNT] if mode == "oracle" else []
    return HeatmapTable(mode, means, counts, n_over, over_means, sparse)


def heatmap(checkpoint, data, mode: str = "oracle") -> HeatmapTable:
    """Per-area mean of the fixed, global and local predictions of a checkpoint."""
    if mode not in ("oracle", "score"):
        raise ValueError(f"unknown heatmap mode {mode!r}")
    model = checkpoint.build_model()
    stages = model.predict(data)
    if mode == "oracle":
        if not data.has_oracle:
            raise UndefinedMetricError("oracle heatmap needs oracle area labels")
        areas = data.area.astype(int)
    else:
        areas = areas_from_scores(stages["r"], stages["p_used"], data.label)
    return heatmap_from_stages(stages, areas, mode)
