"""VLN evaluation metrics: navigation, instruction following, grounding.

All distances are geodesic graph distances in meters. nDTW normalizes by
|P|*d_th as in the source definition; a reference-length variant is
available behind `ndtw_norm="reference"`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict

import numpy as np

D_TH_DEFAULT = 3.0

METRIC_ORDER = ["TL", "NE", "ONE", "OSR", "SR", "SPL", "nDTW", "sDTW", "RGS", "RGSPL"]


@dataclass
class MetricSet:
    TL: float
    NE: float
    ONE: float
    SR: float
    OSR: float
    SPL: float
    nDTW: float
    sDTW: float
    RGS: float | None = None
    RGSPL: float | None = None


class TrajectoryJumpError(ValueError):
    pass


def _check_path(path: list[int], graph) -> None:
    for a, b in zip(path, path[1:]):
        if a != b and b not in graph.adj[a]:
            raise TrajectoryJumpError(
                f"trajectory jumps from node {a} to non-adjacent node {b}")


def path_length(path: list[int], geodesic: np.ndarray) -> float:
    return float(sum(geodesic[a, b] for a, b in zip(path, path[1:])))


def ndtw(path: list[int], gt_path: list[int], geodesic: np.ndarray,
         d_th: float = D_TH_DEFAULT, norm: str = "path") -> float:
    """exp(-DTW(P,G) / (|P|*d_th)) with monotone steps {(1,0),(0,1),(1,1)}."""
    np_, ng = len(path), len(gt_path)
    cost = np.array([[geodesic[p, q] for q in gt_path] for p in path])
    acc = np.full((np_, ng), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(np_):
        for j in range(ng):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0 and j > 0:
                best = min(best, acc[i - 1, j - 1])
            acc[i, j] = cost[i, j] + best
    denom = (np_ if norm == "path" else ng) * d_th
    return float(np.exp(-acc[-1, -1] / denom))


def ndtw_bruteforce(path: list[int], gt_path: list[int], geodesic: np.ndarray,
                    d_th: float = D_TH_DEFAULT, norm: str = "path") -> float:
    """Oracle: exhaustively enumerate all monotone warpings (small inputs only)."""
    np_, ng = len(path), len(gt_path)
    best = [np.inf]

    def walk(i, j, total):
        total += geodesic[path[i], gt_path[j]]
        if total >= best[0]:
            return
        if i == np_ - 1 and j == ng - 1:
            best[0] = total
            return
        if i + 1 < np_:
            walk(i + 1, j, total)
        if j + 1 < ng:
            walk(i, j + 1, total)
        if i + 1 < np_ and j + 1 < ng:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    denom = (np_ if norm == "path" else ng) * d_th
    return float(np.exp(-best[0] / denom))


def iou(box_a, box_b) -> float:
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("zero-area box")
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    return inter / (area_a + area_b - inter)


def compute_all(path: list[int], episode, world, predicted_box=None,
                d_th: float = D_TH_DEFAULT, ndtw_norm: str = "path") -> MetricSet:
    """Full metric set for one trajectory against its episode reference."""
    graph = world.graph
    _check_path(path, graph)
    geo = graph.geodesic
    gt = episode.gt_path if isinstance(episode.gt_path, list) else list(episode.gt_path)
    goal = gt[-1]
    tl = path_length(path, geo)
    ne = float(geo[path[-1], goal])
    one = float(min(geo[p, goal] for p in path))
    sr = 1.0 if ne <= d_th else 0.0
    osr = 1.0 if one <= d_th else 0.0
    opt = float(geo[path[0], goal])
    if tl == 0.0 and opt == 0.0:
        spl = sr
    else:
        spl = sr * opt / max(tl, opt)
    nd = ndtw(path, gt, geo, d_th=d_th, norm=ndtw_norm)
    sd = sr * nd
    rgs = rgspl = None
    if episode.mode == "goal_oriented" and episode.target_object_id is not None:
        gt_boxes = [o["box"] for v in world.panoramas[goal]
                    for o in v.objects if o["object_id"] == episode.target_object_id]
        if predicted_box is not None and gt_boxes:
            rgs = 1.0 if max(iou(predicted_box, b) for b in gt_boxes) >= 0.5 else 0.0
        else:
            rgs = 0.0
        if tl == 0.0 and opt == 0.0:
            rgspl = rgs
        else:
            rgspl = rgs * opt / max(tl, opt)
    return MetricSet(TL=tl, NE=ne, ONE=one, SR=sr, OSR=osr, SPL=spl,
                     nDTW=nd, sDTW=sd, RGS=rgs, RGSPL=rgspl)


def aggregate(records: list[MetricSet]) -> dict:
    """Split-level arithmetic means; SR/OSR/RGS reported as percentages."""
    if not records:
        raise ValueError("aggregate requires at least one record")
    out = {}
    pct = {"SR", "OSR", "RGS"}
    for name in METRIC_ORDER:
        vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
        if not vals:
            out[name] = None
            continue
        m = float(np.mean(vals))
        out[name] = m * 100.0 if name in pct else m
    return out


def write_csv(records: list[MetricSet], episode_ids: list[str], path):
    summary = aggregate(records)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode_id"] + METRIC_ORDER)
        for eid, r in zip(episode_ids, records):
            w.writerow([eid] + [_fmt(getattr(r, m)) for m in METRIC_ORDER])
        w.writerow(["mean"] + [_fmt(summary[m]) for m in METRIC_ORDER])


def _fmt(v):
    return "" if v is None else repr(float(v))
