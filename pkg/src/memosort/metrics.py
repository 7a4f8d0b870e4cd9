"""MOTA / IDF1 / identity switches and filter prediction error."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .assign import solve
from .geometry import iou_matrix
from .mekf import MeKF


@dataclass
class EvalReport:
    name: str = ""
    mota: float = 0.0
    idf1: float = 0.0
    id_switches: int = 0
    false_positives: int = 0
    misses: int = 0
    num_gt: int = 0
    num_pred: int = 0
    idtp: int = 0
    pred_rmse: float | None = None
    sequences: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def summary(self) -> str:
        line = (f"{self.name or 'result'}: MOTA {self.mota:.4f}  IDF1 {self.idf1:.4f}  IDSW {self.id_switches}"
                f"  FP {self.false_positives}  FN {self.misses}  GT {self.num_gt}")
        if self.pred_rmse is not None:
            line += f"  predRMSE {self.pred_rmse:.3f}px"
        return line


def _group(rows):
    """``rows``: iterable of ``(frame, id, box)``. Returns ``{frame: (ids, boxes)}``."""
    by_frame: dict[int, list] = defaultdict(list)
    seen = set()
    for frame, oid, box in rows:
        key = (int(frame), int(oid))
        if key in seen:
            raise ValueError(f"duplicate row for frame {key[0]}, id {key[1]}")
        seen.add(key)
        by_frame[key[0]].append((key[1], tuple(float(v) for v in box)))
    out = {}
    for f, items in by_frame.items():
        items.sort()
        out[f] = ([i for i, _ in items], np.array([b for _, b in items], dtype=np.float64).reshape(-1, 4))
    return out


def evaluate(truth, results, iou_match_threshold: float = 0.5, name: str = "") -> EvalReport:
    """CLEAR-MOT and identity metrics.

    ``truth`` and ``results`` are iterables of ``(frame, id, box)`` with boxes
    in center format.
    """
    gt = _group(truth)
    hyp = _group(results)
    frames = sorted(set(gt) | set(hyp))
    max_cost = 1.0 - iou_match_threshold

    misses = fps = idsw = 0
    num_gt = num_pred = 0
    last_match: dict[int, int] = {}  # gt id -> hyp id, most recent association
    overlap = defaultdict(int)  # (gt id, hyp id) -> frames with IoU >= threshold
    gt_count = defaultdict(int)
    hyp_count = defaultdict(int)

    for f in frames:
        g_ids, g_boxes = gt.get(f, ([], np.zeros((0, 4))))
        h_ids, h_boxes = hyp.get(f, ([], np.zeros((0, 4))))
        num_gt += len(g_ids)
        num_pred += len(h_ids)
        for g in g_ids:
            gt_count[g] += 1
        for h in h_ids:
            hyp_count[h] += 1
        if not g_ids or not h_ids:
            misses += len(g_ids)
            fps += len(h_ids)
            continue
        ious = iou_matrix(g_boxes, h_boxes)
        ok = ious >= iou_match_threshold
        # identity overlaps for IDF1 count every valid pair, not only CLEAR matches
        for gi, hj in zip(*np.nonzero(ok)):
            overlap[(g_ids[gi], h_ids[hj])] += 1

        # CLEAR: keep last frame's correspondences when still valid
        h_index = {h: j for j, h in enumerate(h_ids)}
        matched = {}
        used_h = set()
        for gi, g in enumerate(g_ids):
            prev = last_match.get(g)
            if prev is not None and prev in h_index and prev not in used_h and ok[gi, h_index[prev]]:
                matched[gi] = h_index[prev]
                used_h.add(prev)
        free_g = [gi for gi in range(len(g_ids)) if gi not in matched]
        free_h = [hj for hj in range(len(h_ids)) if h_ids[hj] not in used_h]
        if free_g and free_h:
            cost = 1.0 - ious[np.ix_(free_g, free_h)]
            cost[~ok[np.ix_(free_g, free_h)]] = np.inf
            res = solve(cost, max_cost)
            for r, c in res.matches:
                matched[free_g[r]] = free_h[c]
        for gi, hj in matched.items():
            g, h = g_ids[gi], h_ids[hj]
            if g in last_match and last_match[g] != h:
                idsw += 1
            last_match[g] = h
        misses += len(g_ids) - len(matched)
        fps += len(h_ids) - len(matched)

    mota = 1.0 - (misses + fps + idsw) / num_gt if num_gt else (1.0 if num_pred == 0 else -math.inf)

    # global IDF1: one-to-one gt id <-> hyp id assignment maximizing overlap
    g_list = sorted(gt_count)
    h_list = sorted(hyp_count)
    idtp = 0
    if g_list and h_list:
        weight = np.zeros((len(g_list), len(h_list)))
        gi = {g: i for i, g in enumerate(g_list)}
        hi = {h: j for j, h in enumerate(h_list)}
        for (g, h), v in overlap.items():
            weight[gi[g], hi[h]] = v
        res = solve(-weight)
        idtp = int(sum(weight[r, c] for r, c in res.matches))
    denom = num_gt + num_pred
    idf1 = 2.0 * idtp / denom if denom else 1.0

    return EvalReport(name=name, mota=float(mota), idf1=float(idf1), id_switches=idsw, false_positives=fps,
                      misses=misses, num_gt=num_gt, num_pred=num_pred, idtp=idtp)


def prediction_rmse(kf: MeKF, scenario, burn_in: int = 0, regimes=None) -> float:
    """RMSE (px) of one-step-ahead predicted centers against truth centers.

    Each target's filter starts at its first detection and is updated with
    that target's own detections (coasting through gaps). The first
    ``burn_in`` predictions of every target are not scored. ``regimes``
    optionally restricts scoring to targets of those motion regimes.
    """
    if scenario.frames == 0 or len(scenario.truth) == 0:
        raise ValueError("nothing to evaluate: scenario has no frames or targets")
    ids = [t for t in scenario.ids if regimes is None or scenario.regimes[t] in regimes]
    dets = np.stack([scenario.target_detections(t) for t in ids]) if ids else np.zeros((0, 0, 4))
    truth = scenario.truth[[t - 1 for t in ids]] if ids else np.zeros((0, 0, 4))
    sq_sum, count = _rmse_accumulate(kf, dets, truth, burn_in)
    if count == 0:
        raise ValueError("nothing to evaluate: no scored predictions")
    return math.sqrt(sq_sum / count)


def _rmse_accumulate(kf: MeKF, dets, truth, burn_in):
    n, frames, _ = dets.shape
    present = ~np.isnan(dets[..., 0])
    started = np.zeros(n, dtype=bool)
    n_pred = np.zeros(n, dtype=int)
    mean = np.zeros((n, 8))
    cov = np.tile(np.eye(8), (n, 1, 1))
    h = np.zeros((n, kf.hidden))
    c = np.zeros((n, kf.hidden))
    sq_sum, count = 0.0, 0
    for f in range(frames):
        if started.any():
            idx = np.flatnonzero(started)
            pm, pc, _ = kf.predict_batch(mean[idx], cov[idx], h[idx])
            err = pm[:, :2] - truth[idx, f, :2]
            scored = n_pred[idx] >= burn_in
            sq_sum += float(np.sum(err[scored] ** 2))
            count += int(scored.sum())
            n_pred[idx] += 1
            has = present[idx, f]
            z = np.where(has[:, None], dets[idx, f], 0.0)
            m2, c2, h2, cc2 = kf.update_batch(pm, pc, h[idx], c[idx], z, has.astype(float))
            mean[idx], cov[idx], h[idx], c[idx] = m2, c2, h2, cc2
        new = ~started & present[:, f]
        if new.any():
            idx = np.flatnonzero(new)
            m0, p0, h0, c0 = kf.initiate_batch(dets[idx, f])
            mean[idx], cov[idx], h[idx], c[idx] = m0, p0, h0, c0
            started[idx] = True
    return sq_sum, count


def compare(reports: list[EvalReport]) -> str:
    """Text table sorted by MOTA then IDF1 (descending); ties keep input order."""
    if len(reports) < 2:
        raise ValueError("compare() needs at least two reports")
    order = rank_order(reports)
    lines = [f"{'rank':>4}  {'name':<24} {'MOTA':>8} {'IDF1':>8} {'IDSW':>6} {'FP':>6} {'FN':>6}"]
    for rank, i in enumerate(order, start=1):
        r = reports[i]
        lines.append(f"{rank:>4}  {r.name or f'#{i}':<24} {r.mota:>8.4f} {r.idf1:>8.4f} {r.id_switches:>6d}"
                     f" {r.false_positives:>6d} {r.misses:>6d}")
    return "\n".join(lines)


def rank_order(reports: list[EvalReport]) -> list[int]:
    return sorted(range(len(reports)), key=lambda i: (-reports[i].mota, -reports[i].idf1, i))
