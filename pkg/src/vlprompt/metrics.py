"""Triplet ranking and recall-at-K under the scene-graph-detection matching rule.

Evaluation treats the scene's own object masks and categories as the
detected objects, so scores measure relation prediction alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Scene, mask_iou
from .vision import pair_index

DEFAULT_KS = (20, 50, 100)
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class TripletPrediction:
    subject: int
    object: int
    relation: int
    score: float

    def to_json(self) -> dict:
        return {"subject": self.subject, "object": self.object, "relation": self.relation, "score": self.score}


def relation_targets(scene: Scene) -> np.ndarray:
    """Multi-hot (P x K) targets in pair order."""
    n = scene.num_objects
    y = np.zeros((n * (n - 1), scene.num_relations), dtype=np.float32)
    for i, j, k in scene.triplets:
        y[i * (n - 1) + (j if j < i else j - 1), k] = 1.0
    return y


def predict_triplets(scores: np.ndarray, num_objects: int) -> list[TripletPrediction]:
    """Every (pair, relation) score, highest first; ties keep (pair row, relation id) order."""
    scores = np.asarray(scores)
    pairs = pair_index(num_objects)
    if scores.ndim != 2 or scores.shape[0] != len(pairs):
        raise ValueError(f"scores shape {scores.shape} does not fit {num_objects} objects")
    k = scores.shape[1]
    order = np.argsort(-scores.reshape(-1), kind="stable")
    return [TripletPrediction(*pairs[f // k], int(f % k), float(scores.reshape(-1)[f])) for f in order]


def _check_ks(ks) -> tuple[int, ...]:
    ks = tuple(int(k) for k in ks)
    if not ks or any(k <= 0 for k in ks):
        raise ValueError(f"recall cut-offs must be positive, got {ks}")
    return ks


def match_ranks(preds: list[TripletPrediction], gt: Scene, detected: Scene | None = None,
                iou_threshold: float = IOU_THRESHOLD, max_k: int | None = None) -> list[int | None]:
    """Rank of the prediction matched to each GT triplet (``None`` if unmatched).

    Predictions are walked in order. Each one takes an unmatched GT triplet
    with the same relation whose subject and object agree in category and
    overlap the predicted masks with IoU at or above ``iou_threshold``. A
    GT triplet at exactly the predicted indices is preferred, then GT list
    order. Because matching is greedy in rank order, recall at K is the
    number of ranks below K.
    """
    det = detected or gt
    n_det, n_gt = det.num_objects, gt.num_objects
    det_masks = [o.mask for o in det.objects]
    iou = np.array([[mask_iou(det_masks[a], gt.objects[b].mask) for b in range(n_gt)] for a in range(n_det)])
    ok = (iou >= iou_threshold) & (np.array(det.categories)[:, None] == np.array(gt.categories)[None, :])
    gts = list(gt.triplets)
    ranks: list[int | None] = [None] * len(gts)
    limit = len(preds) if max_k is None else min(max_k, len(preds))
    for rank in range(limit):
        p = preds[rank]
        chosen = None
        for g, (gi, gj, gk) in enumerate(gts):
            if ranks[g] is None and gk == p.relation and ok[p.subject, gi] and ok[p.object, gj]:
                if (gi, gj) == (p.subject, p.object):
                    chosen = g
                    break
                if chosen is None:
                    chosen = g
        if chosen is not None:
            ranks[chosen] = rank
    return ranks


@dataclass
class SceneRecall:
    num_gt: int
    recall: dict[int, float]  # K -> R@K
    class_gt: dict[int, int]  # relation -> GT count
    class_recall: dict[int, dict[int, float]]  # K -> relation -> recall


def match_and_score(preds: list[TripletPrediction], gt: Scene, ks=DEFAULT_KS, iou_threshold: float = IOU_THRESHOLD,
                    detected: Scene | None = None) -> SceneRecall:
    ks = _check_ks(ks)
    ranks = match_ranks(preds, gt, detected, iou_threshold, max(ks))
    rels = [t[2] for t in gt.triplets]
    class_gt: dict[int, int] = {}
    for r in rels:
        class_gt[r] = class_gt.get(r, 0) + 1
    recall, class_recall = {}, {}
    for k in ks:
        hit = [rk is not None and rk < k for rk in ranks]
        recall[k] = sum(hit) / len(rels) if rels else 0.0
        class_recall[k] = {c: sum(h for h, r in zip(hit, rels) if r == c) / class_gt[c] for c in sorted(class_gt)}
    return SceneRecall(len(rels), recall, class_gt, class_recall)


def aggregate(results: list[SceneRecall], relation_names, ks=DEFAULT_KS) -> dict:
    """Dataset report.

    R@K averages per-scene recall over scenes that have GT. Per-class recall
    averages, over scenes containing the class, the scene's recall for that
    class; mR@K is the plain mean over classes present in the GT.
    """
    ks = _check_ks(ks)
    scored = [r for r in results if r.num_gt]
    report: dict = {"num_scenes": len(results), "scenes_with_gt": len(scored),
                    "detections": "ground-truth masks and categories", "per_class": {}}
    present = sorted({c for r in scored for c in r.class_gt})
    for k in ks:
        report[f"R@{k}"] = float(np.mean([r.recall[k] for r in scored])) if scored else 0.0
        per_class = {}
        for c in present:
            vals = [r.class_recall[k][c] for r in scored if c in r.class_gt]
            per_class[relation_names[c]] = float(np.mean(vals))
        report[f"mR@{k}"] = float(np.mean(list(per_class.values()))) if per_class else 0.0
        report["per_class"][f"R@{k}"] = per_class
    return report
