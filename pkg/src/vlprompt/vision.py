"""Pairwise vision features: mask pooling, pair concatenation, spatial encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ConfigError, Module, Tensor
from .scene import EmptyMaskError, Scene, mask_to_bbox


def pair_index(n: int) -> list[tuple[int, int]]:
    """Ordered pairs (i, j), i != j, i outer and j inner."""
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def pair_row(i: int, j: int, n: int) -> int:
    """Row of pair (i, j) in :func:`pair_index` order."""
    return i * (n - 1) + (j if j < i else j - 1)


def mask_pool(feature_map: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-channel mean of ``feature_map`` (D x H x W) over the cells of ``mask`` (H x W)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != feature_map.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} does not match feature map shape {feature_map.shape}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("cannot pool over an empty mask")
    return (feature_map[:, mask].sum(axis=1, dtype=np.float64) / count).astype(np.float32)


def pair_concat(object_feats: np.ndarray) -> np.ndarray:
    """Rows ``[f_i | f_j]`` for every ordered pair, in :func:`pair_index` order."""
    n = object_feats.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 objects to form pairs, got {n}")
    pairs = pair_index(n)
    subj = np.array([i for i, _ in pairs])
    obj = np.array([j for _, j in pairs])
    return np.concatenate([object_feats[subj], object_feats[obj]], axis=1)


def box_iou(bi, bj) -> float:
    xi, yi, wi, hi = bi
    xj, yj, wj, hj = bj
    iw = min(xi + wi / 2, xj + wj / 2) - max(xi - wi / 2, xj - wj / 2)
    ih = min(yi + hi / 2, yj + hj / 2) - max(yi - hi / 2, yj - hj / 2)
    inter = max(iw, 0.0) * max(ih, 0.0)
    return inter / (wi * hi + wj * hj - inter)


def spatial_vector(bi, bj) -> np.ndarray:
    """Six-element spatial encoding of subject box ``bi`` against object box ``bj``.

    Boxes are ``[cx, cy, w, h]``. Offsets are normalised by the subject's
    geometric-mean side length.
    """
    xi, yi, wi, hi = (float(v) for v in bi)
    xj, yj, wj, hj = (float(v) for v in bj)
    if min(wi, hi, wj, hj) <= 0:
        raise ValueError(f"box width and height must be positive, got {list(bi)} and {list(bj)}")
    si = np.sqrt(wi * hi)
    return np.array([
        (xj - xi) / si,
        (yj - yi) / si,
        np.sqrt(wj * hj / (wi * hi)),
        box_iou((xi, yi, wi, hi), (xj, yj, wj, hj)),
        wi / hi,
        wj / hj,
    ])


@dataclass(frozen=True)
class PairInputs:
    """Weight-independent per-scene inputs to the vision extractor."""

    pairs: list[tuple[int, int]]
    object_feats: np.ndarray  # N x D_map
    concat: np.ndarray  # N(N-1) x 2*D_map
    spatial: np.ndarray  # N(N-1) x 6


def pair_inputs(scene: Scene) -> PairInputs:
    feats = np.stack([mask_pool(scene.feature_map, m) for m in scene.feature_masks])
    boxes = [mask_to_bbox(o.mask) for o in scene.objects]
    pairs = pair_index(scene.num_objects)
    spatial = np.array([spatial_vector(boxes[i], boxes[j]) for i, j in pairs], dtype=np.float32)
    return PairInputs(pairs, feats, pair_concat(feats), spatial)


class VisionExtractor(Module):
    """Projects the pair concatenation to D_V, adds the spatial embedding, applies a final FC."""

    def __init__(self, d_map: int, d_v: int, rng: np.random.Generator):
        self.project = nx.Linear(2 * d_map, d_v, rng)
        self.spatial = nx.Linear(6, d_v, rng)
        self.out = nx.Linear(d_v, d_v, rng)
        self.d_map, self.d_v = d_map, d_v

    def __call__(self, concat: Tensor, spatial: Tensor) -> tuple[Tensor, Tensor]:
        if concat.shape[-1] != 2 * self.d_map:
            raise ConfigError(f"pair features have width {concat.shape[-1]}, extractor expects {2 * self.d_map}")
        f_sp = self.spatial(spatial)
        f_v = self.out(nx.add(self.project(concat), f_sp))
        return f_sp, f_v


@dataclass
class VisionFeatures:
    pairs: list[tuple[int, int]]
    f_vi: Tensor
    f_sp: Tensor
    f_v: Tensor


def build_vision_features(scene: Scene, weights: VisionExtractor, inputs: PairInputs | None = None) -> VisionFeatures:
    inputs = inputs or pair_inputs(scene)
    f_vi = Tensor(inputs.concat)
    f_sp, f_v = weights(f_vi, Tensor(inputs.spatial))
    return VisionFeatures(inputs.pairs, f_vi, f_sp, f_v)
