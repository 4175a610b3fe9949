"""Seeded synthetic scenes whose relations are a fixed function of geometry and category.

Each category owns a random signature vector (drawn from ``signature_seed``,
shared by every scene). The feature map carries that signature on the cells
of each object's mask plus Gaussian noise, so pooled object features reveal
the category and relations are learnable.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scene import ObjectInstance, Scene, Vocabulary, mask_to_bbox, resize_mask

RULES = ("default", "left-of")

_OBJECT_NAMES = (
    "person", "motorcycle", "horse", "rock", "sky", "building", "sea", "elephant",
    "sports ball", "car", "dog", "tree", "bicycle", "grass", "road", "table",
)
_RELATION_NAMES = ("left of", "above", "overlapping", "paired with", "larger than", "left of even")

MAX_ATTEMPTS = 200


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    num_categories: int = 10
    num_relations: int = 6
    num_objects: int = 4
    height: int = 32
    width: int = 32
    feature_height: int = 16
    feature_width: int = 16
    feature_dim: int = 64
    rule: str = "default"
    max_repeat: int = 1
    noise: float = 0.1
    signature_seed: int = 1234

    def validate(self) -> None:
        if self.num_categories < 2 or self.num_relations < 1:
            raise SynthError(f"need C >= 2 and K >= 1, got C={self.num_categories}, K={self.num_relations}")
        if self.num_objects < 2:
            raise SynthError(f"need at least 2 objects, got {self.num_objects}")
        if self.max_repeat < 1 or self.num_objects > self.num_categories * self.max_repeat:
            raise SynthError(f"{self.num_objects} objects cannot be drawn from {self.num_categories} categories "
                             f"with at most {self.max_repeat} instance(s) each")
        if min(self.height, self.width) < 4 or min(self.feature_height, self.feature_width) < 2:
            raise SynthError(f"degenerate grid {self.height}x{self.width} / "
                             f"{self.feature_height}x{self.feature_width}")
        if self.feature_height > self.height or self.feature_width > self.width:
            raise SynthError("feature map must not be finer than the mask grid")
        if self.feature_dim < 1:
            raise SynthError("feature_dim must be positive")
        if self.rule not in RULES:
            raise SynthError(f"unknown rule {self.rule!r}; choose from {RULES}")


def synth_vocabulary(num_categories: int, num_relations: int) -> Vocabulary:
    objects = [(_OBJECT_NAMES[i] if i < len(_OBJECT_NAMES) else f"object {i}") for i in range(num_categories)]
    relations = [(_RELATION_NAMES[k] if k < len(_RELATION_NAMES) else f"related {k}") for k in range(num_relations)]
    return Vocabulary(objects, relations)


def category_signatures(params: SynthParams) -> np.ndarray:
    rng = np.random.default_rng(params.signature_seed)
    return rng.normal(size=(params.num_categories, params.feature_dim)).astype(np.float32)


# ------------------------------------------------------------------- rules

def _edges(box):
    cx, cy, w, h = box
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def _box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = _edges(a)
    bx0, by0, bx1, by1 = _edges(b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def category_relations(ci: int, cj: int, num_relations: int, rule: str = "default") -> list[int]:
    """Relations that hold for every pair with these categories, regardless of layout."""
    if rule != "default":
        return []
    rels = []
    if num_relations > 3 and (ci + 2 * cj) % 7 == 0:
        rels.append(3)
    rels.extend(k for k in range(6, num_relations) if (3 * ci + cj + k) % 7 == 0)
    return rels


def pair_relations(ci: int, cj: int, bi, bj, num_relations: int, rule: str = "default") -> list[int]:
    """Relation ids holding for subject (ci, bi) and object (cj, bj); boxes are [cx, cy, w, h]."""
    ix0, iy0, ix1, iy1 = _edges(bi)
    jx0, jy0, jx1, jy1 = _edges(bj)
    # strict separation with a gap of at least two cells
    left_of = ix1 + 2 <= jx0
    if rule == "left-of":
        return [0] if left_of else []
    rels = []
    if left_of:
        rels.append(0)
    if num_relations > 1 and iy1 + 2 <= jy0:
        rels.append(1)
    if num_relations > 2 and _box_iou(bi, bj) > 0.15:
        rels.append(2)
    if num_relations > 4 and bi[2] * bi[3] > 3 * bj[2] * bj[3]:
        rels.append(4)
    if num_relations > 5 and left_of and ci % 2 == 0:
        rels.append(5)
    rels.extend(category_relations(ci, cj, num_relations, rule))
    return sorted(rels)


def scene_triplets(categories, boxes, num_relations: int, rule: str) -> list[tuple[int, int, int]]:
    out = []
    n = len(categories)
    for i in range(n):
        for j in range(n):
            if i != j:
                out.extend((i, j, k) for k in pair_relations(categories[i], categories[j], boxes[i], boxes[j],
                                                            num_relations, rule))
    return out


# ------------------------------------------------------------------- generator

def _draw_categories(rng, params: SynthParams) -> list[int]:
    pool = np.repeat(np.arange(params.num_categories), params.max_repeat)
    return [int(c) for c in rng.choice(pool, size=params.num_objects, replace=False)]


def _draw_masks(rng, params: SynthParams):
    h, w = params.height, params.width
    canvas = np.full((h, w), -1, dtype=int)
    for idx in range(params.num_objects):
        bh = int(rng.integers(max(2, h // 6), max(3, h // 2) + 1))
        bw = int(rng.integers(max(2, w // 6), max(3, w // 2) + 1))
        y0 = int(rng.integers(0, h - bh + 1))
        x0 = int(rng.integers(0, w - bw + 1))
        canvas[y0:y0 + bh, x0:x0 + bw] = idx
    return [canvas == idx for idx in range(params.num_objects)]


def synth_scene(seed: int, params: SynthParams | None = None, vocabulary: str | None = None) -> Scene:
    """Generate one scene; a pure function of ``(seed, params)``.

    Objects are axis-aligned rectangles painted in order, later ones
    occluding earlier ones. Layouts where an object loses more than half its
    cells or vanishes at feature resolution, or where no relation holds, are
    redrawn from the same random stream.
    """
    params = params or SynthParams()
    params.validate()
    rng = np.random.default_rng(seed)
    signatures = category_signatures(params)
    fsize = (params.feature_height, params.feature_width)
    for _ in range(MAX_ATTEMPTS):
        categories = _draw_categories(rng, params)
        masks = _draw_masks(rng, params)
        if any(m.sum() < 4 or not resize_mask(m, fsize).any() for m in masks):
            continue
        boxes = [mask_to_bbox(m) for m in masks]
        if any(m.sum() < 0.5 * b[2] * b[3] for m, b in zip(masks, boxes)):
            continue
        triplets = scene_triplets(categories, boxes, params.num_relations, params.rule)
        if not triplets:
            continue
        break
    else:
        raise SynthError(f"could not place {params.num_objects} objects after {MAX_ATTEMPTS} attempts")

    fmap = params.noise * rng.normal(size=(params.feature_dim, *fsize))
    for c, m in zip(categories, masks):
        fm = resize_mask(m, fsize)
        fmap[:, fm] += signatures[c][:, None]
    objects = [ObjectInstance(c, m) for c, m in zip(categories, masks)]
    meta = {"seed": seed, "params": asdict(params)}
    return Scene(fmap.astype(np.float32), objects, triplets, params.num_categories, params.num_relations,
                 vocabulary, meta)


def synth_knowledge(params: SynthParams, vocabulary: Vocabulary) -> dict[str, list[str]]:
    """Category-level relations as ``{"sub#obj": [relation names]}``, for the mock chat model."""
    names, rels = vocabulary.object_names, vocabulary.relation_names
    return {f"{names[ci]}#{names[cj]}": [rels[k] for k in category_relations(ci, cj, params.num_relations, params.rule)]
            for ci in range(params.num_categories) for cj in range(params.num_categories) if ci != cj}
