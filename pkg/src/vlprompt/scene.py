"""Scenes, vocabularies, and the on-disk scene format.

A scene directory holds ``manifest.json`` and ``feature_map.bin``. Masks are
run-length encoded in the manifest as alternating run lengths over the
row-major flattened grid, starting with a (possibly empty) background run::

    {"size": [H, W], "counts": [bg, fg, bg, fg, ...]}

``feature_map.bin`` is little-endian float32, shape (D_map, H', W'), C order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SCENE_FORMAT = "vlprompt-scene/1"
MANIFEST = "manifest.json"
FEATURE_BLOB = "feature_map.bin"


class SceneError(ValueError):
    """Base class for scene validation failures."""


class MissingBlobError(SceneError):
    pass


class SceneShapeError(SceneError):
    pass


class CategoryRangeError(SceneError):
    pass


class RelationRangeError(SceneError):
    pass


class InvalidTripletError(SceneError):
    pass


class EmptyMaskError(SceneError):
    pass


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    object_names: tuple[str, ...]
    relation_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_names", tuple(self.object_names))
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        for label, names, minimum in (("object", self.object_names, 2), ("relation", self.relation_names, 1)):
            if len(names) < minimum:
                raise VocabularyError(f"need at least {minimum} {label} names, got {len(names)}")
            if any(not isinstance(n, str) or not n.strip() for n in names):
                raise VocabularyError(f"{label} names must be non-empty strings")
            if len(set(names)) != len(names):
                raise VocabularyError(f"{label} names must be unique")
            if any("#" in n for n in names):
                raise VocabularyError(f"{label} names must not contain '#'")

    @property
    def num_objects(self) -> int:
        return len(self.object_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def object_id(self, name: str) -> int:
        try:
            return self.object_names.index(name)
        except ValueError:
            raise VocabularyError(f"unknown object name {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_names.index(name)
        except ValueError:
            raise VocabularyError(f"unknown relation name {name!r}") from None

    def to_json(self) -> dict:
        return {"objects": list(self.object_names), "relations": list(self.relation_names)}

    @cached_property
    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        try:
            return cls(obj["objects"], obj["relations"])
        except KeyError as e:
            raise VocabularyError(f"vocabulary file lacks {e.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    category: int
    mask: np.ndarray  # bool, H x W

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise SceneShapeError(f"mask must be 2-d, got shape {m.shape}")
        if not m.any():
            raise EmptyMaskError("object mask has no foreground cell")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class Scene:
    feature_map: np.ndarray  # float32, D_map x H' x W'
    objects: tuple[ObjectInstance, ...]
    triplets: tuple[tuple[int, int, int], ...]
    num_categories: int
    num_relations: int
    vocabulary: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        fm = np.asarray(self.feature_map, dtype=np.float32)
        if fm.ndim != 3:
            raise SceneShapeError(f"feature map must be D_map x H' x W', got shape {fm.shape}")
        fm.setflags(write=False)
        object.__setattr__(self, "feature_map", fm)
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "triplets", tuple(tuple(int(v) for v in t) for t in self.triplets))
        validate_scene(self)

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.objects[0].mask.shape if self.objects else (0, 0)

    @property
    def feature_size(self) -> tuple[int, int]:
        return self.feature_map.shape[1:]

    @property
    def categories(self) -> list[int]:
        return [o.category for o in self.objects]

    @cached_property
    def feature_masks(self) -> list[np.ndarray]:
        """Object masks at feature-map resolution (nearest neighbour)."""
        return [resize_mask(o.mask, self.feature_size) for o in self.objects]

    def same_as(self, other: "Scene") -> bool:
        return (
            np.array_equal(self.feature_map, other.feature_map)
            and self.triplets == other.triplets
            and self.num_categories == other.num_categories
            and self.num_relations == other.num_relations
            and len(self.objects) == len(other.objects)
            and all(a.category == b.category and np.array_equal(a.mask, b.mask)
                    for a, b in zip(self.objects, other.objects))
        )


def validate_scene(scene: Scene) -> None:
    if scene.num_categories < 2 or scene.num_relations < 1:
        raise SceneError(f"need C >= 2 and K >= 1, got C={scene.num_categories}, K={scene.num_relations}")
    sizes = {o.mask.shape for o in scene.objects}
    if len(sizes) > 1:
        raise SceneShapeError(f"object masks have differing sizes {sorted(sizes)}")
    for idx, o in enumerate(scene.objects):
        if not 0 <= o.category < scene.num_categories:
            raise CategoryRangeError(f"object {idx} has category {o.category} outside [0, {scene.num_categories})")
    n = len(scene.objects)
    seen = set()
    for t in scene.triplets:
        if len(t) != 3:
            raise InvalidTripletError(f"triplet {t} must have three entries")
        i, j, k = t
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidTripletError(f"triplet {t} references an object outside [0, {n})")
        if i == j:
            raise InvalidTripletError(f"triplet {t} relates an object to itself")
        if not 0 <= k < scene.num_relations:
            raise RelationRangeError(f"triplet {t} has relation id {k} outside [0, {scene.num_relations})")
        if t in seen:
            raise InvalidTripletError(f"duplicate triplet {t}")
        seen.add(t)


# ----------------------------------------------------------------- masks

def rle_encode(mask: np.ndarray) -> dict:
    m = np.asarray(mask, dtype=bool)
    flat = m.ravel()
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    counts = np.diff(np.concatenate([[0], edges, [flat.size]])).tolist()
    if flat.size and flat[0]:
        counts.insert(0, 0)
    return {"size": list(m.shape), "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = [int(c) for c in rle["counts"]]
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise SceneShapeError(f"RLE counts sum to {sum(counts)}, expected {h * w} for size {h}x{w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    for n, c in enumerate(counts):
        if n % 2:
            flat[pos:pos + c] = True
        pos += c
    return flat.reshape(h, w)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resample; each target cell samples the source cell under its centre."""
    h, w = mask.shape
    th, tw = size
    if (h, w) == (th, tw):
        return mask
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(int), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(int), w - 1)
    return mask[np.ix_(rows, cols)]


def mask_to_bbox(mask: np.ndarray) -> np.ndarray:
    """Tight box ``[cx, cy, w, h]`` in cell units; a cell (r, c) spans [c, c+1) x [r, r+1)."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    x0, x1 = cols[0], cols[-1] + 1
    y0, y1 = rows[0], rows[-1] + 1
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], dtype=np.float64)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


# ----------------------------------------------------------------- file format

def save_scene(scene: Scene, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    d, fh, fw = scene.feature_map.shape
    h, w = scene.image_size
    manifest = {
        "format": SCENE_FORMAT,
        "height": h,
        "width": w,
        "feature_height": fh,
        "feature_width": fw,
        "feature_dim": d,
        "num_categories": scene.num_categories,
        "num_relations": scene.num_relations,
        "vocabulary": scene.vocabulary,
        "objects": [{"category": o.category, "mask": rle_encode(o.mask)} for o in scene.objects],
        "triplets": [list(t) for t in scene.triplets],
        "feature_map": FEATURE_BLOB,
    }
    if scene.meta:
        manifest["meta"] = scene.meta
    (path / MANIFEST).write_text(json.dumps(manifest, sort_keys=True) + "\n")
    (path / FEATURE_BLOB).write_bytes(np.ascontiguousarray(scene.feature_map, dtype="<f4").tobytes())


def load_scene(path, vocabulary: Vocabulary | None = None) -> Scene:
    """Read and validate a scene directory.

    When ``vocabulary`` is given, the declared C and K must match it.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise MissingBlobError(f"{path}: no {MANIFEST}") from None
    try:
        h, w = int(manifest["height"]), int(manifest["width"])
        fh, fw, d = int(manifest["feature_height"]), int(manifest["feature_width"]), int(manifest["feature_dim"])
        c, k = int(manifest["num_categories"]), int(manifest["num_relations"])
        objects_json = manifest["objects"]
        triplets = [tuple(t) for t in manifest["triplets"]]
    except KeyError as e:
        raise SceneError(f"{path}/{MANIFEST}: missing field {e.args[0]!r}") from None
    if vocabulary is not None and (vocabulary.num_objects, vocabulary.num_relations) != (c, k):
        raise SceneError(f"{path}: declares C={c}, K={k} but vocabulary has C={vocabulary.num_objects}, "
                         f"K={vocabulary.num_relations}")
    if min(h, w, fh, fw, d) <= 0:
        raise SceneShapeError(f"{path}: non-positive dimension in manifest")

    blob_path = path / manifest.get("feature_map", FEATURE_BLOB)
    if not blob_path.is_file():
        raise MissingBlobError(f"{path}: feature blob {blob_path.name} is missing")
    raw = blob_path.read_bytes()
    if len(raw) != 4 * d * fh * fw:
        raise SceneShapeError(f"{path}: feature blob has {len(raw)} bytes, expected {4 * d * fh * fw} "
                              f"for shape ({d}, {fh}, {fw})")
    fmap = np.frombuffer(raw, dtype="<f4").reshape(d, fh, fw).astype(np.float32)

    objects = []
    for idx, o in enumerate(objects_json):
        mask = rle_decode(o["mask"])
        if mask.shape != (h, w):
            raise SceneShapeError(f"{path}: object {idx} mask is {mask.shape}, scene is ({h}, {w})")
        if not mask.any():
            raise EmptyMaskError(f"{path}: object {idx} has an empty mask")
        if not resize_mask(mask, (fh, fw)).any():
            raise EmptyMaskError(f"{path}: object {idx} mask vanishes at feature resolution {fh}x{fw}")
        objects.append(ObjectInstance(int(o["category"]), mask))
    try:
        return Scene(fmap, objects, triplets, c, k, manifest.get("vocabulary"), manifest.get("meta", {}))
    except SceneError as e:
        raise type(e)(f"{path}: {e}") from None


def list_scene_dirs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / MANIFEST).is_file())
