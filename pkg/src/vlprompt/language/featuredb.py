"""Keyed store of language prompting features and its builder.

File layout: the first line is a JSON header
``{"format", "kind", "dim", "encoder_id", "vocab_digest", "count"}``; each
following line is one entry ``{"key", "text", "values"}`` with entries sorted
by key. ``values`` holds each float32 as the 8-digit hex string of its IEEE-754
bit pattern, which keeps save/load bit-exact independently of decimal
formatting.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..scene import Vocabulary
from .backends import encode_description, llm_chat
from .completion import complete_rp_description
from .prompts import build_rj_prompt, build_rp_prompt

log = logging.getLogger(__name__)

FORMAT = "vlprompt-featuredb/1"
KINDS = ("rp", "rj")


class FeatureDBError(ValueError):
    pass


class MetadataMismatchError(FeatureDBError):
    pass


class MissingKeyError(FeatureDBError, KeyError):
    def __init__(self, keys):
        self.keys = list(keys)
        shown = ", ".join(self.keys[:10]) + (" ..." if len(self.keys) > 10 else "")
        super().__init__(f"{len(self.keys)} feature key(s) missing: {shown}")

    def __str__(self) -> str:
        return self.args[0]


class IncompleteBuildError(FeatureDBError):
    def __init__(self, missing: list[str], done: int, cause: BaseException):
        self.missing = missing
        self.done = done
        super().__init__(f"build stopped after {done} entries, {len(missing)} missing "
                         f"(first: {missing[:5]}): {cause}")


@dataclass(frozen=True)
class DescriptionRecord:
    key: str
    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FeatureDBError(f"kind must be one of {KINDS}, got {self.kind!r}")
        want = 2 if self.kind == "rp" else 3
        parts = self.key.split("#")
        if len(parts) != want or not all(parts):
            raise FeatureDBError(f"{self.kind} key must have {want} '#'-separated segments, got {self.key!r}")


def rp_key(subject: str, object_: str) -> str:
    return f"{subject}#{object_}"


def rj_key(subject: str, relation: str, object_: str) -> str:
    return f"{subject}#{relation}#{object_}"


def rp_keys(vocabulary: Vocabulary, same_category: bool = False) -> list[str]:
    names = vocabulary.object_names
    return [rp_key(s, o) for s in names for o in names if same_category or s != o]


def rj_keys(vocabulary: Vocabulary, same_category: bool = False) -> list[str]:
    names = vocabulary.object_names
    return [rj_key(s, r, o) for s in names for r in vocabulary.relation_names for o in names
            if same_category or s != o]


def expected_keys(vocabulary: Vocabulary, kind: str, same_category: bool = False) -> list[str]:
    if kind == "rp":
        return rp_keys(vocabulary, same_category)
    if kind == "rj":
        return rj_keys(vocabulary, same_category)
    raise FeatureDBError(f"kind must be one of {KINDS}, got {kind!r}")


def _hex(vec: np.ndarray) -> list[str]:
    return [f"{u:08x}" for u in np.asarray(vec, dtype="<f4").view("<u4").tolist()]


def _unhex(values: list[str]) -> np.ndarray:
    return np.array([int(v, 16) for v in values], dtype="<u4").view("<f4").astype(np.float32)


@dataclass
class FeatureDB:
    kind: str
    dim: int
    encoder_id: str
    vocab_digest: str
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    texts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FeatureDBError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.dim < 1:
            raise FeatureDBError("dim must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def add(self, key: str, vector: np.ndarray, text: str = "") -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise FeatureDBError(f"vector for {key!r} has shape {vector.shape}, expected ({self.dim},)")
        DescriptionRecord(key, self.kind, text or "-")
        self.entries[key] = vector
        self.texts[key] = text

    def get(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingKeyError([key]) from None

    def missing(self, keys) -> list[str]:
        return [k for k in keys if k not in self.entries]

    def records(self) -> list[DescriptionRecord]:
        return [DescriptionRecord(k, self.kind, self.texts.get(k) or "-") for k in sorted(self.entries)]

    def check_matches(self, vocabulary: Vocabulary, encoder_id: str | None = None) -> None:
        if self.vocab_digest != vocabulary.digest:
            raise MetadataMismatchError(f"{self.kind} DB was built for vocabulary {self.vocab_digest[:12]}, "
                                        f"not {vocabulary.digest[:12]}")
        if encoder_id is not None and self.encoder_id != encoder_id:
            raise MetadataMismatchError(f"{self.kind} DB was built with encoder {self.encoder_id!r}, "
                                        f"not {encoder_id!r}")

    def save(self, path) -> None:
        header = {"format": FORMAT, "kind": self.kind, "dim": self.dim, "encoder_id": self.encoder_id,
                  "vocab_digest": self.vocab_digest, "count": len(self.entries)}
        lines = [json.dumps(header, sort_keys=True)]
        for key in sorted(self.entries):
            lines.append(json.dumps({"key": key, "text": self.texts.get(key, ""),
                                     "values": _hex(self.entries[key])}, sort_keys=True))
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path, vocabulary: Vocabulary | None = None, encoder_id: str | None = None,
             kind: str | None = None) -> "FeatureDB":
        path = Path(path)
        if not path.exists():
            raise FeatureDBError(f"feature DB {path} does not exist")
        lines = path.read_text().splitlines()
        try:
            header = json.loads(lines[0])
            if header.get("format") != FORMAT:
                raise FeatureDBError(f"{path}: unknown format {header.get('format')!r}")
            db = cls(header["kind"], int(header["dim"]), header["encoder_id"], header["vocab_digest"])
            for n, line in enumerate(lines[1:], 2):
                row = json.loads(line)
                db.add(row["key"], _unhex(row["values"]), row.get("text", ""))
        except (IndexError, KeyError, ValueError, TypeError) as e:
            if isinstance(e, FeatureDBError):
                raise
            raise FeatureDBError(f"{path}: malformed feature DB ({e})") from None
        if len(db) != header["count"]:
            raise FeatureDBError(f"{path}: header declares {header['count']} entries, found {len(db)}")
        if kind is not None and db.kind != kind:
            raise MetadataMismatchError(f"{path} holds {db.kind} features, expected {kind}")
        if vocabulary is not None:
            db.check_matches(vocabulary, encoder_id)
        elif encoder_id is not None and db.encoder_id != encoder_id:
            raise MetadataMismatchError(f"{path}: built with encoder {db.encoder_id!r}, not {encoder_id!r}")
        return db


class RateLimiter:
    """Spaces call starts at least ``1 / per_second`` apart across threads."""

    def __init__(self, per_second: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._clock, self._sleep = clock, sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self._sleep(start - now)


def describe(key: str, kind: str, vocabulary: Vocabulary, llm, llama: bool = False) -> str:
    """LLM description for one key; RP descriptions are completed to mention every relation."""
    parts = key.split("#")
    if kind == "rp":
        subject, object_ = parts
        text = llm_chat(build_rp_prompt(subject, object_, vocabulary, llama=llama), llm)
        return complete_rp_description(text, subject, object_, vocabulary)
    subject, relation, object_ = parts
    return llm_chat(build_rj_prompt(subject, relation, object_, vocabulary, llama=llama), llm)


def build_feature_db(vocabulary: Vocabulary, llm, encoder, kind: str, *, existing: FeatureDB | None = None,
                     path=None, same_category: bool = False, jobs: int = 1, rate_limit: float | None = None,
                     llama: bool = False, limit: int | None = None) -> FeatureDB:
    """Fill a feature DB for every key of ``kind``, skipping keys already present.

    ``existing`` (or the file at ``path``, when it exists) is resumed. With
    ``limit`` at most that many new entries are produced, which is how a
    partial build is staged. When a backend call fails the partial DB is
    saved to ``path`` (if given) and :class:`IncompleteBuildError` lists the
    missing keys.
    """
    if jobs < 1:
        raise FeatureDBError("jobs must be at least 1")
    encoder_id = encoder.encoder_id
    if existing is None and path is not None and Path(path).exists():
        existing = FeatureDB.load(path, vocabulary, encoder_id, kind)
    if existing is not None:
        existing.check_matches(vocabulary, encoder_id)
        if existing.kind != kind:
            raise MetadataMismatchError(f"cannot resume a {existing.kind} DB as {kind}")
    db = existing or FeatureDB(kind, _probe_dim(encoder), encoder_id, vocabulary.digest)

    todo = db.missing(expected_keys(vocabulary, kind, same_category))
    if limit is not None:
        todo = todo[:limit]
    limiter = RateLimiter(rate_limit)

    def work(key: str):
        limiter.wait()
        text = describe(key, kind, vocabulary, llm, llama)
        return key, text, encode_description(text, encoder)

    error: BaseException | None = None
    try:
        if jobs == 1:
            for key in todo:
                db.add(*_reorder(work(key)))
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(work, k) for k in todo]
                for fut in futures:
                    try:
                        db.add(*_reorder(fut.result()))
                    except Exception as e:  # keep collecting finished work
                        error = error or e
    except Exception as e:
        error = e
    if path is not None:
        db.save(path)
    if error is not None:
        missing = db.missing(expected_keys(vocabulary, kind, same_category))
        raise IncompleteBuildError(missing, len(db), error) from error
    log.info("%s DB: %d entries (%d new)", kind, len(db), len(todo))
    return db


def _reorder(result):
    key, text, vec = result
    return key, vec, text


def _probe_dim(encoder) -> int:
    dim = getattr(encoder, "dim", None)
    if dim is None:
        dim = int(encoder.encode("dimension probe").shape[0])
    return int(dim)


def retrieve(db_rp: FeatureDB, db_rj: FeatureDB, categories, vocabulary: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Language features for every ordered pair of a scene.

    Returns ``F_L^RP`` (P x D_L) and ``F_L^RJ`` (P x K x D_L) with rows in
    pair order. Raises :class:`MissingKeyError` naming every absent key.
    """
    from ..vision import pair_index

    names = [vocabulary.object_names[c] for c in categories]
    pairs = pair_index(len(names))
    rels = vocabulary.relation_names
    missing = [rp_key(names[i], names[j]) for i, j in pairs if rp_key(names[i], names[j]) not in db_rp]
    missing += [rj_key(names[i], r, names[j]) for i, j in pairs for r in rels
                if rj_key(names[i], r, names[j]) not in db_rj]
    if missing:
        raise MissingKeyError(dict.fromkeys(missing))
    f_rp = np.stack([db_rp.entries[rp_key(names[i], names[j])] for i, j in pairs])
    f_rj = np.stack([np.stack([db_rj.entries[rj_key(names[i], r, names[j])] for r in rels]) for i, j in pairs])
    return f_rp, f_rj
