import json

import numpy as np
import pytest

from vlprompt.language import (
    BackendError,
    FeatureDB,
    FeatureDBError,
    IncompleteBuildError,
    MetadataMismatchError,
    MissingKeyError,
    MockChat,
    MockEncoder,
    build_feature_db,
    retrieve,
)
from vlprompt.language.featuredb import DescriptionRecord, RateLimiter, expected_keys
from vlprompt.scene import Vocabulary
from vlprompt.vision import pair_index


class Flaky(MockChat):
    """Mock chat that starts failing after ``budget`` calls."""

    def __init__(self, budget):
        super().__init__(0)
        self.budget = budget

    def __call__(self, messages):
        if self.calls >= self.budget:
            raise BackendError("endpoint unavailable")
        return super().__call__(messages)


def build(vocab, kind, **kw):
    return build_feature_db(vocab, MockChat(0), MockEncoder(16), kind, **kw)


def test_counts_for_three_categories_two_relations(small_vocab):
    assert len(build(small_vocab, "rp")) == 6
    assert len(build(small_vocab, "rj")) == 12


def test_same_category_toggle(small_vocab):
    assert len(build(small_vocab, "rp", same_category=True)) == 9
    assert len(build(small_vocab, "rj", same_category=True)) == 18


def test_completed_rp_descriptions_mention_all_relations(small_vocab):
    db = build(small_vocab, "rp")
    for key, text in db.texts.items():
        for r in small_vocab.relation_names:
            assert r in text, (key, r)


def test_rebuild_over_complete_db_makes_no_calls(small_vocab):
    db = build(small_vocab, "rj")
    llm, enc = MockChat(0), MockEncoder(16)
    again = build_feature_db(small_vocab, llm, enc, "rj", existing=db)
    assert llm.calls == 0 and enc.calls == 0 and len(again) == 12


@pytest.mark.parametrize("kind", ["rp", "rj"])
def test_interrupted_then_resumed_is_byte_identical(tmp_path, small_vocab, kind):
    full = tmp_path / "full.jsonl"
    build(small_vocab, kind, path=full)
    part = tmp_path / "part.jsonl"
    total = len(expected_keys(small_vocab, kind))
    with pytest.raises(IncompleteBuildError) as err:
        build_feature_db(small_vocab, Flaky(total // 2), MockEncoder(16), kind, path=part)
    assert len(err.value.missing) == total - total // 2
    assert json.loads(part.read_text().splitlines()[0])["count"] == total // 2
    build(small_vocab, kind, path=part)
    assert part.read_bytes() == full.read_bytes()


def test_staged_limit_then_resume(tmp_path, small_vocab):
    p = tmp_path / "db.jsonl"
    build(small_vocab, "rj", path=p, limit=5)
    assert len(FeatureDB.load(p)) == 5
    build(small_vocab, "rj", path=p)
    q = tmp_path / "ref.jsonl"
    build(small_vocab, "rj", path=q)
    assert p.read_bytes() == q.read_bytes()


def test_parallel_build_matches_serial(tmp_path, small_vocab):
    build(small_vocab, "rj", path=tmp_path / "a", jobs=1)
    build(small_vocab, "rj", path=tmp_path / "b", jobs=4, rate_limit=1000.0)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_save_load_bit_exact(tmp_path, small_vocab, rng):
    db = FeatureDB("rp", 4, "enc", small_vocab.digest)
    special = np.array([np.float32(1) / 3, -0.0, np.finfo(np.float32).tiny, 1e38], dtype=np.float32)
    db.add("person#horse", special, "text")
    db.add("horse#person", rng.normal(size=4).astype(np.float32))
    db.save(tmp_path / "db")
    back = FeatureDB.load(tmp_path / "db", small_vocab, "enc")
    assert sorted(back.entries) == sorted(db.entries)
    for k in db.entries:
        assert back.entries[k].tobytes() == db.entries[k].tobytes()
    assert back.texts["person#horse"] == "text"


def test_metadata_mismatch(tmp_path, small_vocab):
    build(small_vocab, "rp", path=tmp_path / "db")
    with pytest.raises(MetadataMismatchError):
        FeatureDB.load(tmp_path / "db", Vocabulary(["person", "horse", "rock"], ["riding", "above"]))
    with pytest.raises(MetadataMismatchError):
        FeatureDB.load(tmp_path / "db", small_vocab, encoder_id="other-encoder")
    with pytest.raises(MetadataMismatchError):
        FeatureDB.load(tmp_path / "db", kind="rj")
    with pytest.raises(MetadataMismatchError):
        build_feature_db(small_vocab, MockChat(0), MockEncoder(16, seed=9), "rp", path=tmp_path / "db")


def test_malformed_file(tmp_path):
    (tmp_path / "db").write_text("not json\n")
    with pytest.raises(FeatureDBError):
        FeatureDB.load(tmp_path / "db")


def test_vector_dimension_enforced(small_vocab):
    db = FeatureDB("rp", 4, "enc", small_vocab.digest)
    with pytest.raises(FeatureDBError):
        db.add("person#horse", np.zeros(5))


def test_description_record_keys():
    DescriptionRecord("a#b", "rp", "t")
    DescriptionRecord("a#on#b", "rj", "t")
    with pytest.raises(FeatureDBError):
        DescriptionRecord("a#on#b", "rp", "t")
    with pytest.raises(FeatureDBError):
        DescriptionRecord("a#b", "rj", "t")


def test_retrieve_shapes_and_lookup(small_vocab):
    db_rp, db_rj = build(small_vocab, "rp"), build(small_vocab, "rj")
    f_rp, f_rj = retrieve(db_rp, db_rj, [0, 2], small_vocab)
    assert f_rp.shape == (2, 16) and f_rj.shape == (2, 2, 16)
    cats = [2, 0, 1]
    f_rp, f_rj = retrieve(db_rp, db_rj, cats, small_vocab)
    names = small_vocab.object_names
    for row, (i, j) in enumerate(pair_index(3)):
        s, o = names[cats[i]], names[cats[j]]
        assert f_rp[row].tobytes() == db_rp.entries[f"{s}#{o}"].tobytes()
        for k, r in enumerate(small_vocab.relation_names):
            assert f_rj[row, k].tobytes() == db_rj.entries[f"{s}#{r}#{o}"].tobytes()


def test_same_category_pairs_share_rows(small_vocab):
    db_rp = build(small_vocab, "rp", same_category=True)
    db_rj = build(small_vocab, "rj", same_category=True)
    f_rp, f_rj = retrieve(db_rp, db_rj, [0, 1, 0], small_vocab)  # pairs (0,1) and (2,1) are person -> horse
    assert np.array_equal(f_rp[0], f_rp[5]) and np.array_equal(f_rj[0], f_rj[5])


def test_missing_key_named(small_vocab):
    db_rp, db_rj = build(small_vocab, "rp"), build(small_vocab, "rj")
    with pytest.raises(MissingKeyError, match="person#person"):
        retrieve(db_rp, db_rj, [0, 0], small_vocab)


def test_rate_limiter_spacing():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    lim = RateLimiter(4.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        lim.wait()
    assert slept == [0.25, 0.25]
