import sys

import numpy as np
import pytest

from vlprompt.language import MockChat, MockEncoder, build_feature_db
from vlprompt.scene import Vocabulary
from vlprompt.synth import SynthParams, synth_knowledge, synth_scene, synth_vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_vocab():
    return Vocabulary(["person", "horse", "rock"], ["riding", "near"])


@pytest.fixture(scope="session")
def toy_setup():
    """32 synthetic scenes plus mock RP/RJ databases carrying the planted category signal."""
    params = SynthParams()
    vocab = synth_vocabulary(params.num_categories, params.num_relations)
    scenes = [synth_scene(s, params) for s in range(32)]
    llm = MockChat(0, synth_knowledge(params, vocab))
    enc = MockEncoder(64)
    db_rp = build_feature_db(vocab, llm, enc, "rp")
    db_rj = build_feature_db(vocab, llm, enc, "rj")
    return params, vocab, scenes, db_rp, db_rj


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
