from pathlib import Path

import pytest

from vlprompt.config import demo_vocabulary
from vlprompt.language import build_rj_prompt, build_rp_prompt, render_dialogue
from vlprompt.language.prompts import DialogueMessage
from vlprompt.scene import VocabularyError

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def vocab():
    return demo_vocabulary()


def test_rp_final_turn(vocab):
    msgs = build_rp_prompt("person", "motorcycle", vocab)
    assert msgs[-1] == DialogueMessage("user", "The subject is a person, and the object is a motorcycle.")


def test_rp_relation_list_turn(vocab):
    turn = build_rp_prompt("person", "horse", vocab)[2]
    assert turn.role == "user" and turn.content.startswith("They are 'over', 'in front of', ")
    body = turn.content[len("They are "):-1]
    items = body.split(", ")
    assert [i.strip("'") for i in items] == list(vocab.relation_names)
    assert all(i.startswith("'") and i.endswith("'") for i in items)


def test_rp_contains_sports_ball_example(vocab):
    text = render_dialogue(build_rp_prompt("person", "motorcycle", vocab))
    assert "the subject is a person, and the object is a sports ball" in text
    assert "4. Chasing: The person might be chasing after the ball." in text


def test_rj_final_turn_and_example(vocab):
    msgs = build_rj_prompt("person", "riding", "motorcycle", vocab)
    assert msgs[-1].content == "The subject is a person, the object is a motorcycle, and the relation is riding."
    text = render_dialogue(msgs)
    assert "the subject is a 'person', the object is a 'sports ball' and the relation is 'playing'" in text


def test_llama_layout_has_no_assistant_after_system(vocab):
    for msgs in (build_rp_prompt("person", "motorcycle", vocab, llama=True),
                 build_rj_prompt("person", "riding", "motorcycle", vocab, llama=True)):
        assert msgs[0].role == "system" and msgs[1].role == "user"
    for msgs in (build_rp_prompt("person", "motorcycle", vocab),
                 build_rj_prompt("person", "riding", "motorcycle", vocab)):
        assert msgs[1].role == "assistant"


@pytest.mark.parametrize("name,build", [
    ("rp_gpt_person_motorcycle", lambda v: build_rp_prompt("person", "motorcycle", v)),
    ("rp_llama_person_motorcycle", lambda v: build_rp_prompt("person", "motorcycle", v, llama=True)),
    ("rj_gpt_person_riding_motorcycle", lambda v: build_rj_prompt("person", "riding", "motorcycle", v)),
    ("rj_llama_person_riding_motorcycle", lambda v: build_rj_prompt("person", "riding", "motorcycle", v, llama=True)),
])
def test_golden_transcriptions(vocab, name, build):
    assert render_dialogue(build(vocab)) == (GOLDEN / f"{name}.txt").read_text()


def test_unknown_names_rejected(vocab):
    with pytest.raises(VocabularyError):
        build_rp_prompt("person", "unicorn", vocab)
    with pytest.raises(VocabularyError):
        build_rj_prompt("person", "juggling", "horse", vocab)


def test_relation_count_substituted():
    from vlprompt.scene import Vocabulary
    v = Vocabulary(["a", "b"], ["on", "in"])
    msgs = build_rp_prompt("a", "b", v)
    assert "pre-defined 2 different types" in msgs[0].content
    assert msgs[1].content == "What are the 2 relations?"


def test_message_validation():
    with pytest.raises(ValueError):
        DialogueMessage("tool", "x")
    with pytest.raises(ValueError):
        DialogueMessage("user", "")


def test_rendering_is_pure(vocab):
    a = render_dialogue(build_rp_prompt("horse", "rock", vocab))
    assert a == render_dialogue(build_rp_prompt("horse", "rock", vocab))
