"""Relation-proposer and relation-judger dialogues.

Two turn layouts exist. The default one suits chat APIs that accept an
assistant turn right after the system turn; ``llama=True`` folds that first
assistant question into the system message, for APIs where the system turn
must be followed by a user turn.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..scene import Vocabulary, VocabularyError

ROLES = ("system", "assistant", "user")


@dataclass(frozen=True)
class DialogueMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}


_RP_SYSTEM = (
    "You are asked to play the role of a relation proposer. Given the category names of two objects in an "
    "image, you are to infer what kind of relation might exist between them based on your knowledge, and "
    "provide the reasons for each possible relation. In the relation between the two objects in the image, "
    "we refer to one object as the subject and the other as the object. There may or may not be a relation "
    "between the subject and the object. Please note that this relation has an order, that is, the subject "
    "comes first and the object comes after. If there is a relation between the two, these relations must "
    "belong to one of the pre-defined {k} different types."
)
_RP_ASK_LIST = "What are the {k} relations?"
_RP_ASK_EXAMPLE = "Can you give me an example?"
_RP_EXAMPLE = (
    "For example, the subject is a person, and the object is a sports ball. The possible relations between "
    "them could be: 1. Beside: The person could be standing beside the sports ball. 2. Looking at: The person "
    "might be looking at the ball to better control it. 3. Playing: This is because it's very common in real "
    "life for a person to be playing with a sports ball. 4. Chasing: The person might be chasing after the ball."
)
_RP_READY = "Ok, I got it. Please give me the subject and object of the image."
_RP_QUERY = "The subject is a {subject}, and the object is a {object}."

_RJ_SYSTEM = (
    "You are asked to play the role of a relation judger. Given the category names of two objects in an "
    "image, and providing you with a relation category name, you need to predict whether this relation is "
    "likely to exist in the image based on your knowledge, and give the reason for its existence. For two "
    "objects, we call the first object subject and the second object object."
)
_RJ_ACK = "Yes, I understand. Can you give me an example?"
_RJ_ASK_EXAMPLE = "Please give me an example."
_RJ_EXAMPLE = (
    "For example, the input is: the subject is a 'person', the object is a 'sports ball' and the relation is "
    "'playing'. The output should be Yes, the relation is likely to exist in the image. This is because it's "
    "very common in real life for a person to be playing with a sports ball."
)
_RJ_READY = "Ok, I got it. Please give me the subject, object and relation names."
_RJ_QUERY = "The subject is a {subject}, the object is a {object}, and the relation is {relation}."


def relation_list_turn(relations) -> str:
    return "They are " + ", ".join(f"'{r}'" for r in relations) + "."


def _check_names(vocabulary: Vocabulary | None, objects=(), relations=()) -> None:
    if vocabulary is None:
        return
    for name in objects:
        if name not in vocabulary.object_names:
            raise VocabularyError(f"unknown object name {name!r}")
    for name in relations:
        if name not in vocabulary.relation_names:
            raise VocabularyError(f"unknown relation name {name!r}")


def build_rp_prompt(subject: str, object_: str, vocabulary: Vocabulary, llama: bool = False) -> list[DialogueMessage]:
    _check_names(vocabulary, objects=(subject, object_))
    k = vocabulary.num_relations
    system = _RP_SYSTEM.format(k=k)
    turns = [("system", system + " " + _RP_ASK_LIST.format(k=k))] if llama else [
        ("system", system), ("assistant", _RP_ASK_LIST.format(k=k))]
    turns += [
        ("user", relation_list_turn(vocabulary.relation_names)),
        ("assistant", _RP_ASK_EXAMPLE),
        ("user", _RP_EXAMPLE),
        ("assistant", _RP_READY),
        ("user", _RP_QUERY.format(subject=subject, object=object_)),
    ]
    return [DialogueMessage(r, c) for r, c in turns]


def build_rj_prompt(subject: str, relation: str, object_: str, vocabulary: Vocabulary | None = None,
                    llama: bool = False) -> list[DialogueMessage]:
    _check_names(vocabulary, objects=(subject, object_), relations=(relation,))
    turns = [("system", _RJ_SYSTEM + " " + _RJ_ASK_EXAMPLE)] if llama else [
        ("system", _RJ_SYSTEM), ("assistant", _RJ_ACK)]
    turns += [
        ("user", _RJ_EXAMPLE),
        ("assistant", _RJ_READY),
        ("user", _RJ_QUERY.format(subject=subject, object=object_, relation=relation)),
    ]
    return [DialogueMessage(r, c) for r, c in turns]


def render_dialogue(messages: list[DialogueMessage]) -> str:
    """One ``role: content`` line per message."""
    return "".join(f"{m.role}: {m.content}\n" for m in messages)
