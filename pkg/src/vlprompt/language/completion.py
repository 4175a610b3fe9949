"""Completing proposer descriptions so that every relation name is mentioned."""
from __future__ import annotations

import re

from ..scene import Vocabulary

# "3. About to hit: ..." style list items
_ITEM = re.compile(r"(?:^|(?<=\s))\d{1,3}\.\s+([^:\n]{1,80}?)\s*:")


def _normalise(phrase: str) -> str:
    return " ".join(re.sub(r"[*_'\"`]", " ", phrase).lower().split())


def _phrase_pattern(name: str) -> re.Pattern:
    words = [re.escape(w) for w in name.split()]
    return re.compile(r"(?<![\w-])" + r"\s+".join(words) + r"(?![\w-])", re.IGNORECASE)


def proposed_relations(text: str, relation_names) -> list[str]:
    """Relation names the description proposes, in vocabulary order.

    When the text is an enumerated list (``1. Name: reason ...``), a relation
    counts as proposed iff some item heading equals its name, ignoring case
    and markup. Otherwise a case-insensitive whole-phrase occurrence anywhere
    in the text counts.
    """
    headings = {_normalise(h) for h in _ITEM.findall(text)}
    if headings:
        return [r for r in relation_names if _normalise(r) in headings]
    return [r for r in relation_names if _phrase_pattern(r).search(text)]


def absent_sentence(subject: str, object_: str, relation: str) -> str:
    return f"It is not likely for {subject} and {object_} to have relation {relation}."


def complete_rp_description(text: str, subject: str, object_: str, vocabulary: Vocabulary) -> str:
    proposed = set(proposed_relations(text, vocabulary.relation_names))
    extra = [absent_sentence(subject, object_, r) for r in vocabulary.relation_names if r not in proposed]
    if not extra:
        return text
    body = text.rstrip()
    return (body + " " if body else "") + " ".join(extra)
