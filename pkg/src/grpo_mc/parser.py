"""Validation of ``<think>...</think> <answer>...</answer>`` responses and answer extraction."""
from __future__ import annotations

import re
from dataclasses import dataclass

# Span bodies may not contain any tag, which rules out nesting and repeats.
_SPAN = r"(?:(?!</?think>|</?answer>).)*"
RESPONSE_PATTERN = (
    r"^\s*<think>(?P<think>" + _SPAN + r")</think>\s*<answer>(?P<answer>" + _SPAN + r")</answer>\s*$"
)
RESPONSE_RE = re.compile(RESPONSE_PATTERN, re.DOTALL | re.ASCII)

_AND_RE = re.compile(r"\bAND\b")


@dataclass(frozen=True)
class ParsedResponse:
    is_well_formed: bool
    think_span: str = ""
    answer_span: str = ""
    answer_set: frozenset[str] = frozenset()


def _match(text: str):
    m = RESPONSE_RE.fullmatch(text)
    if m is None or not m["think"].strip() or not m["answer"].strip():
        return None
    return m


def validate_format(text: str) -> bool:
    return _match(text) is not None


def normalize_answer(span: str, option_count: int) -> frozenset[str]:
    """Letters named in an answer span, or the empty set if any token is not a valid letter."""
    s = span.upper().replace(",", " ").replace(";", " ")
    s = _AND_RE.sub(" ", s)
    s = s.replace(".", "").replace("(", "").replace(")", "")
    valid = {chr(ord("A") + i) for i in range(option_count)}
    tokens = s.split()
    if not tokens or any(t not in valid for t in tokens):
        return frozenset()
    return frozenset(tokens)


def parse_response(text: str, option_count: int) -> ParsedResponse:
    if not 2 <= option_count <= 26:
        raise ValueError("option_count must be in [2, 26]")
    m = _match(text)
    if m is None:
        return ParsedResponse(False)
    return ParsedResponse(True, m["think"], m["answer"], normalize_answer(m["answer"], option_count))


def extract_answer(text: str, option_count: int) -> frozenset[str]:
    return parse_response(text, option_count).answer_set
