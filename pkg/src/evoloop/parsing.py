"""Deterministic extraction of judgments, ratings, answers, and instruction lists
from free-form model text.

All functions here are pure; the same text always parses the same way. Qualification
of feedback (the data-curation filter) lives here too so every caller shares one rule.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum

from .errors import (
    AmbiguousJudgment,
    InvalidRating,
    MissingJudgment,
    MissingRating,
    MissingVerdict,
    NoAnswerFound,
    NoInstructionsFound,
)


class Domain(Enum):
    MATH = "math"
    GENERAL = "general"


class Verdict(Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


@dataclass(frozen=True)
class Judgment:
    verdict: Verdict
    raw_span: tuple[int, int]


@dataclass(frozen=True)
class Rating:
    value: int
    raw_span: tuple[int, int]


@dataclass(frozen=True)
class ExtractedAnswer:
    """A numeric answer, compared exactly (no float rounding)."""

    value: Decimal
    source_span: tuple[int, int]

    def matches(self, other: "ExtractedAnswer | Decimal | str") -> bool:
        if isinstance(other, ExtractedAnswer):
            return self.value == other.value
        if isinstance(other, Decimal):
            return self.value == other
        return self.value == Decimal(canonicalize_answer(other))


# Both spellings occur in the wild (prompts use "judgment", annotators often
# write "judgement"), so accept either, case-insensitively.
_JUDGMENT_RE = re.compile(r"judge?ment\s*:\s*([A-Za-z]+)", re.IGNORECASE)
_RATING_RE = re.compile(r"rating\s*:\s*(-?\d+)", re.IGNORECASE)
_GOLD_MARKER_RE = re.compile(r"####\s*(\S+)")
_NUMBER_RE = re.compile(r"[-+]?\$?\d[\d,]*(?:\.\d+)?%?|[-+]?\$?\.\d+%?")


def parse_math_judgment(feedback: str) -> Judgment:
    """Parse the correct/incorrect verdict from math-domain feedback.

    The verdict is the token immediately following a "judgment:" (or
    "judgement:") marker. With several markers carrying the same verdict the
    last one wins; conflicting verdicts are an error rather than a guess.
    """
    if not feedback:
        raise MissingJudgment("empty feedback")
    matches = list(_JUDGMENT_RE.finditer(feedback))
    if not matches:
        raise MissingJudgment("no judgment marker in feedback")
    verdicts = [
        Verdict.CORRECT if m.group(1).lower() == "correct" else Verdict.INCORRECT
        for m in matches
    ]
    if len(set(verdicts)) > 1:
        raise AmbiguousJudgment(
            f"conflicting verdicts across {len(matches)} judgment markers"
        )
    last = matches[-1]
    return Judgment(verdict=verdicts[-1], raw_span=(last.start(), last.end()))


def parse_general_rating(feedback: str) -> Rating:
    """Parse the first 1..10 integer following a "Rating:" marker."""
    if not feedback:
        raise MissingRating("empty feedback")
    m = _RATING_RE.search(feedback)
    if m is None:
        raise MissingRating("no rating marker in feedback")
    value = int(m.group(1))
    if not 1 <= value <= 10:
        raise InvalidRating(f"rating {value} outside 1..10")
    return Rating(value=value, raw_span=(m.start(), m.end()))


def qualified(feedback: str, domain: Domain) -> bool:
    """Decide whether feedback admits a self-curated record into training data.

    Math: the judgment must be correct. General: the rating must be >= 7.
    Parser errors propagate so callers can count parse failures separately
    from not-qualified.
    """
    if domain is Domain.MATH:
        return parse_math_judgment(feedback).verdict is Verdict.CORRECT
    return parse_general_rating(feedback).value >= 7


def canonicalize_answer(token: str) -> str:
    """Strip surface noise ($ , %) and trailing punctuation from a numeric token.

    Idempotent: applying it twice equals applying it once.
    """
    s = token.replace(",", "")
    while True:
        prev = s
        s = s.strip()
        s = s.lstrip("$")
        if s.startswith(("+", "-")):
            s = s[0] + s[1:].lstrip("$")
        s = s.rstrip("%.")
        if s == prev:
            return s


def extract_final_answer(response: str) -> ExtractedAnswer:
    """Extract the final numeric answer from a math response.

    A "#### <number>" line takes precedence (gold-annotation convention);
    otherwise the last number in the text wins. Comparison is exact decimal.
    """
    if not response:
        raise NoAnswerFound("empty response")
    gold_matches = list(_GOLD_MARKER_RE.finditer(response))
    candidates = gold_matches[-1:] if gold_matches else list(_NUMBER_RE.finditer(response))
    for m in reversed(candidates):
        raw = m.group(1) if gold_matches else m.group(0)
        try:
            value = Decimal(canonicalize_answer(raw))
        except InvalidOperation:
            continue
        return ExtractedAnswer(value=value, source_span=(m.start(), m.end()))
    raise NoAnswerFound("no numeric token in response")


_INSTRUCTION_ITEM_RE = re.compile(r"^\s*([ABC])\.\s*", re.MULTILINE)


def parse_instruction_list(completion: str) -> list[str]:
    """Parse instructions listed after "A." / "B." / "C." markers.

    Partial lists are accepted; empty items are dropped. At most 3 items.
    """
    if not completion:
        raise NoInstructionsFound("empty completion")
    markers = list(_INSTRUCTION_ITEM_RE.finditer(completion))
    items: list[str] = []
    for i, m in enumerate(markers):
        end = markers[i + 1].start() if i + 1 < len(markers) else len(completion)
        text = completion[m.end():end].strip()
        if text:
            items.append(text)
    items = items[:3]
    if not items:
        raise NoInstructionsFound("no A./B./C. items in completion")
    return items


_JUDGE_VERDICT_RE = re.compile(r"better\s*:\s*(1|2|tie)", re.IGNORECASE)


def parse_judge_verdict(completion: str) -> str:
    """Parse a pairwise judge's "better: 1/2/tie" verdict. Last marker wins."""
    matches = list(_JUDGE_VERDICT_RE.finditer(completion or ""))
    if not matches:
        raise MissingVerdict("no 'better:' marker in judge completion")
    return matches[-1].group(1).lower()
