"""Deterministic synthetic model family for offline runs.

Simulates a family of math-domain checkpoints whose direct-generation skill
grows with a per-checkpoint level: the probability of answering correctly is
base_correct + level * gain_per_level, refinement adds refine_boost on top, and
feedback is an oracle (it judges an answer by comparing against the gold).
Every completion is a pure function of (prompt, seed, sample index), so whole
pipeline runs replay byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import client
from .client import MockEndpoint
from .errors import NoAnswerFound
from .parsing import extract_final_answer


@dataclass(frozen=True)
class MathItem:
    id: str
    question: str
    gold: str

    @property
    def wrong(self) -> str:
        # A deterministic plausible-but-wrong answer, distinct from gold.
        try:
            return str(extract_final_answer(self.gold).value + 2)
        except NoAnswerFound:
            return self.gold + "0"


def load_items(path: str | Path) -> list[MathItem]:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        items.append(MathItem(id=str(obj["id"]), question=obj["question"], gold=str(obj["gold_answer"])))
    return items


def direct_answer_text(question: str, answer: str) -> str:
    return f"Working through the problem step by step, the answer is {answer}."


@dataclass
class SyntheticMathFamily:
    """Checkpoint registry plus per-level scripted behavior."""

    items: list[MathItem]
    base_correct: float = 0.4
    gain_per_level: float = 0.2
    refine_boost: float = 0.3
    seed: int = 0
    levels: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._by_question = {it.question: it for it in self.items}

    def register(self, checkpoint_id: str, level: int) -> None:
        self.levels[checkpoint_id] = level

    def correct_prob(self, level: int) -> float:
        return min(1.0, self.base_correct + level * self.gain_per_level)

    def endpoint_for(self, checkpoint_id: str, level: int | None = None) -> MockEndpoint:
        if level is None:
            level = self.levels.get(checkpoint_id, 0)
        self.levels[checkpoint_id] = level
        oracle = {it.question: it.gold for it in self.items}
        fam = self

        def completion_fn(prompt: str, seed: int, index: int, temperature: float) -> str:
            return fam._complete(level, prompt, seed, index)

        return MockEndpoint(
            completion_fn=completion_fn,
            quality_oracle=oracle,
            checkpoint_id=checkpoint_id,
        )

    def _find_item(self, prompt: str) -> MathItem | None:
        for question, item in self._by_question.items():
            if question in prompt:
                return item
        return None

    def _complete(self, level: int, prompt: str, seed: int, index: int) -> str:
        kind = client.classify_template_kind(prompt)
        item = self._find_item(prompt)
        if item is None:
            return "I cannot place this question."
        if kind == "direct":
            # Nested correctness: an item answered correctly at level L stays
            # correct at every higher level, so accuracy is monotone in L.
            u = client._stable_uniform("direct", item.id, self.seed, seed, index)
            answer = item.gold if u < self.correct_prob(level) else item.wrong
            return direct_answer_text(item.question, answer)
        if kind == "feedback_refine":
            return self._feedback_refine(level, item, prompt, seed, index)
        return "Noted."

    def _feedback_refine(
        self, level: int, item: MathItem, prompt: str, seed: int, index: int
    ) -> str:
        # The response under review is embedded in the rendered template.
        try:
            reviewed = extract_final_answer(prompt)
            is_correct = reviewed.matches(item.gold)
        except NoAnswerFound:
            is_correct = False
        if is_correct:
            return (
                "Response Analysis: each step checks out against the question. "
                "judgment: correct"
            )
        u = client._stable_uniform("refine", item.id, self.seed, seed, index)
        refine_prob = min(1.0, self.correct_prob(level) + self.refine_boost)
        refined_answer = item.gold if u < refine_prob else item.wrong
        return (
            "Response Analysis: the final computation does not match the question. "
            "judgment: incorrect\n"
            + direct_answer_text(item.question, refined_answer)
        )
