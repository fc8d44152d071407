"""Accuracy scoring for math test sets, pairwise win-rate judging with
order-bias mitigation, and the filter-quality report."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import client, refine
from .client import CompletionParams, ModelEndpoint
from .errors import FeedbackParseError, NoAnswerFound
from .parsing import Domain, extract_final_answer, parse_judge_verdict


@dataclass(frozen=True)
class TestItem:
    id: str
    question: str
    gold_answer: Optional[str] = None  # always present for math items


def load_testset(path: str | Path) -> list[TestItem]:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        gold = obj.get("gold_answer")
        items.append(
            TestItem(
                id=str(obj["id"]),
                question=obj["question"],
                gold_answer=str(gold) if gold is not None else None,
            )
        )
    return items


STRATEGIES = ("direct", "sr", "sc", "sc-sr")


def run_strategy(
    endpoint: ModelEndpoint,
    question: str,
    strategy: str,
    k: int,
    params: CompletionParams,
    domain: Domain = Domain.MATH,
) -> str:
    """Run one inference strategy and return the final response text."""
    if strategy == "direct":
        return refine.generate_direct(endpoint, question, params).refined_response
    if strategy == "sr":
        return refine.self_refine(endpoint, question, params, domain).refined_response
    if strategy == "sc":
        return refine.self_consistency(endpoint, question, k, params).final_text
    if strategy == "sc-sr":
        return refine.self_consistency_with_refinement(
            endpoint, question, k, params, domain
        ).final_text
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass(frozen=True)
class ItemScore:
    id: str
    correct: bool
    predicted: Optional[str]
    note: str = ""


@dataclass(frozen=True)
class AccuracyResult:
    accuracy: float
    per_item: tuple[ItemScore, ...]


def eval_accuracy(
    endpoint: ModelEndpoint,
    testset: list[TestItem],
    strategy: str,
    k: int = 5,
    params: CompletionParams | None = None,
    domain: Domain = Domain.MATH,
    max_workers: int = 8,
) -> AccuracyResult:
    """Exact-match accuracy of a strategy over a math test set.

    Items whose final text carries no extractable answer count as incorrect and
    are logged as such.
    """
    params = params or CompletionParams()

    def score(item: TestItem) -> ItemScore:
        if item.gold_answer is None:
            raise ValueError(f"item {item.id} has no gold answer")
        try:
            text = run_strategy(endpoint, item.question, strategy, k, params, domain)
            answer = extract_final_answer(text)
        except NoAnswerFound:
            return ItemScore(id=item.id, correct=False, predicted=None, note="no_answer")
        return ItemScore(
            id=item.id,
            correct=answer.matches(item.gold_answer),
            predicted=str(answer.value),
        )

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        scores = list(pool.map(score, testset))
    accuracy = sum(s.correct for s in scores) / len(scores) if scores else 0.0
    return AccuracyResult(accuracy=accuracy, per_item=tuple(scores))


@dataclass(frozen=True)
class ItemVerdict:
    id: str
    orderings: tuple[str, str]  # verdict with A first, verdict with B first
    aggregate: str  # "a" | "b" | "tie"


@dataclass(frozen=True)
class WinRateResult:
    wins: int
    ties: int
    losses: int
    per_item: tuple[ItemVerdict, ...]


def _judge_once(
    judge: ModelEndpoint, question: str, first: str, second: str, params: CompletionParams
) -> str:
    prompt = client.render_judge_prompt(question, first, second)
    completion = client.complete(judge, prompt, params)[0]
    return parse_judge_verdict(completion)


def eval_winrate(
    endpoint_a: ModelEndpoint,
    endpoint_b: ModelEndpoint,
    judge: ModelEndpoint,
    testset: list[TestItem],
    params: CompletionParams | None = None,
    max_workers: int = 8,
) -> WinRateResult:
    """Pairwise comparison with order-bias mitigation.

    Each item is judged twice, once per presentation order; a side wins only if
    it is preferred in both orderings, anything else is a tie. A judge that is a
    pure function of position therefore always produces ties.
    """
    params = params or CompletionParams()

    def judge_item(item: TestItem) -> ItemVerdict:
        resp_a = refine.generate_direct(endpoint_a, item.question, params).refined_response
        resp_b = refine.generate_direct(endpoint_b, item.question, params).refined_response
        try:
            v1 = _judge_once(judge, item.question, resp_a, resp_b, params)  # A first
            v2 = _judge_once(judge, item.question, resp_b, resp_a, params)  # B first
        except FeedbackParseError:
            return ItemVerdict(id=item.id, orderings=("?", "?"), aggregate="tie")
        a_pref = (v1 == "1", v2 == "2")
        b_pref = (v1 == "2", v2 == "1")
        if all(a_pref):
            aggregate = "a"
        elif all(b_pref):
            aggregate = "b"
        else:
            aggregate = "tie"
        return ItemVerdict(id=item.id, orderings=(v1, v2), aggregate=aggregate)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        verdicts = list(pool.map(judge_item, testset))
    return WinRateResult(
        wins=sum(v.aggregate == "a" for v in verdicts),
        ties=sum(v.aggregate == "tie" for v in verdicts),
        losses=sum(v.aggregate == "b" for v in verdicts),
        per_item=tuple(verdicts),
    )


@dataclass(frozen=True)
class FilterReport:
    size_before: int
    size_after: int
    acc_before: Optional[float]
    acc_after: Optional[float]  # None when the filtered set is empty

    def render(self) -> str:
        def fmt(x):
            return "n/a" if x is None else f"{x:.4f}"

        return (
            "filter report\n"
            f"  size: {self.size_before} -> {self.size_after}\n"
            f"  accuracy: {fmt(self.acc_before)} -> {fmt(self.acc_after)}\n"
        )


def _record_accuracy(records, oracle: dict[str, str]) -> Optional[float]:
    if not records:
        return None
    correct = 0
    for rec in records:
        gold = oracle.get(rec.prompt)
        try:
            ok = gold is not None and extract_final_answer(rec.refined_response).matches(gold)
        except NoAnswerFound:
            ok = False
        correct += ok
    return correct / len(records)


def filter_report(unfiltered_records, filtered_records, oracle: dict[str, str]) -> FilterReport:
    """Size and exact-match accuracy of curated data before vs after filtering."""
    return FilterReport(
        size_before=len(unfiltered_records),
        size_after=len(filtered_records),
        acc_before=_record_accuracy(unfiltered_records, oracle),
        acc_after=_record_accuracy(filtered_records, oracle),
    )
