"""Inference strategies: direct generation, single-round self-refinement with
the keep-rule, self-consistency majority voting, and their combination.

Every strategy returns the full chain traces it ran, so a result can always be
replayed: recomputing the vote from the chains reproduces the final answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

from . import client
from .client import CompletionParams, ModelEndpoint
from .errors import FeedbackParseError, NoAnswerFound
from .parsing import (
    Domain,
    ExtractedAnswer,
    Verdict,
    extract_final_answer,
    parse_general_rating,
    parse_math_judgment,
)


@dataclass(frozen=True)
class RefinementChain:
    """Trace of one generate -> feedback -> refine pass."""

    prompt: str
    initial_response: str
    feedback: str
    refined_response: str
    kept_original: bool
    qualified_flag: Optional[bool] = None
    parse_failed: bool = False
    sample_index: int = 0

    def __post_init__(self):
        if self.kept_original and self.refined_response != self.initial_response:
            raise ValueError("kept_original requires refined == initial, byte-for-byte")


@dataclass(frozen=True)
class StrategyResult:
    strategy: str  # direct | sr | sc | sc-sr
    final_answer: Optional[ExtractedAnswer]
    final_text: str
    chains: tuple[RefinementChain, ...]
    votes: Optional[tuple[Optional[ExtractedAnswer], ...]] = None


def generate_direct(
    endpoint: ModelEndpoint, prompt: str, params: CompletionParams
) -> RefinementChain:
    """One direct completion of the CoT-wrapped prompt; no feedback step."""
    if not prompt:
        raise ValueError("empty prompt")
    if params.num_samples != 1:
        raise ValueError("direct generation takes k = 1")
    text = client.complete(endpoint, client.render_direct_prompt(prompt), params)[0]
    return RefinementChain(
        prompt=prompt,
        initial_response=text,
        feedback="",
        refined_response=text,
        kept_original=True,
    )


def _keep_judgment(feedback: str, domain: Domain) -> bool:
    """True when feedback says the response needs no refinement.

    Math: judged correct. General: rated 10 (a 7..9 rating still gets refined,
    it is merely good enough to qualify for training data).
    """
    if domain is Domain.MATH:
        return parse_math_judgment(feedback).verdict is Verdict.CORRECT
    return parse_general_rating(feedback).value == 10


def refine_response(
    endpoint: ModelEndpoint,
    prompt: str,
    initial: str,
    domain: Domain,
    params: CompletionParams,
    sample_index: int = 0,
) -> RefinementChain:
    """Run the feedback+refine step on an existing initial response."""
    fr_prompt = client.render_feedback_refine_prompt(domain, prompt, initial)
    fr_params = replace(params, num_samples=1, temperature=0.0)
    completion = client.complete(endpoint, fr_prompt, fr_params)[0]
    try:
        split = client.split_feedback_and_refinement(completion, domain)
        keep = _keep_judgment(split.feedback, domain)
    except FeedbackParseError:
        # Conservative fallback: an unparsable feedback never degrades the
        # answer; the failure is flagged so curation stats can count it.
        return RefinementChain(
            prompt=prompt,
            initial_response=initial,
            feedback=completion,
            refined_response=initial,
            kept_original=True,
            parse_failed=True,
            sample_index=sample_index,
        )
    if keep or split.refined is None:
        return RefinementChain(
            prompt=prompt,
            initial_response=initial,
            feedback=split.feedback,
            refined_response=initial,
            kept_original=True,
            sample_index=sample_index,
        )
    return RefinementChain(
        prompt=prompt,
        initial_response=initial,
        feedback=split.feedback,
        refined_response=split.refined,
        kept_original=False,
        sample_index=sample_index,
    )


def self_refine(
    endpoint: ModelEndpoint,
    prompt: str,
    params: CompletionParams,
    domain: Domain = Domain.MATH,
) -> RefinementChain:
    """Generate once, then refine once, honoring the keep-rule."""
    if params.num_samples != 1:
        raise ValueError("self-refinement takes k = 1")
    initial = generate_direct(endpoint, prompt, params).initial_response
    return refine_response(endpoint, prompt, initial, domain, params)


def _safe_extract(text: str) -> Optional[ExtractedAnswer]:
    try:
        return extract_final_answer(text)
    except NoAnswerFound:
        return None


def majority_vote(
    answers: list[Optional[ExtractedAnswer]],
) -> Optional[ExtractedAnswer]:
    """Modal answer; ties break to the answer whose first occurrence is earliest."""
    counts: dict = {}
    first_seen: dict = {}
    for i, ans in enumerate(answers):
        if ans is None:
            continue
        key = ans.value
        counts[key] = counts.get(key, 0) + 1
        first_seen.setdefault(key, (i, ans))
    if not counts:
        return None
    best = min(counts, key=lambda k: (-counts[k], first_seen[k][0]))
    return first_seen[best][1]


def _sample_direct(
    endpoint: ModelEndpoint, prompt: str, k: int, params: CompletionParams
) -> list[RefinementChain]:
    sample_params = replace(params, num_samples=k)
    texts = client.complete(endpoint, client.render_direct_prompt(prompt), sample_params)
    return [
        RefinementChain(
            prompt=prompt,
            initial_response=t,
            feedback="",
            refined_response=t,
            kept_original=True,
            sample_index=i,
        )
        for i, t in enumerate(texts)
    ]


def self_consistency(
    endpoint: ModelEndpoint, prompt: str, k: int, params: CompletionParams
) -> StrategyResult:
    """Sample k direct responses and majority-vote on their extracted answers."""
    if k < 1:
        raise ValueError("k must be >= 1")
    chains = _sample_direct(endpoint, prompt, k, params)
    answers = [_safe_extract(c.refined_response) for c in chains]
    winner = majority_vote(answers)
    if winner is None:
        raise NoAnswerFound(f"none of the {k} samples contained an answer")
    final_text = next(
        c.refined_response
        for c, a in zip(chains, answers)
        if a is not None and a.value == winner.value
    )
    return StrategyResult(
        strategy="sc",
        final_answer=winner,
        final_text=final_text,
        chains=tuple(chains),
        votes=tuple(answers),
    )


def self_consistency_with_refinement(
    endpoint: ModelEndpoint,
    prompt: str,
    k: int,
    params: CompletionParams,
    domain: Domain = Domain.MATH,
) -> StrategyResult:
    """Refine each of the k samples, then vote on the refined answers.

    Refining before voting applies the feedback skill to every candidate and
    collapses to plain self-refinement at k = 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    initial_chains = _sample_direct(endpoint, prompt, k, params)
    chains = [
        refine_response(
            endpoint, prompt, c.initial_response, domain, params, sample_index=c.sample_index
        )
        for c in initial_chains
    ]
    answers = [_safe_extract(c.refined_response) for c in chains]
    winner = majority_vote(answers)
    if winner is None:
        raise NoAnswerFound(f"none of the {k} refined samples contained an answer")
    final_text = next(
        c.refined_response
        for c, a in zip(chains, answers)
        if a is not None and a.value == winner.value
    )
    return StrategyResult(
        strategy="sc-sr",
        final_answer=winner,
        final_text=final_text,
        chains=tuple(chains),
        votes=tuple(answers),
    )


def exact_vote_accuracy(
    candidates: list[tuple[str, float]], k: int, correct_answer: str
) -> float:
    """Exact probability that k-sample majority voting lands on the correct answer.

    Enumerates every ordered k-tuple of candidate texts with its probability and
    runs the real vote (including the first-occurrence tie-break) on each tuple.
    This is the enumeration counterpart of `self_consistency`, not a sampler.
    """
    answers = [_safe_extract(text) for text, _ in candidates]
    weights = [w for _, w in candidates]
    total_w = sum(weights)
    probs = [w / total_w for w in weights]
    correct = extract_final_answer(correct_answer)
    acc = 0.0
    for combo in itertools.product(range(len(candidates)), repeat=k):
        p = 1.0
        for idx in combo:
            p *= probs[idx]
        if p == 0.0:
            continue
        winner = majority_vote([answers[i] for i in combo])
        if winner is not None and winner.value == correct.value:
            acc += p
    return acc
