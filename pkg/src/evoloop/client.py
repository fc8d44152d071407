"""Uniform completion interface over a remote chat-completion endpoint and a
deterministic scripted mock, plus the prompt templates owned bit-exactly here.

Every prompt the pipeline ever sends is rendered by one of the functions in
this module, so training inputs and inference inputs are guaranteed to match.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import httpx

from .errors import ContextOverflow, EndpointUnavailable
from .parsing import Domain, parse_general_rating, parse_math_judgment

# Feedback-and-refinement templates. The same completion carries both the
# feedback section (through the judgment/rating line) and the refinement.
MATH_FEEDBACK_REFINE_TEMPLATE = """\
Please assess the quality of the response to the given question.

Here is the question: {p}.

Here is the response: {r}.

Firstly, provide a step-by-step analysis and verification for response starting with "Response Analysis:".

Next, judge whether the response correctly answers the question in the format of "judgment: correct/incorrect".

If the answer is correct, output it. Otherwise, output a refined answer based on the given response and your assessment."""

GENERAL_FEEDBACK_REFINE_TEMPLATE = """\
Please assess the quality of response to the given question.

Here is the question: {p}.

Here is the response: {r}.

Firstly provide an analysis and verification for response starting with "Response Analysis:".

Next, then rate the response on a scale of 1 to 10 (1 is worst, 10 is best) in the format of "Rating:"

Finally output an improved answer based on your analysis if no response is rated 10."""

SELF_INSTRUCT_TEMPLATE = """\
You are an experienced instruction creator. You are asked to develop 3 diverse instructions according to the given examples.

Here are the requirements:

1. The generated instructions should follow the task type in the given examples.

2. The language used for the generated instructions should be diverse.

Given examples: {examples}

The generated instructions should be:

A. ...

B. ...

C. ..."""

PAIRWISE_JUDGE_TEMPLATE = """\
You are comparing two responses to the same question. Read both and decide which answers the question better.

Here is the question: {p}.

Here is response 1: {a}.

Here is response 2: {b}.

Analyze both responses, then state your verdict in the format of "better: 1/2/tie"."""

# Zero-shot chain-of-thought trigger appended to direct-generation prompts.
# Configurable because the literal phrase is a convention, not a contract.
DEFAULT_COT_TRIGGER = "Let's think step by step."


def _substitute(template: str, values: dict[str, str]) -> str:
    """Single-pass placeholder substitution: substituted text is never re-scanned."""
    # Substituted values are marked literal and never re-scanned, so a value
    # that happens to contain another placeholder's name is left alone.
    parts: list[tuple[str, bool]] = [(template, False)]
    for key, value in values.items():
        token = "{" + key + "}"
        new_parts: list[tuple[str, bool]] = []
        for text, literal in parts:
            if literal or token not in text:
                new_parts.append((text, literal))
                continue
            before, after = text.split(token, 1)
            new_parts.extend([(before, False), (value, True), (after, False)])
        parts = new_parts
    return "".join(text for text, _ in parts)


def render_feedback_refine_prompt(domain: Domain, p: str, r: str) -> str:
    template = (
        MATH_FEEDBACK_REFINE_TEMPLATE
        if domain is Domain.MATH
        else GENERAL_FEEDBACK_REFINE_TEMPLATE
    )
    return _substitute(template, {"p": p, "r": r})


def render_refine_context(domain: Domain, p: str, r: str, f: str) -> str:
    """The refinement input: the feedback prompt plus the feedback already given."""
    return render_feedback_refine_prompt(domain, p, r) + "\n\n" + f


def render_self_instruct_prompt(seed_examples: list[str]) -> str:
    if not seed_examples:
        raise ValueError("at least one seed example is required")
    joined = "\n".join(seed_examples)
    return _substitute(SELF_INSTRUCT_TEMPLATE, {"examples": joined})


def render_judge_prompt(p: str, a: str, b: str) -> str:
    return _substitute(PAIRWISE_JUDGE_TEMPLATE, {"p": p, "a": a, "b": b})


def render_direct_prompt(p: str, cot_trigger: str = DEFAULT_COT_TRIGGER) -> str:
    if not p:
        raise ValueError("empty prompt")
    return p + "\n" + cot_trigger if cot_trigger else p


def classify_template_kind(prompt: str) -> str:
    """Which template family a rendered prompt belongs to (used to key mock scripts)."""
    if "assess the quality of" in prompt:
        return "feedback_refine"
    if "experienced instruction creator" in prompt:
        return "self_instruct"
    if "better: 1/2/tie" in prompt:
        return "judge"
    return "direct"


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    num_samples: int = 1
    max_tokens: int = 1024
    seed: int = 0  # mock only: fully determines sampling

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.num_samples >= 2 and self.temperature == 0:
            raise ValueError("k >= 2 requires temperature > 0")


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def _stable_uniform(*parts) -> float:
    """Deterministic uniform in [0, 1) from a tuple of hashable parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class MockScript:
    """Script table keyed by (template kind, prompt hash) with weighted candidates.

    File format: one JSON record per line,
    {"template_kind": ..., "prompt_hash": ..., "completions": [{"text", "weight"}]}.
    """

    def __init__(self):
        self._table: dict[tuple[str, str], list[tuple[str, float]]] = {}

    def add(self, prompt: str, completions: list[tuple[str, float]], kind: str | None = None):
        kind = kind or classify_template_kind(prompt)
        self._table[(kind, prompt_hash(prompt))] = list(completions)
        return self

    def add_text(self, prompt: str, text: str, kind: str | None = None):
        return self.add(prompt, [(text, 1.0)], kind=kind)

    def lookup(self, prompt: str) -> list[tuple[str, float]] | None:
        kind = classify_template_kind(prompt)
        return self._table.get((kind, prompt_hash(prompt)))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for (kind, phash), completions in sorted(self._table.items()):
                f.write(
                    json.dumps(
                        {
                            "template_kind": kind,
                            "prompt_hash": phash,
                            "completions": [
                                {"text": t, "weight": w} for t, w in completions
                            ],
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        script = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            script._table[(obj["template_kind"], obj["prompt_hash"])] = [
                (c["text"], c["weight"]) for c in obj["completions"]
            ]
        return script


class ModelEndpoint:
    """Common surface for remote and mock endpoints."""

    checkpoint_id: str

    def complete(self, prompt: str, params: CompletionParams) -> list[str]:
        raise NotImplementedError


class MockEndpoint(ModelEndpoint):
    """Scripted endpoint: completions are a pure function of (prompt, seed, index).

    Either a static script table or a completion function may drive it; the
    quality oracle (prompt -> gold answer text) supports curation accounting.
    """

    def __init__(
        self,
        script: MockScript | None = None,
        completion_fn: Callable[[str, int, int, float], str] | None = None,
        quality_oracle: Optional[dict[str, str]] = None,
        checkpoint_id: str = "mock",
    ):
        if script is None and completion_fn is None:
            raise ValueError("mock endpoint needs a script or a completion function")
        self.script = script
        self.completion_fn = completion_fn
        self.quality_oracle = quality_oracle or {}
        self.checkpoint_id = checkpoint_id

    def complete(self, prompt: str, params: CompletionParams) -> list[str]:
        if not prompt:
            raise ValueError("empty prompt")
        out: list[str] = []
        for i in range(params.num_samples):
            out.append(self._one(prompt, params, i))
        return out

    def _one(self, prompt: str, params: CompletionParams, index: int) -> str:
        if self.completion_fn is not None:
            return self.completion_fn(prompt, params.seed, index, params.temperature)
        candidates = self.script.lookup(prompt)
        if not candidates:
            raise KeyError(f"mock script has no entry for prompt hash {prompt_hash(prompt)}")
        if params.temperature == 0:
            return max(candidates, key=lambda c: c[1])[0]
        u = _stable_uniform(prompt_hash(prompt), params.seed, index)
        total = sum(w for _, w in candidates)
        acc = 0.0
        for text, w in candidates:
            acc += w / total
            if u < acc:
                return text
        return candidates[-1][0]


class RemoteEndpoint(ModelEndpoint):
    """Chat-completion HTTP endpoint with bounded, jittered retry.

    The rendered template travels as a single system message; sample count maps
    to the wire protocol's `n`.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        auth_env_var: str = "EVOLOOP_API_TOKEN",
        checkpoint_id: str = "",
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        max_context_chars: int = 200_000,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.auth_env_var = auth_env_var
        self.checkpoint_id = checkpoint_id or model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_context_chars = max_context_chars
        self._client = httpx.Client(transport=transport, timeout=60.0)
        self._sleep = sleep
        self._rng = rng or random.Random()

    def complete(self, prompt: str, params: CompletionParams) -> list[str]:
        if len(prompt) > self.max_context_chars:
            raise ContextOverflow(
                f"prompt of {len(prompt)} chars exceeds limit {self.max_context_chars}"
            )
        payload = {
            "model": self.model,
            "messages": [{"role": "system", "content": prompt}],
            "temperature": params.temperature,
            "n": params.num_samples,
            "max_tokens": params.max_tokens,
        }
        headers = {}
        token = os.environ.get(self.auth_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._client.post(
                    self.base_url + "/chat/completions", json=payload, headers=headers
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise httpx.HTTPStatusError(
                        f"server returned {resp.status_code}",
                        request=resp.request,
                        response=resp,
                    )
                resp.raise_for_status()
                body = resp.json()
                texts = [c["message"]["content"] for c in body["choices"]]
                if len(texts) != params.num_samples:
                    raise EndpointUnavailable(
                        f"expected {params.num_samples} choices, got {len(texts)}"
                    )
                return texts
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    delay = self.backoff_base * (2**attempt)
                    delay *= 0.5 + self._rng.random()  # jitter in [0.5x, 1.5x)
                    self._sleep(delay)
        raise EndpointUnavailable(
            f"{self.max_attempts} attempts failed; last error: {last_error}"
        )


def complete(endpoint: ModelEndpoint, prompt: str, params: CompletionParams) -> list[str]:
    """Return exactly params.num_samples completion texts, index-stable."""
    return endpoint.complete(prompt, params)


@dataclass(frozen=True)
class FeedbackSplit:
    feedback: str
    refined: Optional[str]


def split_feedback_and_refinement(completion: str, domain: Domain) -> FeedbackSplit:
    """Split one feedback-and-refinement completion at its verdict line.

    The feedback part runs through the end of the judgment (math) or rating
    (general) line; whatever follows is the refined response. The refinement is
    absent when nothing follows, or when a general response was rated 10.
    """
    if domain is Domain.MATH:
        judgment = parse_math_judgment(completion)
        boundary = _end_of_line(completion, judgment.raw_span[1])
        feedback = completion[:boundary]
        rest = completion[boundary:].strip()
        return FeedbackSplit(feedback=feedback, refined=rest or None)
    rating = parse_general_rating(completion)
    boundary = _end_of_line(completion, rating.raw_span[1])
    feedback = completion[:boundary]
    rest = completion[boundary:].strip()
    if rating.value == 10:
        return FeedbackSplit(feedback=feedback, refined=None)
    return FeedbackSplit(feedback=feedback, refined=rest or None)


def _end_of_line(text: str, pos: int) -> int:
    nl = text.find("\n", pos)
    return len(text) if nl == -1 else nl + 1
