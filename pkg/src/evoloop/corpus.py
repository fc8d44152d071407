"""Record and dataset model: expansion of generation/feedback/refinement records
into supervised training examples, dataset mixing policies, and persistence.

Training files are line-delimited UTF-8 JSON records with fields
{input, target, weight, kind, round}; a sidecar manifest carries per-kind and
per-round counts plus a content hash, so any mutation is detectable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from . import client
from .errors import CorruptDataset, EmptyRound, RejectedRecord
from .parsing import Domain


class Source(Enum):
    ANNOTATOR = "annotator"
    SELF_GENERATED = "self_generated"


class ExampleKind(Enum):
    FEEDBACK_GEN = "feedback_gen"
    REFINE_GEN = "refine_gen"
    DIRECT_GEN = "direct_gen"
    QA_PAIR = "qa_pair"


@dataclass(frozen=True)
class MetaRecord:
    """One (prompt, response, feedback, refined) tuple from corpus construction."""

    prompt: str
    initial_response: str
    feedback: str
    refined_response: str
    domain: Domain
    source: Source = Source.ANNOTATOR
    round: int = 0
    qualified_flag: Optional[bool] = None

    def __post_init__(self):
        for name in ("prompt", "initial_response", "feedback", "refined_response"):
            if not getattr(self, name):
                raise ValueError(f"MetaRecord.{name} must be non-empty")
        if (self.round == 0) != (self.source is Source.ANNOTATOR):
            raise ValueError("round 0 records must come from the annotator and vice versa")


@dataclass(frozen=True)
class EvolRecord:
    """A filtered self-curated (prompt, refined response) pair for round `round`."""

    prompt: str
    refined_response: str
    round: int
    qualified_flag: Optional[bool] = None
    provenance: Optional[object] = None  # RefinementChain trace, when available

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("EvolRecord.round must be >= 1")


@dataclass(frozen=True)
class TrainingExample:
    input: str
    target: str
    weight: float
    kind: ExampleKind
    round: int = 0

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError("zero/negative-weight examples are never emitted")

    def to_json(self) -> str:
        return json.dumps(
            {
                "input": self.input,
                "target": self.target,
                "weight": self.weight,
                "kind": self.kind.value,
                "round": self.round,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TrainingExample":
        obj = json.loads(line)
        return cls(
            input=obj["input"],
            target=obj["target"],
            weight=obj["weight"],
            kind=ExampleKind(obj["kind"]),
            round=obj["round"],
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered list of training examples with a deterministic manifest."""

    examples: tuple[TrainingExample, ...]
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", "ds-" + self.content_hash()[:12])

    def serialize(self) -> bytes:
        return "".join(ex.to_json() + "\n" for ex in self.examples).encode("utf-8")

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def manifest(self) -> dict:
        by_kind: dict[str, int] = {}
        by_round: dict[str, int] = {}
        for ex in self.examples:
            by_kind[ex.kind.value] = by_kind.get(ex.kind.value, 0) + 1
            by_round[str(ex.round)] = by_round.get(str(ex.round), 0) + 1
        return {
            "id": self.id,
            "n_examples": len(self.examples),
            "counts_by_kind": by_kind,
            "counts_by_round": by_round,
            "sha256": self.content_hash(),
        }

    def __len__(self) -> int:
        return len(self.examples)


def assemble_meta_examples(record: MetaRecord, beta: float) -> list[TrainingExample]:
    """Expand a meta record into its supervised terms.

    Emits feedback generation (weight 1), refinement generation (weight 1), and,
    when beta > 0, direct generation of the refined response (weight beta).
    Inputs go through the same prompt renderers used at inference so the train
    and inference formats match.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    fr_prompt = client.render_feedback_refine_prompt(
        record.domain, record.prompt, record.initial_response
    )
    examples = [
        TrainingExample(
            input=fr_prompt,
            target=record.feedback,
            weight=1.0,
            kind=ExampleKind.FEEDBACK_GEN,
            round=record.round,
        ),
        TrainingExample(
            input=client.render_refine_context(
                record.domain, record.prompt, record.initial_response, record.feedback
            ),
            target=record.refined_response,
            weight=1.0,
            kind=ExampleKind.REFINE_GEN,
            round=record.round,
        ),
    ]
    if beta > 0:
        examples.append(
            TrainingExample(
                input=client.render_direct_prompt(record.prompt),
                target=record.refined_response,
                weight=beta,
                kind=ExampleKind.DIRECT_GEN,
                round=record.round,
            )
        )
    return examples


def assemble_evol_examples(record: EvolRecord) -> list[TrainingExample]:
    """A qualified self-curated record becomes one direct-generation example."""
    if not record.qualified_flag:
        raise RejectedRecord("only records that passed feedback filtering may train")
    return [
        TrainingExample(
            input=client.render_direct_prompt(record.prompt),
            target=record.refined_response,
            weight=1.0,
            kind=ExampleKind.DIRECT_GEN,
            round=record.round,
        )
    ]


def assemble_qa_examples(records: Iterable[MetaRecord]) -> list[TrainingExample]:
    """The plain QA baseline: every (prompt, refined response) pair, nothing else."""
    return [
        TrainingExample(
            input=client.render_direct_prompt(r.prompt),
            target=r.refined_response,
            weight=1.0,
            kind=ExampleKind.QA_PAIR,
            round=r.round,
        )
        for r in records
    ]


class MixPolicy(Enum):
    RESTART = "restart"
    CONTINUAL_MIXED = "continual_mixed"
    CONTINUAL_CURRENT_ONLY = "continual_current_only"


def _meta_without_direct(d_meta: Dataset) -> list[TrainingExample]:
    # In the self-evolution phase the meta objective has no direct-generation
    # term, so the beta expansion of round-0 records is dropped here.
    return [
        ex
        for ex in d_meta.examples
        if not (ex.round == 0 and ex.kind is ExampleKind.DIRECT_GEN)
    ]


def assemble_round_dataset(
    policy: MixPolicy,
    d_meta: Dataset,
    rounds: list[Dataset],
    t: int,
) -> tuple[int, Dataset]:
    """Combine the meta corpus with round data per the training policy.

    `rounds[i]` holds round i+1's dataset. Returns (base_round, dataset) where
    base_round indexes the checkpoint to fine-tune from (0 = the meta-skill
    checkpoint, t-1 = previous round's checkpoint).
    """
    if t < 1 or len(rounds) < t:
        raise ValueError(f"need datasets for rounds 1..{t}")
    if len(rounds[t - 1]) == 0:
        raise EmptyRound(f"round {t} produced no training examples")
    meta_part = _meta_without_direct(d_meta)
    if policy is MixPolicy.RESTART:
        base = 0
        parts = [ds.examples for ds in rounds[:t]]
    elif policy is MixPolicy.CONTINUAL_MIXED:
        base = t - 1
        parts = [ds.examples for ds in rounds[:t]]
    else:
        base = t - 1
        parts = [rounds[t - 1].examples]
    combined = tuple(meta_part) + tuple(ex for part in parts for ex in part)
    return base, Dataset(examples=combined)


def dataset_from_examples(examples: Iterable[TrainingExample]) -> Dataset:
    return Dataset(examples=tuple(examples))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset.serialize())
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(dataset.manifest(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset and verify its content against the stored manifest hash."""
    path = Path(path)
    data = path.read_bytes()
    manifest_path = path.with_name(path.name + ".manifest.json")
    stored = json.loads(manifest_path.read_text(encoding="utf-8"))
    examples = tuple(
        TrainingExample.from_json(line)
        for line in data.decode("utf-8").splitlines()
        if line.strip()
    )
    dataset = Dataset(examples=examples, id=stored.get("id", ""))
    recomputed = dataset.manifest()
    if recomputed["sha256"] != stored["sha256"] or recomputed["n_examples"] != stored["n_examples"]:
        raise CorruptDataset(f"{path}: content does not match manifest")
    return dataset
