import json
import sys
from pathlib import Path

import pytest

from evoloop.corpus import MetaRecord, Source
from evoloop.parsing import Domain

# The alarm-clock corpus example used throughout: a wrong first pass
# (4 + 3*3 + 2*2 = 24), feedback that catches the arithmetic slip, and a
# refined pass landing on 22.
A7_QUESTION = (
    "Greg has an alarm set to ring three times a day as a reminder. "
    "When the alarm goes off, it continues to ring until Greg turns it off. "
    "The first time it went off today, it rang four times. The second time it "
    "went off, it rang for three times as long as the first time. The third "
    "time, it rang for half as long as the second time. How many times did "
    "the alarm ring in all?"
)

A7_RESPONSE = (
    "The alarm rang four times the first time, three times as long as the "
    "first time the second time, and half as long as the second time the "
    "third time. So, the total number of times the alarm rang is "
    "4 + 3*3 + 2*2 = 24."
)

A7_FEEDBACK = (
    "The response correctly interprets the problem. The first time the alarm "
    "rang, it rang for 4 times. The second time it rang, it rang for 3 times "
    "as long as the first time, which is 3*4 = 12 times. The third time it "
    "rang, it rang for half as long as the second time, which is 12/2 = 6 "
    "times. However, the final calculation is incorrect. The total number of "
    "times the alarm rang is not 4 + 3*3 + 2*2 = 24, but 4 + 12 + 6 = 22. "
    "Judgement: incorrect"
)

A7_REFINED = (
    "The alarm rang four times the first time, three times as long as the "
    "first time the second time, and half as long as the second time the "
    "third time. So, the total number of times the alarm rang is "
    "4 + 12 + 6 = 22."
)


def question_for(i: int) -> str:
    return f"What is {i} plus {i}?"


def make_workspace(
    root: Path,
    rounds: int = 3,
    epsilon: float = -1.0,
    policy: str = "restart",
    seed: int = 0,
    beta: float = 1.0,
    n_meta: int = 10,
    n_per_round: int = 10,
    n_heldout: int = 10,
    base_correct: float = 0.4,
    gain_per_level: float = 0.2,
    refine_boost: float = 0.3,
) -> Path:
    """Build a self-contained synthetic-family run directory; returns the
    config path. Questions are arithmetic items with known gold answers so
    every stage of the pipeline can be checked against an oracle."""
    root.mkdir(parents=True, exist_ok=True)
    n_items = n_meta + rounds * n_per_round + n_heldout
    with open(root / "items.jsonl", "w", encoding="utf-8") as f:
        for i in range(1, n_items + 1):
            f.write(
                json.dumps(
                    {"id": f"m{i}", "question": question_for(i), "gold_answer": 2 * i}
                )
                + "\n"
            )
    cursor = 1

    def write_pool(name: str, count: int) -> str:
        nonlocal cursor
        lines = [question_for(i) for i in range(cursor, cursor + count)]
        cursor += count
        (root / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        return name

    meta = write_pool("meta_prompts.txt", n_meta)
    pools = [write_pool(f"round{t}_prompts.txt", n_per_round) for t in range(1, rounds + 1)]
    heldout_rows = []
    for i in range(cursor, cursor + n_heldout):
        heldout_rows.append(
            json.dumps({"id": f"m{i}", "question": question_for(i), "gold_answer": 2 * i})
        )
    (root / "heldout.jsonl").write_text("\n".join(heldout_rows) + "\n", encoding="utf-8")
    config = {
        "seed": seed,
        "domain": "math",
        "beta": beta,
        "policy": policy,
        "rounds": rounds,
        "epsilon": epsilon,
        "k_self_consistency": 5,
        "max_workers": 4,
        "curation_temperature": 0.7,
        "output_dir": "out",
        "trainer_command": [sys.executable, "-m", "evoloop.stub_trainer"],
        "meta_prompts": meta,
        "round_prompts": pools,
        "heldout": "heldout.jsonl",
        "endpoints": {
            "kind": "synthetic-math",
            "items": "items.jsonl",
            "base_correct": base_correct,
            "gain_per_level": gain_per_level,
            "refine_boost": refine_boost,
        },
        "hparams": {},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return config_path


@pytest.fixture
def a7_record():
    return MetaRecord(
        prompt=A7_QUESTION,
        initial_response=A7_RESPONSE,
        feedback=A7_FEEDBACK,
        refined_response=A7_REFINED,
        domain=Domain.MATH,
        source=Source.ANNOTATOR,
        round=0,
    )
