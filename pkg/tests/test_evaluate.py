import json

import pytest

from evoloop.client import CompletionParams, MockEndpoint, MockScript
from evoloop import client
from evoloop.evaluate import (
    TestItem,
    eval_accuracy,
    eval_winrate,
    filter_report,
    load_testset,
    run_strategy,
)
from evoloop.mockfam import MathItem, SyntheticMathFamily, direct_answer_text
from evoloop.refine import RefinementChain


def make_items(n: int) -> list[MathItem]:
    return [
        MathItem(id=f"m{i}", question=f"What is {i} plus {i}?", gold=str(2 * i))
        for i in range(1, n + 1)
    ]


def to_testset(items: list[MathItem]) -> list[TestItem]:
    return [TestItem(id=it.id, question=it.question, gold_answer=it.gold) for it in items]


class TestLoadTestset:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "test.jsonl"
        rows = [
            {"id": 1, "question": "q1", "gold_answer": 7},
            {"id": "x", "question": "q2"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        items = load_testset(path)
        assert items[0] == TestItem(id="1", question="q1", gold_answer="7")
        assert items[1].gold_answer is None


class TestRunStrategy:
    def test_unknown_strategy(self):
        ep = MockEndpoint(script=MockScript())
        with pytest.raises(ValueError, match="unknown strategy"):
            run_strategy(ep, "q", "beam", 5, CompletionParams())

    def test_each_strategy_returns_text(self):
        items = make_items(1)
        fam = SyntheticMathFamily(items, base_correct=1.0, seed=0)
        ep = fam.endpoint_for("ckpt", level=0)
        for strategy, k, params in [
            ("direct", 1, CompletionParams()),
            ("sr", 1, CompletionParams()),
            ("sc", 3, CompletionParams(temperature=0.7)),
            ("sc-sr", 3, CompletionParams(temperature=0.7)),
        ]:
            text = run_strategy(ep, items[0].question, strategy, k, params)
            assert items[0].gold in text


class TestEvalAccuracy:
    def test_perfect_model(self):
        items = make_items(10)
        fam = SyntheticMathFamily(items, base_correct=1.0, seed=1)
        result = eval_accuracy(fam.endpoint_for("ckpt", 0), to_testset(items), "direct")
        assert result.accuracy == 1.0
        assert len(result.per_item) == 10

    def test_hopeless_model(self):
        items = make_items(10)
        fam = SyntheticMathFamily(items, base_correct=0.0, refine_boost=0.0, seed=1)
        result = eval_accuracy(fam.endpoint_for("ckpt", 0), to_testset(items), "direct")
        assert result.accuracy == 0.0

    def test_refinement_beats_direct(self):
        items = make_items(40)
        fam = SyntheticMathFamily(
            items, base_correct=0.3, refine_boost=0.7, seed=2
        )
        ep = fam.endpoint_for("ckpt", 0)
        direct = eval_accuracy(ep, to_testset(items), "direct")
        sr = eval_accuracy(ep, to_testset(items), "sr")
        assert sr.accuracy > direct.accuracy

    def test_no_answer_counts_incorrect(self):
        script = MockScript()
        script.add_text(client.render_direct_prompt("q?"), "no clue")
        result = eval_accuracy(
            MockEndpoint(script=script),
            [TestItem(id="1", question="q?", gold_answer="5")],
            "direct",
        )
        assert result.accuracy == 0.0
        assert result.per_item[0].note == "no_answer"

    def test_missing_gold_rejected(self):
        items = [TestItem(id="1", question="q?", gold_answer=None)]
        fam = SyntheticMathFamily(make_items(1))
        with pytest.raises(ValueError):
            eval_accuracy(fam.endpoint_for("c", 0), items, "direct")

    def test_deterministic(self):
        items = make_items(20)
        fam = SyntheticMathFamily(items, base_correct=0.5, seed=3)
        ep = fam.endpoint_for("ckpt", 0)
        a = eval_accuracy(ep, to_testset(items), "direct")
        b = eval_accuracy(ep, to_testset(items), "direct")
        assert a == b


def _fixed_endpoint(answers: dict[str, str], checkpoint_id: str) -> MockEndpoint:
    def completion_fn(prompt: str, seed: int, index: int, temperature: float) -> str:
        for question, text in answers.items():
            if question in prompt:
                return text
        raise KeyError(prompt)

    return MockEndpoint(completion_fn=completion_fn, checkpoint_id=checkpoint_id)


def _judge_sides(prompt: str) -> tuple[str, str]:
    first = prompt.split("Here is response 1: ", 1)[1]
    a, rest = first.split(".\n\nHere is response 2: ", 1)
    b = rest.split(".\n\nAnalyze", 1)[0]
    return a, b


def _content_judge() -> MockEndpoint:
    """Prefers whichever response contains the marker GOOD; tie when equal."""

    def completion_fn(prompt: str, seed: int, index: int, temperature: float) -> str:
        a, b = _judge_sides(prompt)
        if ("GOOD" in a) == ("GOOD" in b):
            return "Both comparable. better: tie"
        return "Clear winner. better: 1" if "GOOD" in a else "Clear winner. better: 2"

    return MockEndpoint(completion_fn=completion_fn, checkpoint_id="judge")


def _position_judge() -> MockEndpoint:
    def completion_fn(prompt: str, seed: int, index: int, temperature: float) -> str:
        return "The first one reads better. better: 1"

    return MockEndpoint(completion_fn=completion_fn, checkpoint_id="judge")


class TestWinRate:
    def _setup(self):
        questions = [f"q{i}" for i in range(10)]
        testset = [TestItem(id=str(i), question=q) for i, q in enumerate(questions)]
        # A is good on items 0..5, B on items 4..9: four wins each, two ties.
        a_answers = {
            q: ("GOOD take" if i < 6 else "weak take") for i, q in enumerate(questions)
        }
        b_answers = {
            q: ("GOOD take" if i >= 4 else "weak take") for i, q in enumerate(questions)
        }
        return (
            _fixed_endpoint(a_answers, "A"),
            _fixed_endpoint(b_answers, "B"),
            testset,
        )

    def test_hand_computed_counts(self):
        ep_a, ep_b, testset = self._setup()
        result = eval_winrate(ep_a, ep_b, _content_judge(), testset)
        assert (result.wins, result.ties, result.losses) == (4, 2, 4)

    def test_position_only_judge_all_ties(self):
        ep_a, ep_b, testset = self._setup()
        result = eval_winrate(ep_a, ep_b, _position_judge(), testset)
        assert result.ties == len(testset)
        assert result.wins == 0 and result.losses == 0

    def test_swap_mirrors_wins_and_losses(self):
        ep_a, ep_b, testset = self._setup()
        judge = _content_judge()
        fwd = eval_winrate(ep_a, ep_b, judge, testset)
        rev = eval_winrate(ep_b, ep_a, judge, testset)
        assert (fwd.wins, fwd.losses) == (rev.losses, rev.wins)
        assert fwd.ties == rev.ties

    def test_parse_failure_is_tie(self):
        ep_a, ep_b, testset = self._setup()

        def mute(prompt, seed, index, temperature):
            return "I refuse to pick."

        judge = MockEndpoint(completion_fn=mute, checkpoint_id="judge")
        result = eval_winrate(ep_a, ep_b, judge, testset[:3])
        assert result.ties == 3
        assert result.per_item[0].orderings == ("?", "?")


def _chain(question: str, answer: str) -> RefinementChain:
    text = direct_answer_text(question, answer)
    return RefinementChain(
        prompt=question,
        initial_response=text,
        feedback="judgment: incorrect",
        refined_response=text,
        kept_original=False,
    )


class TestFilterReport:
    def test_filtering_raises_accuracy(self):
        items = make_items(4)
        oracle = {it.question: it.gold for it in items}
        unfiltered = [
            _chain(items[0].question, items[0].gold),
            _chain(items[1].question, items[1].wrong),
            _chain(items[2].question, items[2].gold),
            _chain(items[3].question, items[3].wrong),
        ]
        filtered = [unfiltered[0], unfiltered[2]]
        report = filter_report(unfiltered, filtered, oracle)
        assert report.size_before == 4 and report.size_after == 2
        assert report.acc_before == 0.5
        assert report.acc_after == 1.0
        assert "4 -> 2" in report.render()

    def test_empty_filtered_set(self):
        items = make_items(1)
        oracle = {items[0].question: items[0].gold}
        report = filter_report([_chain(items[0].question, items[0].wrong)], [], oracle)
        assert report.acc_after is None
        assert "n/a" in report.render()

    def test_unknown_prompt_scores_incorrect(self):
        report = filter_report([_chain("mystery?", "3")], [], {})
        assert report.acc_before == 0.0
