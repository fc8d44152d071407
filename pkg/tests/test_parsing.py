from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoloop.errors import (
    AmbiguousJudgment,
    InvalidRating,
    MissingJudgment,
    MissingRating,
    NoAnswerFound,
    NoInstructionsFound,
)
from evoloop.parsing import (
    Domain,
    Verdict,
    canonicalize_answer,
    extract_final_answer,
    parse_general_rating,
    parse_instruction_list,
    parse_judge_verdict,
    parse_math_judgment,
    qualified,
)
from conftest import A7_FEEDBACK


class TestMathJudgment:
    def test_correct_lowercase(self):
        assert parse_math_judgment("steps check out. judgment: correct").verdict is Verdict.CORRECT

    def test_fixture_feedback_is_incorrect(self):
        assert parse_math_judgment(A7_FEEDBACK).verdict is Verdict.INCORRECT

    def test_judgement_spelling_accepted(self):
        j = parse_math_judgment("...is not 24, but 22. Judgement: incorrect")
        assert j.verdict is Verdict.INCORRECT

    def test_no_marker(self):
        with pytest.raises(MissingJudgment):
            parse_math_judgment("looks fine to me")

    def test_empty(self):
        with pytest.raises(MissingJudgment):
            parse_math_judgment("")

    def test_verdict_only_after_marker(self):
        # "correct" appearing in prose never decides the verdict.
        j = parse_math_judgment("the answer is correct in spirit. judgment: incorrect")
        assert j.verdict is Verdict.INCORRECT

    def test_repeated_same_verdict_uses_last(self):
        j = parse_math_judgment("judgment: incorrect ... so judgment: incorrect")
        assert j.verdict is Verdict.INCORRECT
        assert j.raw_span[0] > 20

    def test_conflicting_verdicts_raise(self):
        with pytest.raises(AmbiguousJudgment):
            parse_math_judgment("judgment: correct but later judgment: incorrect")

    def test_span_points_at_marker(self):
        text = "analysis... judgment: correct"
        j = parse_math_judgment(text)
        start, end = j.raw_span
        assert text[start:end].lower().startswith("judgment")


class TestGeneralRating:
    def test_basic(self):
        assert parse_general_rating("Response Analysis: fine. Rating: 7").value == 7

    def test_ten(self):
        assert parse_general_rating("Rating: 10").value == 10

    def test_zero_out_of_range(self):
        with pytest.raises(InvalidRating):
            parse_general_rating("Rating: 0")

    def test_eleven_out_of_range(self):
        with pytest.raises(InvalidRating):
            parse_general_rating("Rating: 11")

    def test_missing(self):
        with pytest.raises(MissingRating):
            parse_general_rating("pretty good response")

    def test_first_marker_wins(self):
        assert parse_general_rating("Rating: 4 ... revised Rating: 9").value == 4

    def test_whitespace_and_case(self):
        assert parse_general_rating("rating:   8").value == 8


class TestQualified:
    def test_math_correct(self):
        assert qualified("judgment: correct", Domain.MATH) is True

    def test_math_incorrect(self):
        assert qualified(A7_FEEDBACK, Domain.MATH) is False

    def test_general_threshold(self):
        assert qualified("Rating: 7", Domain.GENERAL) is True
        assert qualified("Rating: 6", Domain.GENERAL) is False

    def test_parse_failure_is_not_false(self):
        with pytest.raises(MissingJudgment):
            qualified("no markers here", Domain.MATH)

    def test_math_never_reads_rating(self):
        with pytest.raises(MissingJudgment):
            qualified("Rating: 9", Domain.MATH)

    def test_general_never_reads_judgment(self):
        with pytest.raises(MissingRating):
            qualified("judgment: correct", Domain.GENERAL)

    @given(st.text(max_size=200), st.sampled_from([Domain.MATH, Domain.GENERAL]))
    def test_pure_function(self, text, domain):
        def run():
            try:
                return ("ok", qualified(text, domain))
            except Exception as exc:
                return ("err", type(exc).__name__)

        assert run() == run()


class TestExtractFinalAnswer:
    def test_fixture_answer(self):
        text = "the total number of times the alarm rang is 4 + 12 + 6 = 22."
        assert extract_final_answer(text).value == Decimal("22")

    def test_single_decimal(self):
        assert extract_final_answer("Half of 7 is 3.5").value == Decimal("3.5")

    def test_no_number(self):
        with pytest.raises(NoAnswerFound):
            extract_final_answer("I cannot solve this.")

    def test_gold_marker_precedence(self):
        assert extract_final_answer("3 + 4 = 7\n#### 7\nsome trailing 9 talk").value == Decimal("7")

    def test_currency_and_commas(self):
        assert extract_final_answer("She pays $1,250.50 total").value == Decimal("1250.50")

    def test_negative(self):
        assert extract_final_answer("the delta is -4").value == Decimal("-4")

    def test_trailing_prose_invariance(self):
        base = extract_final_answer("the answer is 42.").value
        assert extract_final_answer("the answer is 42. Hope that helps!").value == base

    @given(st.text(alphabet="0123456789.,$%- ", min_size=1, max_size=30))
    def test_canonicalize_idempotent(self, token):
        once = canonicalize_answer(token)
        assert canonicalize_answer(once) == once


class TestInstructionList:
    def test_three_items(self):
        items = parse_instruction_list(
            "A. Solve x+2=5\nB. A train travels 60 miles in 2 hours\nC. Compute 15% of 80"
        )
        assert items == [
            "Solve x+2=5",
            "A train travels 60 miles in 2 hours",
            "Compute 15% of 80",
        ]

    def test_partial_list(self):
        assert parse_instruction_list("A. only one item") == ["only one item"]

    def test_no_markers(self):
        with pytest.raises(NoInstructionsFound):
            parse_instruction_list("Sure, here are ideas without markers")

    def test_empty_items_dropped(self):
        assert parse_instruction_list("A. \nB. real item\nC. ") == ["real item"]

    def test_at_most_three(self):
        items = parse_instruction_list("A. one\nB. two\nC. three\nA. four")
        assert len(items) <= 3


class TestJudgeVerdict:
    def test_each_verdict(self):
        assert parse_judge_verdict("analysis... better: 1") == "1"
        assert parse_judge_verdict("better: 2") == "2"
        assert parse_judge_verdict("they are equal. better: tie") == "tie"

    def test_missing(self):
        from evoloop.errors import MissingVerdict

        with pytest.raises(MissingVerdict):
            parse_judge_verdict("response 1 seems nicer")
