import math
import random

import pytest

from evoloop.errors import (
    AbsoluteContinuityViolation,
    DegenerateQuality,
    SupportMismatch,
    UnknownPrompt,
)
from evoloop.theory import (
    DiscreteChainModel,
    ResponseDistribution,
    elbo_check,
    expected_quality,
    idealized_update,
    kl_divergence,
    oracle_correct_set,
    plateau_round,
    psi,
    psi_with_keep_rule,
    random_model,
    refinement_gain,
    simulate_evolution,
)


def tiny_model(refine_to: str = "a", quality=None) -> DiscreteChainModel:
    """One prompt, two responses {a, b}, one feedback; refinement always lands
    on `refine_to`."""
    q = quality or {("p", "a"): 1.0, ("p", "b"): 0.0}
    point = {"a": 1.0 if refine_to == "a" else 0.0, "b": 1.0 if refine_to == "b" else 0.0}
    return DiscreteChainModel(
        prompts=("p",),
        responses=("a", "b"),
        feedbacks=("f",),
        tau_r={"p": {"a": 0.5, "b": 0.5}},
        tau_f={("p", "a"): {"f": 1.0}, ("p", "b"): {"f": 1.0}},
        tau_ref={("p", "a", "f"): dict(point), ("p", "b", "f"): dict(point)},
        quality=q,
    )


class TestPsi:
    def test_point_mass_refinement(self):
        dist = psi(tiny_model("a"), "p")
        assert dist.prob("a") == pytest.approx(1.0, abs=1e-12)

    def test_normalized_on_random_models(self):
        for seed in range(50):
            model = random_model(random.Random(seed))
            for p in model.prompts:
                dist = psi(model, p)
                assert abs(sum(dist.probs) - 1.0) <= 1e-12
                assert all(x >= 0 for x in dist.probs)

    def test_unknown_prompt(self):
        with pytest.raises(UnknownPrompt):
            psi(tiny_model(), "nope")

    def test_hand_computed_marginal(self):
        # tau_r = (0.5, 0.5); refinement always lands on b.
        dist = psi(tiny_model("b"), "p")
        assert dist.prob("b") == pytest.approx(1.0, abs=1e-12)

    def test_keep_rule_shields_correct_mass(self):
        # Adversarial refinement pushes everything to b, but the keep-rule
        # freezes the half of the mass that started on the correct a.
        dist = psi_with_keep_rule(tiny_model("b"), "p", {"a"})
        assert dist.prob("a") == pytest.approx(0.5, abs=1e-12)
        assert dist.prob("b") == pytest.approx(0.5, abs=1e-12)

    def test_keep_rule_with_empty_set_matches_psi(self):
        for seed in range(10):
            model = random_model(random.Random(seed))
            for p in model.prompts:
                a = psi(model, p)
                b = psi_with_keep_rule(model, p, set())
                assert a.probs == pytest.approx(b.probs, abs=1e-12)


class TestOracleCorrectSet:
    def test_argmax(self):
        model = tiny_model("a")
        assert oracle_correct_set(model, "p") == {"a"}

    def test_ties_all_included(self):
        model = tiny_model("a", quality={("p", "a"): 0.7, ("p", "b"): 0.7})
        assert oracle_correct_set(model, "p") == {"a", "b"}


class TestKL:
    def test_zero_for_identical(self):
        d = ResponseDistribution(("a", "b"), (0.3, 0.7))
        assert kl_divergence(d, d).kl == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_and_decomposes_on_100_seeded_instances(self):
        for seed in range(100):
            rng = random.Random(seed)
            model = random_model(rng)
            p = model.prompts[0]
            chain = psi(model, p)
            direct = model.direct_distribution(p)
            res = kl_divergence(chain, direct)
            assert res.kl >= -1e-12
            assert abs(res.kl - (-res.entropy + res.cross_entropy)) <= 1e-9

    def test_hand_computed_value(self):
        d1 = ResponseDistribution(("a", "b"), (0.5, 0.5))
        d2 = ResponseDistribution(("a", "b"), (0.25, 0.75))
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert kl_divergence(d1, d2).kl == pytest.approx(expected, abs=1e-12)

    def test_support_mismatch(self):
        with pytest.raises(SupportMismatch):
            kl_divergence(
                ResponseDistribution(("a",), (1.0,)),
                ResponseDistribution(("b",), (1.0,)),
            )

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityViolation):
            kl_divergence(
                ResponseDistribution(("a", "b"), (0.5, 0.5)),
                ResponseDistribution(("a", "b"), (1.0, 0.0)),
            )

    def test_zero_mass_in_psi_is_fine(self):
        res = kl_divergence(
            ResponseDistribution(("a", "b"), (1.0, 0.0)),
            ResponseDistribution(("a", "b"), (0.5, 0.5)),
        )
        assert res.kl == pytest.approx(math.log(2), abs=1e-12)


class TestElbo:
    def test_holds_on_100_seeded_instances(self):
        for seed in range(100):
            model = random_model(random.Random(seed))
            p = model.prompts[0]
            res = elbo_check(model, model.direct_distribution(p), p)
            assert res.holds
            assert res.lhs >= res.rhs - 1e-9

    def test_tight_at_idealized_update(self):
        # When tau_next equals the chain marginal the KL term vanishes; the
        # remaining gap is Jensen's inequality, still >= 0.
        model = random_model(random.Random(7))
        p = model.prompts[0]
        chain = psi(model, p)
        res = elbo_check(model, chain, p)
        assert res.holds
        assert res.lhs - res.rhs >= -1e-9

    def test_degenerate_quality_rejected(self):
        model = tiny_model("b")  # quality of b is 0 and psi puts mass there
        with pytest.raises(DegenerateQuality):
            elbo_check(model, model.direct_distribution("p"), "p")


def _all_binary_models(seeds):
    for seed in seeds:
        rng = random.Random(seed)
        yield random_model(
            rng,
            n_prompts=rng.randint(1, 3),
            n_responses=rng.randint(2, 3),
            n_feedbacks=rng.randint(1, 3),
            binary_quality=True,
        )


class TestRefinementGain:
    def test_nonnegative_with_keep_rule_binary_quality(self):
        for model in _all_binary_models(range(200)):
            for p in model.prompts:
                assert refinement_gain(model, p, keep_rule=True) >= -1e-12

    def test_counterexample_without_keep_rule(self):
        model = tiny_model("b")  # refinement actively corrupts correct answers
        gain = refinement_gain(model, "p", keep_rule=False)
        assert gain < 0

    def test_same_model_positive_with_keep_rule(self):
        model = tiny_model("b")
        assert refinement_gain(model, "p", keep_rule=True, correct_set={"a"}) >= 0

    def test_helpful_refinement_positive_gain(self):
        model = tiny_model("a")  # refinement repairs wrong answers
        assert refinement_gain(model, "p", keep_rule=True) == pytest.approx(0.5, abs=1e-12)

    def test_explicit_correct_set_respected(self):
        model = tiny_model("b")
        shielded = refinement_gain(model, "p", keep_rule=True, correct_set={"a"})
        unshielded = refinement_gain(model, "p", keep_rule=True, correct_set=set())
        assert shielded > unshielded


class TestSimulation:
    def test_idealized_update_gives_zero_kl(self):
        model = random_model(random.Random(3))
        reports = simulate_evolution(model, rounds=4, p=model.prompts[0])
        for rep in reports:
            assert abs(rep.kl_to_next) <= 1e-9

    def test_direct_quality_monotone_with_keep_rule(self):
        for seed in range(30):
            model = random_model(random.Random(seed), binary_quality=True)
            reports = simulate_evolution(model, rounds=5, p=model.prompts[0])
            qualities = [rep.direct_quality for rep in reports]
            assert all(b >= a - 1e-12 for a, b in zip(qualities, qualities[1:]))

    def test_gain_shrinks_to_plateau(self):
        model = random_model(random.Random(1), binary_quality=True)
        reports = simulate_evolution(model, rounds=12, p=model.prompts[0])
        t = plateau_round(reports, epsilon=1e-6)
        assert t is not None
        assert reports[t].gain <= 1e-6

    def test_plateau_none_when_threshold_unreachable(self):
        model = tiny_model("a")
        reports = simulate_evolution(
            model, rounds=0, p="p", update=lambda m, p, c: m
        )
        assert plateau_round(reports, epsilon=-1.0) is None

    def test_chain_quality_at_least_direct(self):
        model = random_model(random.Random(9), binary_quality=True)
        for rep in simulate_evolution(model, rounds=3, p=model.prompts[0]):
            assert rep.chain_quality >= rep.direct_quality - 1e-12


class TestModelIO:
    def test_round_trip(self, tmp_path):
        model = random_model(random.Random(5))
        path = tmp_path / "model.json"
        model.to_file(path)
        loaded = DiscreteChainModel.from_file(path)
        assert loaded.prompts == model.prompts
        assert loaded.tau_ref == model.tau_ref
        p = model.prompts[0]
        assert psi(loaded, p).probs == pytest.approx(psi(model, p).probs, abs=1e-12)

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError):
            ResponseDistribution(("a", "b"), (0.6, 0.6))

    def test_negative_prob_rejected(self):
        with pytest.raises(ValueError):
            ResponseDistribution(("a", "b"), (-0.1, 1.1))

    def test_quality_range_validated(self):
        with pytest.raises(ValueError):
            tiny_model("a", quality={("p", "a"): 1.5, ("p", "b"): 0.0})


class TestExpectedQuality:
    def test_hand_computed(self):
        model = tiny_model("a")
        dist = ResponseDistribution(("a", "b"), (0.25, 0.75))
        assert expected_quality(model, "p", dist) == pytest.approx(0.25, abs=1e-12)

    def test_idealized_update_only_touches_tau_r(self):
        model = random_model(random.Random(2))
        p = model.prompts[0]
        chain = psi(model, p)
        nxt = idealized_update(model, p, chain)
        assert nxt.tau_f == model.tau_f
        assert nxt.tau_ref == model.tau_ref
        assert nxt.direct_distribution(p).probs == pytest.approx(chain.probs, abs=1e-12)
