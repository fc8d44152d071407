"""Exact enumeration over finite chain models.

Numerically verifies the identities behind self-evolution training: the chain
marginal over refined responses, the KL decomposition of the training loss, the
evidence lower bound on log-quality, and the sign of the refinement gain with
and without the keep-rule. All sums are exact enumerations over finite support;
tolerances only absorb floating-point roundoff.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .errors import (
    AbsoluteContinuityViolation,
    DegenerateQuality,
    SupportMismatch,
    UnknownPrompt,
)

_NORM_TOL = 1e-12
_ID_TOL = 1e-9


@dataclass(frozen=True)
class ResponseDistribution:
    """Distribution over the (shared) response/refinement support."""

    support: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs must align")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > _NORM_TOL:
            raise ValueError(f"probabilities sum to {sum(self.probs)}, not 1")

    def prob(self, r: str) -> float:
        return self.probs[self.support.index(r)]


@dataclass(frozen=True)
class DiscreteChainModel:
    """Finite-support generation/feedback/refinement chain with a quality table.

    tau_r[p] is a distribution over responses R, tau_f[(p, r)] over feedbacks F,
    tau_ref[(p, r, f)] over R again (responses and refinements share support),
    and quality[(p, r)] is the probability the response is high quality.
    """

    prompts: tuple[str, ...]
    responses: tuple[str, ...]
    feedbacks: tuple[str, ...]
    tau_r: dict[str, dict[str, float]]
    tau_f: dict[tuple[str, str], dict[str, float]]
    tau_ref: dict[tuple[str, str, str], dict[str, float]]
    quality: dict[tuple[str, str], float]

    def __post_init__(self):
        for p in self.prompts:
            self._check_dist(self.tau_r[p], self.responses, f"tau_r[{p}]")
            for r in self.responses:
                self._check_dist(self.tau_f[(p, r)], self.feedbacks, f"tau_f[{p},{r}]")
                for f in self.feedbacks:
                    self._check_dist(
                        self.tau_ref[(p, r, f)], self.responses, f"tau_ref[{p},{r},{f}]"
                    )
                q = self.quality[(p, r)]
                if not 0.0 <= q <= 1.0:
                    raise ValueError(f"quality[{p},{r}] = {q} outside [0, 1]")

    @staticmethod
    def _check_dist(dist: dict[str, float], support: tuple[str, ...], name: str):
        if set(dist) != set(support):
            raise ValueError(f"{name} support mismatch")
        total = sum(dist.values())
        if any(v < 0 for v in dist.values()) or abs(total - 1.0) > _NORM_TOL:
            raise ValueError(f"{name} is not a distribution (sum {total})")

    def direct_distribution(self, p: str) -> ResponseDistribution:
        if p not in self.prompts:
            raise UnknownPrompt(p)
        return ResponseDistribution(
            support=self.responses,
            probs=tuple(self.tau_r[p][r] for r in self.responses),
        )

    def to_file(self, path: str | Path) -> None:
        obj = {
            "prompts": list(self.prompts),
            "responses": list(self.responses),
            "feedbacks": list(self.feedbacks),
            "tau_r": {p: self.tau_r[p] for p in self.prompts},
            "tau_f": {f"{p}|{r}": self.tau_f[(p, r)] for p in self.prompts for r in self.responses},
            "tau_ref": {
                f"{p}|{r}|{f}": self.tau_ref[(p, r, f)]
                for p in self.prompts
                for r in self.responses
                for f in self.feedbacks
            },
            "quality": {f"{p}|{r}": self.quality[(p, r)] for p in self.prompts for r in self.responses},
        }
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "DiscreteChainModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))

        def unkey(s: str) -> tuple:
            return tuple(s.split("|"))

        return cls(
            prompts=tuple(obj["prompts"]),
            responses=tuple(obj["responses"]),
            feedbacks=tuple(obj["feedbacks"]),
            tau_r=obj["tau_r"],
            tau_f={unkey(k): v for k, v in obj["tau_f"].items()},
            tau_ref={unkey(k): v for k, v in obj["tau_ref"].items()},
            quality={unkey(k): v for k, v in obj["quality"].items()},
        )


def psi(model: DiscreteChainModel, p: str) -> ResponseDistribution:
    """Chain marginal over refined responses: sum over (r, f) of the chain factors."""
    if p not in model.prompts:
        raise UnknownPrompt(p)
    probs = []
    for r_hat in model.responses:
        total = 0.0
        for r in model.responses:
            pr = model.tau_r[p][r]
            if pr == 0.0:
                continue
            for f in model.feedbacks:
                pf = model.tau_f[(p, r)][f]
                if pf == 0.0:
                    continue
                total += pr * pf * model.tau_ref[(p, r, f)][r_hat]
        probs.append(total)
    total = sum(probs)
    probs = [x / total for x in probs]
    return ResponseDistribution(support=model.responses, probs=tuple(probs))


def psi_with_keep_rule(
    model: DiscreteChainModel, p: str, correct_set: set[str]
) -> ResponseDistribution:
    """Chain marginal where responses judged as needing no refinement are kept.

    For r in correct_set, the refinement factor is replaced by a point mass on r
    (the feedback step still runs, it just cannot move the response).
    """
    if p not in model.prompts:
        raise UnknownPrompt(p)
    probs = {r_hat: 0.0 for r_hat in model.responses}
    for r in model.responses:
        pr = model.tau_r[p][r]
        if pr == 0.0:
            continue
        if r in correct_set:
            probs[r] += pr
            continue
        for f in model.feedbacks:
            pf = model.tau_f[(p, r)][f]
            if pf == 0.0:
                continue
            for r_hat, pref in model.tau_ref[(p, r, f)].items():
                probs[r_hat] += pr * pf * pref
    total = sum(probs.values())
    return ResponseDistribution(
        support=model.responses,
        probs=tuple(probs[r] / total for r in model.responses),
    )


def oracle_correct_set(model: DiscreteChainModel, p: str) -> set[str]:
    """Responses an oracle feedback would keep: the highest-quality ones for p."""
    best = max(model.quality[(p, r)] for r in model.responses)
    return {r for r in model.responses if model.quality[(p, r)] == best}


@dataclass(frozen=True)
class KLResult:
    kl: float
    entropy: float  # H(psi)
    cross_entropy: float  # -sum psi log tau

    def __float__(self) -> float:
        return self.kl


def kl_divergence(psi_dist: ResponseDistribution, tau_next: ResponseDistribution) -> KLResult:
    """KL(psi || tau) with its entropy/cross-entropy decomposition.

    The decomposition identity KL = -H(psi) + crossH is asserted to 1e-9; the
    entropy term is the piece that is constant for a fixed chain distribution.
    """
    if psi_dist.support != tau_next.support:
        raise SupportMismatch("distributions live on different supports")
    kl = 0.0
    entropy = 0.0
    cross = 0.0
    for ppsi, ptau in zip(psi_dist.probs, tau_next.probs):
        if ppsi == 0.0:
            continue
        if ptau == 0.0:
            raise AbsoluteContinuityViolation("tau has zero mass on psi's support")
        kl += ppsi * math.log(ppsi / ptau)
        entropy -= ppsi * math.log(ppsi)
        cross -= ppsi * math.log(ptau)
    assert abs(kl - (-entropy + cross)) <= _ID_TOL
    return KLResult(kl=kl, entropy=entropy, cross_entropy=cross)


@dataclass(frozen=True)
class ElboResult:
    lhs: float  # log-probability of a high-quality response under tau_next
    rhs: float  # expected log-quality under psi minus KL(psi || tau_next)
    holds: bool


def elbo_check(
    model: DiscreteChainModel,
    tau_next: ResponseDistribution,
    p: str,
    psi_dist: ResponseDistribution | None = None,
) -> ElboResult:
    """Verify the lower bound on log p(high quality | p) under the next model."""
    if p not in model.prompts:
        raise UnknownPrompt(p)
    psi_dist = psi_dist if psi_dist is not None else psi(model, p)
    for r, mass in zip(psi_dist.support, psi_dist.probs):
        if mass > 0 and model.quality[(p, r)] == 0.0:
            raise DegenerateQuality(f"quality({p}, {r}) = 0 on the chain's support")
    lhs = math.log(
        sum(
            model.quality[(p, r)] * tau_next.prob(r)
            for r in psi_dist.support
        )
    )
    e_log_q = sum(
        mass * math.log(model.quality[(p, r)])
        for r, mass in zip(psi_dist.support, psi_dist.probs)
        if mass > 0
    )
    kl = kl_divergence(psi_dist, tau_next).kl
    rhs = e_log_q - kl
    return ElboResult(lhs=lhs, rhs=rhs, holds=lhs >= rhs - _ID_TOL)


def expected_quality(model: DiscreteChainModel, p: str, dist: ResponseDistribution) -> float:
    return sum(
        mass * model.quality[(p, r)] for r, mass in zip(dist.support, dist.probs)
    )


def refinement_gain(
    model: DiscreteChainModel,
    p: str,
    keep_rule: bool,
    correct_set: Optional[set[str]] = None,
) -> float:
    """Expected quality of chain samples minus expected quality of direct samples.

    With the keep-rule, correct_set defaults to the oracle set (highest-quality
    responses). Without the keep-rule the gain can be negative: an adversarial
    refinement can move mass onto low-quality responses.
    """
    direct = model.direct_distribution(p)
    if keep_rule:
        cs = correct_set if correct_set is not None else oracle_correct_set(model, p)
        chain = psi_with_keep_rule(model, p, cs)
    else:
        chain = psi(model, p)
    return expected_quality(model, p, chain) - expected_quality(model, p, direct)


@dataclass(frozen=True)
class RoundReport:
    round: int
    direct_quality: float
    chain_quality: float
    kl_to_next: float
    gain: float


def idealized_update(model: DiscreteChainModel, p: str, chain: ResponseDistribution) -> DiscreteChainModel:
    """The perfect KL-minimizing update: next round's direct distribution is the
    previous round's chain marginal; feedback/refinement tables are unchanged."""
    tau_r = dict(model.tau_r)
    tau_r[p] = {r: mass for r, mass in zip(chain.support, chain.probs)}
    return DiscreteChainModel(
        prompts=model.prompts,
        responses=model.responses,
        feedbacks=model.feedbacks,
        tau_r=tau_r,
        tau_f=model.tau_f,
        tau_ref=model.tau_ref,
        quality=model.quality,
    )


def simulate_evolution(
    model: DiscreteChainModel,
    rounds: int,
    p: str,
    keep_rule: bool = True,
    update: Callable[[DiscreteChainModel, str, ResponseDistribution], DiscreteChainModel] = idealized_update,
) -> list[RoundReport]:
    """Trajectory of the idealized self-evolution loop on one prompt.

    Each round replaces the direct distribution with the previous chain marginal
    (exact KL minimization), so the recorded KL to the next round is zero.
    Reports the first round where the refinement gain drops to epsilon or below.
    """
    reports: list[RoundReport] = []
    current = model
    for t in range(rounds + 1):
        direct = current.direct_distribution(p)
        if keep_rule:
            chain = psi_with_keep_rule(current, p, oracle_correct_set(current, p))
        else:
            chain = psi(current, p)
        gain = expected_quality(current, p, chain) - expected_quality(current, p, direct)
        nxt = update(current, p, chain)
        kl = kl_divergence(chain, nxt.direct_distribution(p)).kl
        reports.append(
            RoundReport(
                round=t,
                direct_quality=expected_quality(current, p, direct),
                chain_quality=expected_quality(current, p, chain),
                kl_to_next=kl,
                gain=gain,
            )
        )
        if t < rounds:
            current = nxt
    return reports


def plateau_round(reports: list[RoundReport], epsilon: float = 0.0) -> Optional[int]:
    for rep in reports:
        if rep.gain <= epsilon:
            return rep.round
    return None


def random_model(
    rng: random.Random,
    n_prompts: int = 2,
    n_responses: int = 3,
    n_feedbacks: int = 2,
    binary_quality: bool = False,
    min_prob: float = 0.05,
) -> DiscreteChainModel:
    """Seeded random instance; min_prob keeps conditionals strictly positive so
    absolute-continuity preconditions hold by construction."""
    prompts = tuple(f"p{i}" for i in range(n_prompts))
    responses = tuple(f"r{i}" for i in range(n_responses))
    feedbacks = tuple(f"f{i}" for i in range(n_feedbacks))

    def rand_dist(support):
        raw = [min_prob + rng.random() for _ in support]
        total = sum(raw)
        vals = [x / total for x in raw]
        # Exact renormalization so the sum is 1 to within float addition.
        vals[-1] = 1.0 - sum(vals[:-1])
        return dict(zip(support, vals))

    tau_r = {p: rand_dist(responses) for p in prompts}
    tau_f = {(p, r): rand_dist(feedbacks) for p in prompts for r in responses}
    tau_ref = {
        (p, r, f): rand_dist(responses)
        for p in prompts
        for r in responses
        for f in feedbacks
    }
    if binary_quality:
        quality = {}
        for p in prompts:
            ones = rng.sample(range(n_responses), k=rng.randint(1, n_responses))
            for i, r in enumerate(responses):
                quality[(p, r)] = 1.0 if i in ones else 0.0
    else:
        quality = {
            (p, r): min(1.0, 0.05 + rng.random() * 0.95)
            for p in prompts
            for r in responses
        }
    return DiscreteChainModel(
        prompts=prompts,
        responses=responses,
        feedbacks=feedbacks,
        tau_r=tau_r,
        tau_f=tau_f,
        tau_ref=tau_ref,
        quality=quality,
    )
