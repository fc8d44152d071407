"""Command-line entry point for the pipeline and the verification suite.

Exit codes: 0 success, 2 config error, 3 endpoint error, 4 trainer error,
5 verification failure. Failures print one machine-parsable line to stderr:
"error: <kind>: <message>".
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
from pathlib import Path

from . import driver, evaluate, theory
from .client import CompletionParams
from .driver import EvolutionState, RunConfig, fork_seed, make_provider
from .errors import (
    ConfigError,
    EndpointUnavailable,
    EvoloopError,
    TrainerFailed,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENDPOINT = 3
EXIT_TRAINER = 4
EXIT_VERIFY = 5


def _hash_files(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()


def _is_noop(out_path: Path, inputs_hash: str) -> bool:
    sidecar = out_path.with_name(out_path.name + ".inputs.json")
    if out_path.exists() and sidecar.exists():
        stored = json.loads(sidecar.read_text(encoding="utf-8"))
        return stored.get("inputs_sha256") == inputs_hash
    return False


def _record_inputs(out_path: Path, inputs_hash: str) -> None:
    sidecar = out_path.with_name(out_path.name + ".inputs.json")
    sidecar.write_text(
        json.dumps({"inputs_sha256": inputs_hash}, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def cmd_build_meta(args) -> int:
    config = RunConfig.from_file(args.config)
    prompts_path = config.resolve(args.prompts_file)
    out_path = config.resolve(config.output_dir) / "meta_corpus.jsonl"
    inputs_hash = _hash_files([prompts_path]) + config.config_hash()
    if _is_noop(out_path, inputs_hash):
        print(f"up to date: {out_path}")
        return EXIT_OK
    provider = make_provider(config)
    prompts = driver._read_prompts(prompts_path)
    records = driver.build_meta_corpus(
        provider.annotator_endpoint(),
        provider.init_endpoint(),
        prompts,
        domain=config.domain_enum,
        params=CompletionParams(
            temperature=config.curation_temperature, seed=fork_seed(config.seed, "meta")
        ),
        max_workers=config.max_workers,
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(
                json.dumps(
                    {
                        "prompt": rec.prompt,
                        "initial_response": rec.initial_response,
                        "feedback": rec.feedback,
                        "refined_response": rec.refined_response,
                        "domain": rec.domain.value,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    _record_inputs(out_path, inputs_hash)
    print(f"wrote {len(records)} meta records to {out_path}")
    return EXIT_OK


def cmd_expand_prompts(args) -> int:
    config = RunConfig.from_file(args.config)
    seeds_path = config.resolve(args.seeds_file)
    out_path = config.resolve(config.output_dir) / "expanded_prompts.txt"
    inputs_hash = _hash_files([seeds_path]) + config.config_hash() + str(args.count)
    if _is_noop(out_path, inputs_hash):
        print(f"up to date: {out_path}")
        return EXIT_OK
    provider = make_provider(config)
    seeds = driver._read_prompts(seeds_path)
    prompts = driver.expand_prompts(
        provider.init_endpoint(),
        seeds,
        args.count,
        params=CompletionParams(temperature=0.7, seed=fork_seed(config.seed, "expand")),
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(prompts) + "\n", encoding="utf-8")
    _record_inputs(out_path, inputs_hash)
    print(f"wrote {len(prompts)} prompts to {out_path}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    config = RunConfig.from_file(args.config)
    state_path = config.resolve(config.output_dir) / "state.json"
    if state_path.exists():
        state = EvolutionState.load(state_path)
        if state.config_hash == config.config_hash() and (
            state.t >= config.rounds or state.stopped_early
        ):
            print(f"up to date: {state_path} (t={state.t})")
            return EXIT_OK
    state = driver.run_evolution(config)
    print(f"evolution complete: t={state.t}, state hash {state.state_hash()[:16]}")
    return EXIT_OK


def _registered_provider(config: RunConfig):
    provider = make_provider(config)
    state_path = config.resolve(config.output_dir) / "state.json"
    if state_path.exists():
        state = EvolutionState.load(state_path)
        for round_str, ckpt in state.checkpoints.items():
            provider.endpoint_for(ckpt, level=int(round_str) + 1)
    return provider


def cmd_eval(args) -> int:
    config = RunConfig.from_file(args.config)
    provider = _registered_provider(config)
    endpoint = provider.endpoint_for(args.checkpoint)
    testset = evaluate.load_testset(config.resolve(args.testset))
    strategy = args.strategy.replace("sc_sr", "sc-sr")
    k = args.k or config.k_self_consistency
    temperature = 0.0 if strategy in ("direct", "sr") or k == 1 else 0.7
    params = CompletionParams(
        temperature=temperature, seed=fork_seed(config.seed, "eval")
    )
    result = evaluate.eval_accuracy(
        endpoint, testset, strategy, k=k, params=params,
        domain=config.domain_enum, max_workers=config.max_workers,
    )
    report = {
        "checkpoint": args.checkpoint,
        "strategy": strategy,
        "k": k,
        "accuracy": result.accuracy,
        "items": [
            {"id": s.id, "correct": s.correct, "predicted": s.predicted, "note": s.note}
            for s in result.per_item
        ],
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_winrate(args) -> int:
    config = RunConfig.from_file(args.config)
    provider = _registered_provider(config)
    endpoint_a = provider.endpoint_for(args.a)
    endpoint_b = provider.endpoint_for(args.b)
    judge = provider.annotator_endpoint()
    testset = evaluate.load_testset(config.resolve(args.testset))
    params = CompletionParams(seed=fork_seed(config.seed, "winrate"))
    result = evaluate.eval_winrate(
        endpoint_a, endpoint_b, judge, testset, params=params,
        max_workers=config.max_workers,
    )
    print(
        json.dumps(
            {
                "a": args.a,
                "b": args.b,
                "wins": result.wins,
                "ties": result.ties,
                "losses": result.losses,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    if args.model_file:
        models = [theory.DiscreteChainModel.from_file(args.model_file)]
    else:
        rng = random.Random(args.seed)
        models = [
            theory.random_model(
                rng,
                n_prompts=rng.randint(1, 3),
                n_responses=rng.randint(2, 4),
                n_feedbacks=rng.randint(1, 3),
            )
            for _ in range(args.random)
        ]
    rng = random.Random(args.seed + 1)
    checks = {
        "chain-marginal-normalized": True,
        "kl-nonnegative": True,
        "kl-decomposition": True,
        "elbo-bound": True,
        "keep-rule-gain-nonnegative": True,
    }
    for model in models:
        for p in model.prompts:
            dist = theory.psi(model, p)
            if abs(sum(dist.probs) - 1.0) > 1e-12:
                checks["chain-marginal-normalized"] = False
            other = theory.random_model(
                rng,
                n_prompts=len(model.prompts),
                n_responses=len(model.responses),
                n_feedbacks=len(model.feedbacks),
            )
            tau_next = other.direct_distribution(other.prompts[0])
            tau_next = theory.ResponseDistribution(
                support=model.responses, probs=tau_next.probs
            )
            res = theory.kl_divergence(dist, tau_next)
            if res.kl < -1e-12:
                checks["kl-nonnegative"] = False
            if abs(res.kl - (-res.entropy + res.cross_entropy)) > 1e-9:
                checks["kl-decomposition"] = False
            if not theory.elbo_check(model, tau_next, p, psi_dist=dist).holds:
                checks["elbo-bound"] = False
    binary_rng = random.Random(args.seed + 2)
    for _ in range(len(models)):
        model = theory.random_model(binary_rng, binary_quality=True)
        for p in model.prompts:
            if theory.refinement_gain(model, p, keep_rule=True) < -1e-12:
                checks["keep-rule-gain-nonnegative"] = False
    ok = True
    for name, passed in checks.items():
        print(f"{'PASS' if passed else 'FAIL'} {name}")
        ok = ok and passed
    if not ok:
        print("error: verification: one or more identities failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoloop", description="Self-evolution fine-tuning pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-meta", help="build the annotated meta-skill corpus")
    p.add_argument("--config", required=True)
    p.add_argument("prompts_file")
    p.set_defaults(fn=cmd_build_meta)

    p = sub.add_parser("expand-prompts", help="grow a prompt pool from seed examples")
    p.add_argument("--config", required=True)
    p.add_argument("seeds_file")
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(fn=cmd_expand_prompts)

    p = sub.add_parser("evolve", help="run the full two-phase evolution loop")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("eval", help="score a checkpoint on a math test set")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["direct", "sr", "sc", "sc-sr", "sc_sr"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("testset")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("winrate", help="pairwise comparison of two checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("testset")
    p.set_defaults(fn=cmd_winrate)

    p = sub.add_parser("verify-theory", help="check training-objective identities")
    p.add_argument("--model-file", default=None)
    p.add_argument("--random", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify_theory)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EndpointUnavailable as exc:
        print(f"error: endpoint: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except TrainerFailed as exc:
        print(f"error: trainer: {exc}", file=sys.stderr)
        return EXIT_TRAINER
    except EvoloopError as exc:
        print(f"error: pipeline: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT


if __name__ == "__main__":
    sys.exit(main())
