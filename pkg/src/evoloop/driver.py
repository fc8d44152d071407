"""End-to-end evolution loop: meta-corpus construction, prompt-pool expansion,
per-round curation with feedback filtering, dataset assembly per policy,
trainer handoff over a file+subprocess contract, checkpoint bookkeeping, and
plateau stopping.

All randomness forks from one root seed by fixed labels, and artifacts carry no
timestamps, so two runs with the same config are byte-identical and a crashed
run resumes into the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import client, corpus, evaluate, refine
from .client import CompletionParams, ModelEndpoint
from .corpus import Dataset, EvolRecord, MetaRecord, MixPolicy, Source
from .errors import (
    ConfigError,
    EvoloopError,
    FeedbackParseError,
    InsufficientYield,
    TrainerFailed,
)
from .mockfam import SyntheticMathFamily, load_items
from .parsing import Domain, parse_instruction_list, qualified
from .refine import RefinementChain

# Trainer hyperparameter defaults; every key may be overridden via config.
DEFAULT_HPARAMS = {
    "global_batch_size": 128,
    "learning_rate": 2e-5,
    "epochs": 3,
    "max_length": 2048,
    "weight_decay": 0,
    "warmup_ratio": 0.03,
}


def fork_seed(root: int, label: str) -> int:
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class CurationStats:
    prompts_total: int = 0
    chains_generated: int = 0
    parse_failures: int = 0
    qualified_count: int = 0
    kept_original_count: int = 0
    oracle_accuracy_unfiltered: Optional[float] = None
    oracle_accuracy_filtered: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def plateau_check(direct_acc: float, sr_acc: float, epsilon: float) -> bool:
    """Stop when self-refinement no longer beats direct generation."""
    return sr_acc - direct_acc <= epsilon


def build_meta_corpus(
    annotator_endpoint: ModelEndpoint,
    init_endpoint: ModelEndpoint,
    prompts: list[str],
    domain: Domain = Domain.MATH,
    params: CompletionParams | None = None,
    failure_rate_abort: float = 0.2,
    max_workers: int = 8,
) -> list[MetaRecord]:
    """Build the annotated generation/feedback/refinement corpus.

    Per prompt: the initial model answers directly, the annotator produces
    feedback plus a refined answer in one completion. Prompts that fail to
    parse are skipped; the whole build aborts past the failure-rate threshold.
    """
    if not prompts:
        raise ValueError("prompt list must be non-empty")
    params = params or CompletionParams()

    def one(prompt: str) -> MetaRecord | None:
        try:
            initial = refine.generate_direct(init_endpoint, prompt, params).initial_response
            chain = refine.refine_response(
                annotator_endpoint, prompt, initial, domain, params
            )
            if chain.parse_failed:
                return None
            return MetaRecord(
                prompt=prompt,
                initial_response=initial,
                feedback=chain.feedback,
                refined_response=chain.refined_response,
                domain=domain,
                source=Source.ANNOTATOR,
                round=0,
            )
        except EvoloopError:
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(one, prompts))
    records = [r for r in results if r is not None]
    failures = len(prompts) - len(records)
    if failures / len(prompts) > failure_rate_abort:
        raise EvoloopError(
            f"meta-corpus build failed on {failures}/{len(prompts)} prompts"
        )
    return records


def _normalize_prompt(text: str) -> str:
    return " ".join(text.split())


def expand_prompts(
    endpoint: ModelEndpoint,
    seeds: list[str],
    target_count: int,
    params: CompletionParams | None = None,
    attempt_budget: int | None = None,
) -> list[str]:
    """Grow a prompt pool with the instruction-generation template.

    Rotating subsets of the seeds are shown each attempt; parsed instructions
    are deduplicated by whitespace-normalized exact match against both the
    seeds and everything generated so far.
    """
    if not seeds or target_count < 1:
        raise ValueError("need at least one seed and a positive target")
    params = params or CompletionParams(temperature=0.7)
    attempt_budget = attempt_budget or max(10, 4 * target_count)
    seen = {_normalize_prompt(s) for s in seeds}
    out: list[str] = []
    for attempt in range(attempt_budget):
        if len(out) >= target_count:
            break
        start = attempt % len(seeds)
        subset = [seeds[(start + i) % len(seeds)] for i in range(min(4, len(seeds)))]
        prompt = client.render_self_instruct_prompt(subset)
        attempt_params = CompletionParams(
            temperature=params.temperature,
            max_tokens=params.max_tokens,
            seed=fork_seed(params.seed, f"expand:{attempt}"),
        )
        try:
            completion = client.complete(endpoint, prompt, attempt_params)[0]
            items = parse_instruction_list(completion)
        except FeedbackParseError:
            continue
        for item in items:
            key = _normalize_prompt(item)
            if key in seen:
                continue
            seen.add(key)
            out.append(item)
            if len(out) >= target_count:
                break
    if len(out) < target_count and len(out) < 0.5 * target_count:
        raise InsufficientYield(
            f"expanded only {len(out)}/{target_count} prompts within budget"
        )
    return out[:target_count]


def curate_round(
    endpoint: ModelEndpoint,
    prompts: list[str],
    domain: Domain,
    round_index: int,
    params: CompletionParams | None = None,
    max_workers: int = 8,
) -> tuple[list[EvolRecord], CurationStats]:
    """Self-refine every prompt with the previous checkpoint and keep only the
    chains whose feedback qualifies them for training."""
    params = params or CompletionParams(temperature=0.7)
    stats = CurationStats(prompts_total=len(prompts))

    def one(arg: tuple[int, str]) -> RefinementChain | None:
        i, prompt = arg
        chain_params = CompletionParams(
            temperature=params.temperature,
            max_tokens=params.max_tokens,
            seed=fork_seed(params.seed, f"curate:{round_index}:{i}"),
        )
        try:
            return refine.self_refine(endpoint, prompt, chain_params, domain)
        except EvoloopError:
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        chains = [c for c in pool.map(one, enumerate(prompts)) if c is not None]

    stats.chains_generated = len(chains)
    stats.kept_original_count = sum(c.kept_original for c in chains)
    records: list[EvolRecord] = []
    qualified_chains: list[RefinementChain] = []
    for chain in chains:
        if chain.parse_failed:
            stats.parse_failures += 1
            continue
        try:
            ok = qualified(chain.feedback, domain)
        except FeedbackParseError:
            stats.parse_failures += 1
            continue
        if ok:
            qualified_chains.append(chain)
            records.append(
                EvolRecord(
                    prompt=chain.prompt,
                    refined_response=chain.refined_response,
                    round=round_index,
                    qualified_flag=True,
                    provenance=chain,
                )
            )
    stats.qualified_count = len(records)
    oracle = getattr(endpoint, "quality_oracle", None)
    if oracle:
        report = evaluate.filter_report(chains, qualified_chains, oracle)
        stats.oracle_accuracy_unfiltered = report.acc_before
        stats.oracle_accuracy_filtered = report.acc_after
    return records, stats


@dataclass
class RunConfig:
    """Whole-run configuration; round-trips losslessly through its JSON file."""

    seed: int = 0
    domain: str = "math"
    beta: float = 1.0
    policy: str = "restart"
    rounds: int = 3
    epsilon: float = 0.25
    k_self_consistency: int = 5
    max_workers: int = 8
    curation_temperature: float = 0.7
    output_dir: str = "out"
    trainer_command: list[str] = field(default_factory=list)
    meta_prompts: str = ""
    round_prompts: list[str] = field(default_factory=list)
    heldout: str = ""
    endpoints: dict = field(default_factory=dict)
    hparams: dict = field(default_factory=dict)
    config_dir: str = "."  # directory the config file lives in; not serialized

    _PATHLESS = ("config_dir",)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in self._PATHLESS:
            d.pop(k, None)
        return d

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        obj = json.loads(path.read_text(encoding="utf-8"))
        cfg = cls(**obj)
        cfg.config_dir = str(path.parent)
        cfg.validate()
        return cfg

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.config_dir) / p

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def validate(self) -> None:
        problems = []
        if self.domain not in ("math", "general"):
            problems.append(f"domain: {self.domain!r} not in ('math', 'general')")
        if self.policy not in [p.value for p in MixPolicy]:
            problems.append(f"policy: {self.policy!r} invalid")
        if self.beta < 0:
            problems.append("beta: must be >= 0")
        if self.rounds < 0:
            problems.append("rounds: must be >= 0")
        if self.k_self_consistency < 1:
            problems.append("k_self_consistency: must be >= 1")
        if self.max_workers < 1:
            problems.append("max_workers: must be >= 1")
        if not self.trainer_command:
            problems.append("trainer_command: must be a non-empty argv list")
        if self.rounds > 0 and len(self.round_prompts) < self.rounds:
            problems.append(
                f"round_prompts: need {self.rounds} pool paths, have {len(self.round_prompts)}"
            )
        if self.endpoints.get("kind") not in ("synthetic-math", "remote"):
            problems.append("endpoints.kind: must be 'synthetic-math' or 'remote'")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def domain_enum(self) -> Domain:
        return Domain.MATH if self.domain == "math" else Domain.GENERAL

    @property
    def policy_enum(self) -> MixPolicy:
        return MixPolicy(self.policy)


class EndpointProvider:
    """Resolves checkpoint ids to endpoints for a run."""

    def endpoint_for(self, checkpoint_id: str, level: int | None = None) -> ModelEndpoint:
        raise NotImplementedError

    def init_endpoint(self) -> ModelEndpoint:
        raise NotImplementedError

    def annotator_endpoint(self) -> ModelEndpoint:
        raise NotImplementedError


class SyntheticProvider(EndpointProvider):
    def __init__(self, config: RunConfig):
        spec = config.endpoints
        items = load_items(config.resolve(spec["items"]))
        self.family = SyntheticMathFamily(
            items=items,
            base_correct=spec.get("base_correct", 0.4),
            gain_per_level=spec.get("gain_per_level", 0.2),
            refine_boost=spec.get("refine_boost", 0.3),
            seed=config.seed,
        )
        # The annotator plays the role of a strong external labeler.
        self.annotator_level = spec.get("annotator_level", 10)

    def endpoint_for(self, checkpoint_id: str, level: int | None = None) -> ModelEndpoint:
        return self.family.endpoint_for(checkpoint_id, level)

    def init_endpoint(self) -> ModelEndpoint:
        return self.family.endpoint_for("init", 0)

    def annotator_endpoint(self) -> ModelEndpoint:
        return self.family.endpoint_for("annotator", self.annotator_level)


def make_provider(config: RunConfig) -> EndpointProvider:
    if config.endpoints["kind"] == "synthetic-math":
        return SyntheticProvider(config)
    raise ConfigError("remote endpoint families require explicit checkpoint ids; "
                      "only mock runs drive the full evolution loop offline")


@dataclass
class EvolutionState:
    """Round-by-round bookkeeping, persisted as one JSON document."""

    t: int = 0
    init_checkpoint: str = "init"
    checkpoints: dict[str, str] = field(default_factory=dict)  # round -> checkpoint id
    round_datasets: dict[str, dict] = field(default_factory=dict)  # round -> {path, sha256}
    round_stats: dict[str, dict] = field(default_factory=dict)
    round_metrics: dict[str, dict] = field(default_factory=dict)
    config_hash: str = ""
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def state_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "EvolutionState":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**obj)


def write_hparams(path: str | Path, overrides: dict | None = None) -> None:
    hp = dict(DEFAULT_HPARAMS)
    hp.update(overrides or {})
    Path(path).write_text(
        json.dumps(hp, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def invoke_trainer(
    command: list[str],
    data_path: Path,
    hparams_path: Path,
    base_checkpoint: str,
    out_dir: Path,
) -> dict:
    """Run the trainer subprocess and read back its checkpoint manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [
        *command,
        "--data", str(data_path),
        "--hparams", str(hparams_path),
        "--base", base_checkpoint,
        "--out", str(out_dir),
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise TrainerFailed(
            f"trainer exited {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        raise TrainerFailed(f"trainer wrote no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if "checkpoint_id" not in manifest:
        raise TrainerFailed("trainer manifest lacks checkpoint_id")
    return manifest


def _read_prompts(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


class EvolutionRun:
    """One evolution run rooted at an output directory; resumable."""

    def __init__(self, config: RunConfig, provider: EndpointProvider | None = None):
        self.config = config
        self.provider = provider or make_provider(config)
        self.out = config.resolve(config.output_dir)
        self.state_path = self.out / "state.json"
        self.datasets_dir = self.out / "datasets"
        self.ckpt_dir = self.out / "checkpoints"

    # -- artifact paths ----------------------------------------------------
    def meta_records_path(self) -> Path:
        return self.datasets_dir / "meta_records.jsonl"

    def meta_dataset_path(self) -> Path:
        return self.datasets_dir / "meta.jsonl"

    def round_dataset_path(self, t: int) -> Path:
        return self.datasets_dir / f"round{t}.jsonl"

    def combined_dataset_path(self, t: int) -> Path:
        return self.datasets_dir / f"train_round{t}.jsonl"

    # -- phases ------------------------------------------------------------
    def run(self) -> EvolutionState:
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        if self.state_path.exists():
            state = EvolutionState.load(self.state_path)
            if state.config_hash != cfg.config_hash():
                raise ConfigError(
                    "state file belongs to a different config; refusing to resume"
                )
            self._reregister_checkpoints(state)
        else:
            state = EvolutionState(config_hash=cfg.config_hash())

        if "0" not in state.checkpoints:
            self._meta_phase(state)

        d_meta = corpus.load_dataset(self.meta_dataset_path())
        round_datasets: list[Dataset] = [
            corpus.load_dataset(self.round_dataset_path(i))
            for i in range(1, state.t + 1)
        ]
        for t in range(state.t + 1, cfg.rounds + 1):
            if state.stopped_early:
                break
            round_datasets.append(self._evolution_round(state, t, d_meta, round_datasets))
        return state

    def _meta_phase(self, state: EvolutionState) -> None:
        cfg = self.config
        prompts = _read_prompts(cfg.resolve(cfg.meta_prompts))
        params = CompletionParams(
            temperature=cfg.curation_temperature,
            seed=fork_seed(cfg.seed, "meta"),
        )
        records = build_meta_corpus(
            self.provider.annotator_endpoint(),
            self.provider.init_endpoint(),
            prompts,
            domain=cfg.domain_enum,
            params=params,
            max_workers=cfg.max_workers,
        )
        self.datasets_dir.mkdir(parents=True, exist_ok=True)
        with open(self.meta_records_path(), "w", encoding="utf-8") as f:
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
        examples = [
            ex for rec in records for ex in corpus.assemble_meta_examples(rec, cfg.beta)
        ]
        d_meta = corpus.dataset_from_examples(examples)
        corpus.save_dataset(d_meta, self.meta_dataset_path())

        hparams_path = self.out / "hparams.json"
        write_hparams(hparams_path, cfg.hparams)
        manifest = invoke_trainer(
            cfg.trainer_command,
            self.meta_dataset_path(),
            hparams_path,
            state.init_checkpoint,
            self.ckpt_dir / "meta",
        )
        state.checkpoints["0"] = manifest["checkpoint_id"]
        self.provider.endpoint_for(manifest["checkpoint_id"], level=1)
        state.save(self.state_path)

    def _evolution_round(
        self, state: EvolutionState, t: int, d_meta: Dataset, round_datasets: list[Dataset]
    ) -> Dataset:
        cfg = self.config
        prev_ckpt = state.checkpoints[str(t - 1)]
        endpoint = self.provider.endpoint_for(prev_ckpt)
        prompts = self._round_prompt_pool(t)
        params = CompletionParams(
            temperature=cfg.curation_temperature, seed=fork_seed(cfg.seed, f"round:{t}")
        )
        records, stats = curate_round(
            endpoint, prompts, cfg.domain_enum, t, params, max_workers=cfg.max_workers
        )
        examples = [ex for rec in records for ex in corpus.assemble_evol_examples(rec)]
        round_ds = corpus.dataset_from_examples(examples)
        corpus.save_dataset(round_ds, self.round_dataset_path(t))
        round_datasets_local = round_datasets + [round_ds]

        base_round, combined = corpus.assemble_round_dataset(
            cfg.policy_enum, d_meta, round_datasets_local, t
        )
        corpus.save_dataset(combined, self.combined_dataset_path(t))
        manifest = invoke_trainer(
            cfg.trainer_command,
            self.combined_dataset_path(t),
            self.out / "hparams.json",
            state.checkpoints[str(base_round)],
            self.ckpt_dir / f"round{t}",
        )
        new_ckpt = manifest["checkpoint_id"]
        state.checkpoints[str(t)] = new_ckpt
        new_endpoint = self.provider.endpoint_for(new_ckpt, level=t + 1)

        metrics = self._heldout_metrics(new_endpoint)
        state.round_datasets[str(t)] = {
            "path": str(self.round_dataset_path(t).name),
            "id": round_ds.id,
            "sha256": round_ds.content_hash(),
            "combined_sha256": combined.content_hash(),
        }
        state.round_stats[str(t)] = stats.to_dict()
        state.round_metrics[str(t)] = metrics
        state.t = t
        if metrics and plateau_check(
            metrics["direct_accuracy"], metrics["sr_accuracy"], cfg.epsilon
        ):
            state.stopped_early = True
        state.save(self.state_path)
        return round_ds

    def _heldout_metrics(self, endpoint: ModelEndpoint) -> dict:
        cfg = self.config
        if not cfg.heldout:
            return {}
        testset = evaluate.load_testset(cfg.resolve(cfg.heldout))
        eval_params = CompletionParams(seed=fork_seed(cfg.seed, "heldout"))
        direct = evaluate.eval_accuracy(
            endpoint, testset, "direct", params=eval_params,
            domain=cfg.domain_enum, max_workers=cfg.max_workers,
        )
        sr = evaluate.eval_accuracy(
            endpoint, testset, "sr", params=eval_params,
            domain=cfg.domain_enum, max_workers=cfg.max_workers,
        )
        return {"direct_accuracy": direct.accuracy, "sr_accuracy": sr.accuracy}

    def _round_prompt_pool(self, t: int) -> list[str]:
        cfg = self.config
        pool = _read_prompts(cfg.resolve(cfg.round_prompts[t - 1]))
        # Round pools never overlap the meta prompts or any earlier pool.
        used = {_normalize_prompt(p) for p in _read_prompts(cfg.resolve(cfg.meta_prompts))}
        for i in range(1, t):
            used.update(
                _normalize_prompt(p)
                for p in _read_prompts(cfg.resolve(cfg.round_prompts[i - 1]))
            )
        return [p for p in pool if _normalize_prompt(p) not in used]

    def _reregister_checkpoints(self, state: EvolutionState) -> None:
        # Mock families key behavior off registration level; restore on resume.
        for round_str, ckpt in state.checkpoints.items():
            self.provider.endpoint_for(ckpt, level=int(round_str) + 1)


def run_evolution(config: RunConfig, provider: EndpointProvider | None = None) -> EvolutionState:
    return EvolutionRun(config, provider).run()
