"""Generator-seeded random-restart GP.

Every outer iteration samples a batch from the policy, uses it as the
starting population of a fresh GP run, and trains the policy on its own
batch joined with the best GP individuals.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .expr import TokenLibrary, Traversal, format_infix
from .gp import GpConfig, MUTATION_MODES, Population, generation_step, seed_population
from .policy import METHODS, ConstraintSet, Policy, Trainer
from .reward import Dataset, Fitness, RewardFunction

log = logging.getLogger(__name__)

ABLATIONS = frozenset({
    "disable_gp",
    "disable_rnn_training",
    "random_seed_population",
    "exclude_rnn_from_training",
    "exclude_gp_from_training",
    "uniform_mutation_only",
    "drop_constraints",
})

# NMSE below 1e-12, the usual "exact fit" cut-off
EXACT_NRMSE = 1e-6


@dataclass
class SearchConfig:
    batch_size: int = 500
    gp_generations: int = 25
    gp_selection: int = 1
    trainer: str = "pqt"
    budget: int = 2_000_000
    learning_rate: float = 0.0025
    entropy_weight: float = 0.005
    pqt_k: int = 10
    epsilon: float = 0.05
    ewma: float = 0.25
    hidden: int = 32
    crossover_prob: float = 0.5
    mutation_prob: float = 0.5
    tournament_size: int = 5
    mutate_tree_max: int = 3
    min_length: int = 4
    max_length: int = 30
    max_constants: int | None = None
    const_restarts: int = 0
    early_stop: bool = True
    ablations: frozenset = frozenset()

    def __post_init__(self):
        self.ablations = frozenset(self.ablations)
        unknown = self.ablations - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        if self.trainer not in METHODS:
            raise ValueError(f"trainer must be one of {METHODS}")
        if not 1 <= self.gp_selection <= self.batch_size:
            raise ValueError("gp_selection must lie in [1, batch_size]")
        if self.budget < self.batch_size:
            raise ValueError("budget must be >= batch_size")
        if self.gp_generations < 0:
            raise ValueError("gp_generations must be >= 0")

    @property
    def constraints(self) -> ConstraintSet:
        relaxed = "drop_constraints" in self.ablations
        return ConstraintSet(
            min_length=self.min_length,
            max_length=self.max_length,
            forbid_nested_trig=not relaxed,
            forbid_inverse_pairs=not relaxed,
            max_constants=self.max_constants,
        )

    @property
    def gp(self) -> GpConfig:
        modes = ("uniform",) if "uniform_mutation_only" in self.ablations else MUTATION_MODES
        return GpConfig(
            crossover_prob=self.crossover_prob,
            mutation_prob=self.mutation_prob,
            tournament_size=self.tournament_size,
            mutation_modes=modes,
            mutate_tree_max=self.mutate_tree_max,
            constraints=self.constraints,
        )

    @property
    def gp_enabled(self) -> bool:
        return "disable_gp" not in self.ablations and self.gp_generations > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = sorted(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "SearchConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


class BudgetCounter:
    """Monotone count of candidate expressions produced."""

    def __init__(self, keep_events: bool = False):
        self.count = 0
        self.events: list[tuple[str, int]] | None = [] if keep_events else None

    def add(self, n: int, source: str = "") -> int:
        if n < 0:
            raise ValueError("budget increments must be non-negative")
        self.count += n
        if self.events is not None:
            self.events.append((source, n))
        return self.count


def budget_accounting(events) -> int:
    counter = BudgetCounter()
    for _, n in events:
        counter.add(n)
    return counter.count


@dataclass
class SearchResult:
    best: Traversal | None
    best_reward: float
    best_fitness: Fitness | None
    reward_trace: list = field(default_factory=list)
    candidates: int = 0
    wall_time: float = 0.0
    iterations: list = field(default_factory=list)
    exact_fit: bool = False
    library: TokenLibrary | None = None
    events: list | None = None

    @property
    def best_infix(self) -> str:
        if self.best is None:
            return ""
        return format_infix(self.best, self.library, self.best_fitness.consts or None)


def select_training_set(gp_generations: list[Population], rnn_batch: list, m: int) -> list:
    """Top-``m`` unique individuals over all generations, then the RNN batch."""
    return top_m(gp_generations, m) + [tuple(t) for t in rnn_batch]


def top_m(gp_generations: list[Population], m: int) -> list:
    pool: dict = {}
    for pop in gp_generations:
        for t, r in zip(pop.individuals, pop.rewards):
            if t not in pool:
                pool[t] = r
    ranked = sorted(pool.items(), key=lambda kv: -kv[1])  # stable: first seen wins ties
    return [t for t, _ in ranked[:m]]


def run_gp(start: list, reward_fn: RewardFunction, cfg: GpConfig, generations: int,
           rng: np.random.Generator, counter: BudgetCounter | None = None,
           stop: Callable[[Population], bool] | None = None) -> list[Population]:
    """One GP restart; returns generations 0..S (generation 0 is ``start``)."""
    pops = [seed_population(start, reward_fn)]
    for _ in range(generations):
        pops.append(generation_step(pops[-1], cfg, reward_fn.lib, reward_fn, rng))
        if counter is not None:
            counter.add(len(start), "gp")
        if stop is not None and stop(pops[-1]):
            break
    return pops


class _Best:
    def __init__(self, reward_fn: RewardFunction):
        self.reward_fn = reward_fn
        self.traversal: Traversal | None = None
        self.reward = -1.0

    def update(self, individuals, rewards) -> None:
        i = int(np.argmax(rewards))
        if rewards[i] > self.reward:
            self.reward = float(rewards[i])
            self.traversal = tuple(individuals[i])

    @property
    def exact(self) -> bool:
        if self.traversal is None:
            return False
        return self.reward_fn(self.traversal).nrmse <= EXACT_NRMSE


def run_search(cfg: SearchConfig, dataset: Dataset, lib: TokenLibrary, seed: int = 0,
               on_iteration: Callable[[dict], None] | None = None,
               reward_fn: RewardFunction | None = None, keep_events: bool = False) -> SearchResult:
    start_time = time.perf_counter()
    ss = np.random.SeedSequence(seed)
    init_ss, rnn_ss, gp_ss = ss.spawn(3)
    rnn_rng = np.random.default_rng(rnn_ss)
    gp_rng = np.random.default_rng(gp_ss)

    omega = cfg.constraints
    gp_cfg = cfg.gp
    policy = Policy(lib, omega, hidden=cfg.hidden, seed=int(init_ss.generate_state(1)[0]))
    trainer = Trainer(policy, cfg.trainer, cfg.learning_rate, cfg.entropy_weight,
                      cfg.epsilon, cfg.ewma, cfg.pqt_k)
    reward_fn = reward_fn or RewardFunction(dataset, lib, const_restarts=cfg.const_restarts)
    counter = BudgetCounter(keep_events)
    best = _Best(reward_fn)
    ab = cfg.ablations
    random_seeds = "random_seed_population" in ab
    train = "disable_rnn_training" not in ab and cfg.learning_rate != 0
    # uniform sampler for randomly seeded restarts: untrained output layer is zero
    seeder = Policy(lib, omega, hidden=4, seed=0) if random_seeds else None
    need_rnn = not (random_seeds and cfg.gp_enabled) or train

    def stop(pop: Population) -> bool:
        best.update(pop.individuals, pop.rewards)
        return cfg.early_stop and best.exact

    trace: list[float] = []
    iterations: list[dict] = []
    exact = False
    it = 0
    while counter.count < cfg.budget:
        rnn_batch: list = []
        rnn_rewards = np.zeros(0)
        if need_rnn:
            rnn_batch = policy.sample_batch(cfg.batch_size, rnn_rng)
            counter.add(len(rnn_batch), "rnn")
            rnn_rewards = reward_fn.rewards(rnn_batch)
            best.update(rnn_batch, rnn_rewards)

        gens: list[Population] = []
        if cfg.gp_enabled and not (cfg.early_stop and best.exact):
            if random_seeds:
                start = seeder.sample_batch(cfg.batch_size, gp_rng)
                counter.add(len(start), "random")
                start_pop = seed_population(start, reward_fn)
                best.update(start_pop.individuals, start_pop.rewards)
            else:
                start = rnn_batch
            gens = run_gp(start, reward_fn, gp_cfg, cfg.gp_generations, gp_rng, counter, stop)

        exact = cfg.early_stop and best.exact
        loss = float("nan")
        if train and rnn_batch and not exact:
            training = [] if "exclude_rnn_from_training" in ab else list(rnn_batch)
            if gens and "exclude_gp_from_training" not in ab:
                training = top_m(gens, cfg.gp_selection) + training
            if not training:
                training = list(rnn_batch)
            loss = trainer.train_step(training, reward_fn.rewards(training))

        trace.append(best.reward)
        gp_rewards = np.concatenate([p.rewards for p in gens[1:]]) if len(gens) > 1 else np.zeros(0)
        record = {
            "iteration": it,
            "candidates": counter.count,
            "best_reward": best.reward,
            "rnn_mean_reward": float(rnn_rewards.mean()) if rnn_rewards.size else None,
            "rnn_max_reward": float(rnn_rewards.max()) if rnn_rewards.size else None,
            "gp_mean_reward": float(gp_rewards.mean()) if gp_rewards.size else None,
            "gp_max_reward": float(gp_rewards.max()) if gp_rewards.size else None,
            "loss": None if np.isnan(loss) else loss,
        }
        iterations.append(record)
        if on_iteration is not None:
            on_iteration(record)
        log.debug("%s", json.dumps(record))
        it += 1
        if exact:
            break

    fitness = reward_fn(best.traversal) if best.traversal is not None else None
    result = SearchResult(
        best=best.traversal,
        best_reward=best.reward,
        best_fitness=fitness,
        reward_trace=trace,
        candidates=counter.count,
        wall_time=time.perf_counter() - start_time,
        iterations=iterations,
        exact_fit=exact,
        library=lib,
    )
    if keep_events:
        result.events = counter.events
    return result
