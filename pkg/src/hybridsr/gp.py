"""Genetic programming over flat traversals.

Operators work on tuples by slicing subtree spans. Any variation whose
output breaks the constraint set is reverted to a copy of its parent, so a
population that starts valid stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import TokenLibrary, Traversal, subtree_end
from .policy import ConstraintSet, satisfies

MUTATION_MODES = ("uniform", "node_replace", "insert", "shrink")


@dataclass
class GpConfig:
    crossover_prob: float = 0.5
    mutation_prob: float = 0.5
    tournament_size: int = 5
    mutation_modes: tuple = MUTATION_MODES
    mutate_tree_max: int = 3
    insert_fill_depth: int = 2
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def __post_init__(self):
        for p in (self.crossover_prob, self.mutation_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament size must be >= 1")
        bad = set(self.mutation_modes) - set(MUTATION_MODES)
        if bad or not self.mutation_modes:
            raise ValueError(f"bad mutation modes {sorted(bad)}")
        self.mutation_modes = tuple(self.mutation_modes)


@dataclass
class Population:
    individuals: list
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.individuals)

    def best(self) -> tuple[Traversal, float]:
        i = int(np.argmax(self.rewards))
        return self.individuals[i], float(self.rewards[i])


def tournament_select(pop: Population, k: int, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Indices of ``n`` tournament winners (k draws with replacement each).

    Ties go to the first drawn contender.
    """
    if len(pop) == 0:
        raise ValueError("empty population")
    draws = rng.integers(0, len(pop), size=(n, k))
    winners = np.argmax(pop.rewards[draws], axis=1)
    return draws[np.arange(n), winners]


def crossover_one_point(a: Traversal, b: Traversal, lib: TokenLibrary, rng: np.random.Generator):
    """Swap a uniformly chosen subtree of ``a`` with one of ``b``."""
    arities = lib.arities
    i = int(rng.integers(len(a)))
    j = int(rng.integers(len(b)))
    ea = subtree_end(a, arities, i)
    eb = subtree_end(b, arities, j)
    return a[:i] + b[j:eb] + a[ea:], b[:j] + a[i:ea] + b[eb:]


def random_subtree(lib: TokenLibrary, max_depth: int, rng: np.random.Generator) -> Traversal:
    """Grow-style random tree; terminals forced at ``max_depth``."""
    all_ids = len(lib)
    terminals = lib.terminal_ids
    arities = lib.arities
    out = []
    stack = [0]  # depths of unfilled slots
    while stack:
        depth = stack.pop()
        if depth >= max_depth:
            tok = terminals[int(rng.integers(len(terminals)))]
        else:
            tok = int(rng.integers(all_ids))
        out.append(tok)
        stack.extend([depth + 1] * arities[tok])
    return tuple(out)


def _node_replace(t, lib, rng):
    arities = lib.arities
    by_arity = lib.by_arity
    candidates = [i for i, tok in enumerate(t) if len(by_arity[arities[tok]]) > 1]
    if not candidates:
        return t
    i = candidates[int(rng.integers(len(candidates)))]
    pool = [tok for tok in by_arity[arities[t[i]]] if tok != t[i]]
    return t[:i] + (pool[int(rng.integers(len(pool)))],) + t[i + 1:]


def _uniform(t, lib, cfg, rng):
    i = int(rng.integers(len(t)))
    end = subtree_end(t, lib.arities, i)
    return t[:i] + random_subtree(lib, cfg.mutate_tree_max, rng) + t[end:]


def _insert(t, lib, cfg, rng):
    i = int(rng.integers(len(t)))
    end = subtree_end(t, lib.arities, i)
    ops = lib.operator_ids
    op = ops[int(rng.integers(len(ops)))]
    arity = lib.arities[op]
    slot = int(rng.integers(arity))
    new = (op,)
    for k in range(arity):
        new += t[i:end] if k == slot else random_subtree(lib, cfg.insert_fill_depth, rng)
    return t[:i] + new + t[end:]


def _shrink(t, lib, rng):
    arities = lib.arities
    nodes = [i for i, tok in enumerate(t) if arities[tok]]
    i = nodes[int(rng.integers(len(nodes)))]
    end = subtree_end(t, arities, i)
    leaves = [tok for tok in t[i:end] if arities[tok] == 0]
    return t[:i] + (leaves[int(rng.integers(len(leaves)))],) + t[end:]


def mutate_with_mode(t: Traversal, lib: TokenLibrary, cfg: GpConfig, rng: np.random.Generator):
    """Mutate ``t``; returns ``(child, mode_drawn)``.

    Shrink on a lone terminal has nothing to remove and falls back to
    node replacement; the drawn mode is still reported.
    """
    mode = cfg.mutation_modes[int(rng.integers(len(cfg.mutation_modes)))]
    if mode == "uniform":
        child = _uniform(t, lib, cfg, rng)
    elif mode == "insert":
        child = _insert(t, lib, cfg, rng)
    elif mode == "shrink" and len(t) > 1:
        child = _shrink(t, lib, rng)
    else:
        child = _node_replace(t, lib, rng)
    return child, mode


def mutate(t: Traversal, lib: TokenLibrary, cfg: GpConfig, rng: np.random.Generator) -> Traversal:
    return mutate_with_mode(t, lib, cfg, rng)[0]


def constrain_or_revert(child: Traversal, parent: Traversal, lib: TokenLibrary, omega: ConstraintSet) -> Traversal:
    assert satisfies(parent, lib, omega), "parent violates the constraint set"
    return child if satisfies(child, lib, omega) else parent


def vary(parents: list, lib: TokenLibrary, cfg: GpConfig, rng: np.random.Generator) -> list:
    """Crossover on consecutive pairs, then mutation, each with reversion."""
    omega = cfg.constraints
    off = list(parents)
    pc, pm = cfg.crossover_prob, cfg.mutation_prob
    if pc > 0:
        for i in range(1, len(off), 2):
            if rng.random() < pc:
                a, b = off[i - 1], off[i]
                c1, c2 = crossover_one_point(a, b, lib, rng)
                off[i - 1] = c1 if satisfies(c1, lib, omega) else a
                off[i] = c2 if satisfies(c2, lib, omega) else b
    if pm > 0:
        for i in range(len(off)):
            if rng.random() < pm:
                child = mutate(off[i], lib, cfg, rng)
                if satisfies(child, lib, omega):
                    off[i] = child
    return off


def generation_step(pop: Population, cfg: GpConfig, lib: TokenLibrary, reward_fn, rng: np.random.Generator) -> Population:
    """Select N by tournament, vary, evaluate."""
    n = len(pop)
    chosen = tournament_select(pop, cfg.tournament_size, rng, n)
    parents = [pop.individuals[i] for i in chosen]
    offspring = vary(parents, lib, cfg, rng)
    return Population(offspring, reward_fn.rewards(offspring))


def seed_population(individuals, reward_fn) -> Population:
    individuals = [tuple(t) for t in individuals]
    return Population(individuals, reward_fn.rewards(individuals))
