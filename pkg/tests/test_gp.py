from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsr.expr import TokenLibrary, is_complete
from hybridsr.gp import (
    MUTATION_MODES,
    GpConfig,
    Population,
    constrain_or_revert,
    crossover_one_point,
    generation_step,
    mutate,
    mutate_with_mode,
    random_subtree,
    seed_population,
    tournament_select,
)
from hybridsr.policy import ConstraintSet, Policy
from hybridsr.reward import Dataset, RewardFunction

import oracles

LIB = TokenLibrary.default(1)
RICH = TokenLibrary.default(2, ["tan", "n2", "sqrt", "neg", "inv"])


class ZeroRng:
    """Stands in for a Generator whose every integer draw is 0."""

    def integers(self, *args, size=None, **kw):
        return 0 if size is None else np.zeros(size, dtype=np.int64)

    def random(self, size=None):
        return 0.0 if size is None else np.zeros(size)


def pop_of(rewards):
    return Population([(i,) for i in range(len(rewards))], np.asarray(rewards, dtype=float))


def reward_fn(lib=LIB, n_vars=1):
    rng = np.random.default_rng(0)
    X = rng.uniform(0.1, 2, size=(20, n_vars))
    y = np.sin(X[:, 0]) + X[:, 0] ** 2
    return RewardFunction(Dataset(X, y, X, y), lib)


class TestTournament:
    def test_best_of_all(self):
        picks = tournament_select(pop_of([0.2, 0.5, 0.3]), 200, np.random.default_rng(0), n=50)
        assert set(picks.tolist()) == {1}

    def test_k1_uniform(self):
        picks = tournament_select(pop_of([0.2, 0.5, 0.3]), 1, np.random.default_rng(1), n=10_000)
        freq = np.bincount(picks, minlength=3) / 10_000
        assert np.all(np.abs(freq - 1 / 3) < 0.02)

    def test_k2_distribution_matches_enumeration(self):
        fitness = [1.0, 2.0, 3.0]
        expected = oracles.tournament_probabilities(fitness, 2)
        np.testing.assert_allclose(expected, [1 / 9, 3 / 9, 5 / 9], atol=1e-15)
        picks = tournament_select(pop_of(fitness), 2, np.random.default_rng(2), n=10_000)
        freq = np.bincount(picks, minlength=3) / 10_000
        assert np.all(np.abs(freq - expected) < 0.02)

    def test_ties_go_to_first_drawn(self):
        pop = pop_of([0.5] * 7)
        picks = tournament_select(pop, 4, np.random.default_rng(9), n=100)
        draws = np.random.default_rng(9).integers(0, 7, size=(100, 4))
        np.testing.assert_array_equal(picks, draws[:, 0])

    def test_empty(self):
        with pytest.raises(ValueError):
            tournament_select(pop_of([]), 2, np.random.default_rng(0))


class TestCrossover:
    def test_root_swap(self):
        a = LIB.encode(["add", "x1", "x1"])
        b = LIB.encode(["sin", "x1"])
        c1, c2 = crossover_one_point(a, b, LIB, ZeroRng())
        assert (c1, c2) == (b, a)

    def test_completeness_and_multiset_10k(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            a = random_subtree(RICH, int(rng.integers(0, 5)), rng)
            b = random_subtree(RICH, int(rng.integers(0, 5)), rng)
            c1, c2 = crossover_one_point(a, b, RICH, rng)
            assert oracles.complete(RICH.decode(c1)) and oracles.complete(RICH.decode(c2))
            assert Counter(a) + Counter(b) == Counter(c1) + Counter(c2)


class TestMutation:
    def test_node_replace_same_arity(self):
        t = LIB.encode(["add", "x1", "x1"])
        cfg = GpConfig(mutation_modes=("node_replace",))
        seen = {mutate(t, LIB, cfg, np.random.default_rng(s)) for s in range(200)}
        assert seen == {LIB.encode([op, "x1", "x1"]) for op in ("sub", "mul", "div")}

    def test_shrink(self):
        cfg = GpConfig(mutation_modes=("shrink",))
        assert mutate(LIB.encode(["sin", "x1"]), LIB, cfg, np.random.default_rng(0)) == LIB.encode(["x1"])

    def test_shrink_on_terminal_falls_back(self):
        cfg = GpConfig(mutation_modes=("shrink",))
        lib = TokenLibrary.default(2)
        child, mode = mutate_with_mode(lib.encode(["x1"]), lib, cfg, np.random.default_rng(0))
        assert mode == "shrink" and child == lib.encode(["x2"])

    def test_insert_keeps_subtree(self):
        cfg = GpConfig(mutation_modes=("insert",))
        rng = np.random.default_rng(5)
        for _ in range(200):
            t = random_subtree(LIB, 3, rng)
            child = mutate(t, LIB, cfg, rng)
            assert is_complete(child, LIB) and len(child) > len(t)

    def test_modes_uniform_and_outputs_complete(self):
        rng = np.random.default_rng(7)
        cfg = GpConfig()
        counts = Counter()
        for _ in range(10_000):
            t = random_subtree(RICH, int(rng.integers(0, 5)), rng)
            child, mode = mutate_with_mode(t, RICH, cfg, rng)
            counts[mode] += 1
            assert oracles.complete(RICH.decode(child))
        for mode in MUTATION_MODES:
            assert abs(counts[mode] / 10_000 - 0.25) <= 0.02

    def test_bad_config(self):
        with pytest.raises(ValueError):
            GpConfig(mutation_modes=("teleport",))
        with pytest.raises(ValueError):
            GpConfig(crossover_prob=1.5)


class TestRevert:
    OMEGA = ConstraintSet(min_length=2)

    def test_nested_trig(self):
        parent = LIB.encode(["sin", "x1"])
        assert constrain_or_revert(LIB.encode(["sin", "cos", "x1"]), parent, LIB, self.OMEGA) == parent

    def test_too_long(self):
        parent = LIB.encode(["exp", "x1"])
        child = LIB.encode(["exp"] * 30 + ["x1"])
        assert len(child) == 31
        assert constrain_or_revert(child, parent, LIB, ConstraintSet(min_length=2, forbid_inverse_pairs=False)) == parent

    def test_valid_child(self):
        parent = LIB.encode(["exp", "x1"])
        child = LIB.encode(["add", "x1", "x1"])
        assert constrain_or_revert(child, parent, LIB, self.OMEGA) == child


class TestGeneration:
    def _start(self, lib, omega, n=500, seed=0):
        return Policy(lib, omega, seed=seed).sample_batch(n, np.random.default_rng(seed))

    def test_size_preserved(self):
        fn = reward_fn()
        pop = seed_population(self._start(LIB, ConstraintSet()), fn)
        nxt = generation_step(pop, GpConfig(), LIB, fn, np.random.default_rng(1))
        assert len(nxt) == 500 and nxt.rewards.shape == (500,)

    def test_no_variation_resamples_inputs(self):
        fn = reward_fn()
        pop = seed_population(self._start(LIB, ConstraintSet(), n=100), fn)
        cfg = GpConfig(crossover_prob=0.0, mutation_prob=0.0)
        nxt = generation_step(pop, cfg, LIB, fn, np.random.default_rng(2))
        assert set(nxt.individuals) <= set(pop.individuals)

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 1000))
    def test_closure_over_25_generations(self, seed):
        omega = ConstraintSet(max_length=20)
        fn = reward_fn(RICH, 2)
        pop = seed_population(self._start(RICH, omega, n=100, seed=seed), fn)
        cfg = GpConfig(constraints=omega)
        rng = np.random.default_rng(seed)
        for _ in range(25):
            pop = generation_step(pop, cfg, RICH, fn, rng)
            assert len(pop) == 100
            for t in pop.individuals:
                assert oracles.violations(RICH.decode(t), 4, 20) == []


@given(st.integers(0, 6), st.integers(0, 10_000))
def test_random_subtree_depth_bound(max_depth, seed):
    t = random_subtree(LIB, max_depth, np.random.default_rng(seed))
    tree = oracles.build_tree(LIB.decode(t))

    def depth(node):
        return 1 + max((depth(k) for k in node[1]), default=0)

    assert depth(tree) <= max_depth + 1
