"""Autoregressive LSTM generator over traversals.

Each step sees the one-hot (parent, sibling) pair of the position being
filled. Logits are masked by the constraint set, so every sample is a valid,
constraint-satisfying traversal. Gradients are computed by hand (BPTT).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import EMPTY, TokenLibrary, Traversal

log = logging.getLogger(__name__)

METHODS = ("vpg", "rspg", "pqt")


@dataclass(frozen=True)
class ConstraintSet:
    min_length: int = 4
    max_length: int = 30
    forbid_nested_trig: bool = True
    forbid_inverse_pairs: bool = True
    max_constants: int | None = None  # None = unlimited

    def __post_init__(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length > max_length")
        if self.min_length < 1:
            raise ValueError("min_length must be >= 1")


class SamplingState:
    """Bookkeeping for one partially generated traversal."""

    __slots__ = ("tokens", "deficit", "stack", "trig_count", "n_const", "_arities", "_trig", "_const")

    def __init__(self, lib: TokenLibrary):
        self.tokens: list[int] = []
        self.deficit = 1
        # open operator nodes: [token, open slots, root of last finished child]
        self.stack: list[list[int]] = []
        self.trig_count = 0
        self.n_const = 0
        self._arities = lib.arities
        self._trig = lib.trig_ids
        self._const = lib.const_id

    @property
    def parent(self) -> int:
        return self.stack[-1][0] if self.stack else EMPTY

    @property
    def sibling(self) -> int:
        return self.stack[-1][2] if self.stack else EMPTY

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def done(self) -> bool:
        return self.deficit == 0

    def push(self, tok: int) -> None:
        arity = self._arities[tok]
        self.tokens.append(tok)
        self.deficit += arity - 1
        if tok == self._const:
            self.n_const += 1
        if arity:
            self.stack.append([tok, arity, EMPTY])
            if tok in self._trig:
                self.trig_count += 1
            return
        finished = tok
        stack = self.stack
        while stack:
            top = stack[-1]
            top[1] -= 1
            top[2] = finished
            if top[1]:
                break
            finished = top[0]
            stack.pop()
            if finished in self._trig:
                self.trig_count -= 1

    @classmethod
    def replay(cls, lib: TokenLibrary, tokens: Sequence[int]) -> "SamplingState":
        state = cls(lib)
        for tok in tokens:
            state.push(tok)
        return state


class Masker:
    """Vectorised allowed-token masks for a (library, constraints) pair."""

    def __init__(self, lib: TokenLibrary, omega: ConstraintSet):
        n = len(lib)
        self.lib = lib
        self.omega = omega
        self.arity = lib.arity_array
        self.terminal = self.arity == 0
        self.trig = np.zeros(n, dtype=bool)
        if omega.forbid_nested_trig:
            self.trig[list(lib.trig_ids)] = True
        # row n is the empty parent
        self.inverse_block = np.zeros((n + 1, n), dtype=bool)
        if omega.forbid_inverse_pairs:
            for parent, child in lib.inverse.items():
                self.inverse_block[parent, child] = True
        self.const = np.zeros(n, dtype=bool)
        if lib.const_id != EMPTY:
            self.const[lib.const_id] = True
        self.variables = np.zeros(n, dtype=bool)
        self.variables[list(lib.variable_ids)] = True

    def masks(self, length, deficit, trig_count, parent, n_const) -> np.ndarray:
        """Boolean (batch, n_tokens) mask; all arguments are int arrays."""
        omega = self.omega
        m = (length[:, None] + deficit[:, None] + self.arity[None, :]) <= omega.max_length
        early = (deficit == 1) & (length + 1 < omega.min_length)
        if early.any():
            m[early] &= ~self.terminal
        if omega.forbid_nested_trig:
            nested = trig_count > 0
            if nested.any():
                m[nested] &= ~self.trig
        if omega.forbid_inverse_pairs:
            m &= ~self.inverse_block[parent]
        if omega.max_constants is not None and self.const.any():
            capped = n_const >= omega.max_constants
            if capped.any():
                m[capped] &= ~self.const
        empty = ~m.any(axis=1)
        if empty.any():
            log.debug("empty token mask for %d state(s); falling back to variables", int(empty.sum()))
            m[empty] = self.variables
        return m

    def state_arrays(self, states: Sequence[SamplingState]):
        n = len(self.lib)
        length = np.fromiter((s.length for s in states), dtype=np.int64, count=len(states))
        deficit = np.fromiter((s.deficit for s in states), dtype=np.int64, count=len(states))
        trig = np.fromiter((s.trig_count for s in states), dtype=np.int64, count=len(states))
        n_const = np.fromiter((s.n_const for s in states), dtype=np.int64, count=len(states))
        parent = np.fromiter((s.stack[-1][0] if s.stack else n for s in states), dtype=np.int64, count=len(states))
        sibling = np.fromiter(
            (s.stack[-1][2] if s.stack and s.stack[-1][2] != EMPTY else n for s in states),
            dtype=np.int64, count=len(states),
        )
        return length, deficit, trig, n_const, parent, sibling


def allowed_tokens(state: SamplingState, lib: TokenLibrary, omega: ConstraintSet) -> set[int]:
    masker = Masker(lib, omega)
    length, deficit, trig, n_const, parent, _ = masker.state_arrays([state])
    return set(np.flatnonzero(masker.masks(length, deficit, trig, parent, n_const)[0]).tolist())


def satisfies(t: Sequence[int], lib: TokenLibrary, omega: ConstraintSet) -> bool:
    """Post-hoc constraint check on a complete traversal."""
    if not omega.min_length <= len(t) <= omega.max_length:
        return False
    arities = lib.arities
    trig = lib.trig_ids if omega.forbid_nested_trig else ()
    inverse = lib.inverse if omega.forbid_inverse_pairs else {}
    const = lib.const_id
    if omega.max_constants is not None and const != EMPTY and t.count(const) > omega.max_constants:
        return False
    # stack of [token, open slots]; trig ancestors counted along the stack
    stack: list[list[int]] = []
    n_trig = 0
    for tok in t:
        if stack:
            parent = stack[-1][0]
            if inverse and inverse.get(parent) == tok and arities[parent] == 1:
                return False
        if tok in trig:
            if n_trig:
                return False
        arity = arities[tok]
        if arity:
            stack.append([tok, arity])
            if tok in trig:
                n_trig += 1
            continue
        while stack:
            stack[-1][1] -= 1
            if stack[-1][1]:
                break
            if stack.pop()[0] in trig:
                n_trig -= 1
    return True


class BatchState:
    """Array form of :class:`SamplingState` for a whole batch.

    The stack of open operators is held as (batch, depth) arrays so that one
    token per sequence can be pushed with a handful of numpy calls.
    """

    def __init__(self, lib: TokenLibrary, batch: int, max_depth: int):
        n = len(lib)
        self.n_tokens = n
        self.arity = lib.arity_array
        self.is_trig = np.zeros(n, dtype=np.int64)
        self.is_trig[list(lib.trig_ids)] = 1
        self.const_id = lib.const_id
        self.tok = np.zeros((batch, max_depth + 1), dtype=np.int64)
        self.rem = np.zeros((batch, max_depth + 1), dtype=np.int64)
        self.sib = np.full((batch, max_depth + 1), n, dtype=np.int64)
        self.depth = np.zeros(batch, dtype=np.int64)
        self.length = np.zeros(batch, dtype=np.int64)
        self.deficit = np.ones(batch, dtype=np.int64)
        self.trig = np.zeros(batch, dtype=np.int64)
        self.n_const = np.zeros(batch, dtype=np.int64)

    def features(self, idx: np.ndarray):
        """(parent, sibling) ids for the next position; ``n_tokens`` means empty."""
        d = self.depth[idx] - 1
        has = d >= 0
        parent = np.where(has, self.tok[idx, d], self.n_tokens)
        sibling = np.where(has, self.sib[idx, d], self.n_tokens)
        return parent, sibling

    def mask(self, masker: "Masker", idx: np.ndarray, parent: np.ndarray) -> np.ndarray:
        return masker.masks(self.length[idx], self.deficit[idx], self.trig[idx], parent, self.n_const[idx])

    def push(self, idx: np.ndarray, toks: np.ndarray) -> None:
        ar = self.arity[toks]
        self.length[idx] += 1
        self.deficit[idx] += ar - 1
        if self.const_id != EMPTY:
            self.n_const[idx] += toks == self.const_id
        op = ar > 0
        oi = idx[op]
        d = self.depth[oi]
        self.tok[oi, d] = toks[op]
        self.rem[oi, d] = ar[op]
        self.sib[oi, d] = self.n_tokens
        self.depth[oi] += 1
        self.trig[oi] += self.is_trig[toks[op]]
        ti = idx[~op]
        finished = toks[~op]
        while ti.size:
            keep = self.depth[ti] > 0
            ti, finished = ti[keep], finished[keep]
            if not ti.size:
                break
            d = self.depth[ti] - 1
            self.rem[ti, d] -= 1
            self.sib[ti, d] = finished
            done = self.rem[ti, d] == 0
            ti, d = ti[done], d[done]
            finished = self.tok[ti, d]
            self.depth[ti] -= 1
            self.trig[ti] -= self.is_trig[finished]


# ---------------------------------------------------------------------------
# network


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_params(n_tokens: int, hidden: int = 32, seed: int = 0, output_scale: float = 0.0) -> dict:
    """LSTM weights; a zero output layer gives a uniform initial policy."""
    rng = np.random.default_rng(seed)
    n_in = 2 * (n_tokens + 1)
    lim_in = math.sqrt(6.0 / (n_in + 4 * hidden))
    lim_h = math.sqrt(6.0 / (5 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate bias
    lim_out = output_scale * math.sqrt(6.0 / (hidden + n_tokens))
    return {
        "W_parent": rng.uniform(-lim_in, lim_in, (n_tokens + 1, 4 * hidden)),
        "W_sibling": rng.uniform(-lim_in, lim_in, (n_tokens + 1, 4 * hidden)),
        "W_h": rng.uniform(-lim_h, lim_h, (hidden, 4 * hidden)),
        "b": b,
        "W_out": rng.uniform(-lim_out, lim_out, (hidden, n_tokens)),
        "b_out": np.zeros(n_tokens),
    }


@dataclass
class _Forward:
    parents: np.ndarray  # (T, B)
    siblings: np.ndarray
    actions: np.ndarray
    valid: np.ndarray  # (T, B) bool
    masks: np.ndarray  # (T, B, L) bool
    cache: list
    probs: np.ndarray  # (T, B, L)
    logp_steps: np.ndarray  # (T, B, L) with 0 where masked
    step_entropy: np.ndarray  # (T, B)
    log_prob: np.ndarray  # (B,)
    entropy: np.ndarray  # (B,)
    feasible: np.ndarray  # (B,) bool


class Policy:
    """Sequence generator p(traversal | params, constraints)."""

    def __init__(self, lib: TokenLibrary, omega: ConstraintSet | None = None, hidden: int = 32,
                 seed: int = 0, params: dict | None = None):
        self.lib = lib
        self.omega = omega or ConstraintSet()
        self.hidden = hidden
        self.masker = Masker(lib, self.omega)
        self.params = params if params is not None else init_params(len(lib), hidden, seed)

    @property
    def n_tokens(self) -> int:
        return len(self.lib)

    def _cell(self, parent, sibling, h, c):
        P = self.params
        H = self.hidden
        z = P["W_parent"][parent] + P["W_sibling"][sibling] + h @ P["W_h"] + P["b"]
        ifo = _sigmoid(z[:, :3 * H])
        i = ifo[:, :H]
        f = ifo[:, H:2 * H]
        o = ifo[:, 2 * H:]
        g = np.tanh(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (i, f, o, g, tc)

    def sample_batch(self, n: int, rng: np.random.Generator) -> list[Traversal]:
        """Draw ``n`` complete traversals, one token per step from masked softmax."""
        if n < 1:
            raise ValueError("batch size must be >= 1")
        P = self.params
        max_len = self.omega.max_length
        state = BatchState(self.lib, n, max_len)
        tokens = np.zeros((n, max_len), dtype=np.int64)
        h = np.zeros((n, self.hidden))
        c = np.zeros((n, self.hidden))
        active = np.arange(n)
        step = 0
        rows = np.arange(n)
        while active.size:
            parent, sibling = state.features(active)
            mask = state.mask(self.masker, active, parent)
            h_a, c_a, _ = self._cell(parent, sibling, h[active], c[active])
            h[active] = h_a
            c[active] = c_a
            logits = h_a @ P["W_out"] + P["b_out"]
            logits = np.where(mask, logits, -np.inf)
            logits -= logits.max(axis=1, keepdims=True)
            cdf = np.cumsum(np.exp(logits), axis=1)
            u = rng.random(active.size) * cdf[:, -1]
            choice = np.minimum((cdf <= u[:, None]).sum(axis=1), cdf.shape[1] - 1)
            # round-off can land on a masked column
            bad = ~mask[rows[:active.size], choice]
            if bad.any():
                choice[bad] = np.argmax(np.where(mask[bad], cdf[bad], -1.0), axis=1)
            if step >= max_len:
                raise RuntimeError("sampler exceeded max_length; mask invariant broken")
            tokens[active, step] = choice
            state.push(active, choice)
            active = active[state.deficit[active] > 0]
            step += 1
        lengths = state.length
        return [tuple(row[:k]) for row, k in zip(tokens.tolist(), lengths.tolist())]

    # -- likelihood -----------------------------------------------------------

    def _replay(self, traversals: Sequence[Sequence[int]]):
        B = len(traversals)
        lengths = np.fromiter((len(t) for t in traversals), dtype=np.int64, count=B)
        T = int(lengths.max())
        L = self.n_tokens
        actions = np.zeros((B, T), dtype=np.int64)
        for b, t in enumerate(traversals):
            actions[b, :len(t)] = t
        actions = actions.T.copy()
        parents = np.full((T, B), L, dtype=np.int64)
        siblings = np.full((T, B), L, dtype=np.int64)
        valid = np.arange(T)[:, None] < lengths[None, :]
        masks = np.ones((T, B, L), dtype=bool)
        state = BatchState(self.lib, B, T)
        for step in range(T):
            idx = np.flatnonzero(valid[step])
            parent, sibling = state.features(idx)
            masks[step, idx] = state.mask(self.masker, idx, parent)
            parents[step, idx] = parent
            siblings[step, idx] = sibling
            state.push(idx, actions[step, idx])
        return parents, siblings, actions, valid, masks

    def _forward(self, traversals) -> _Forward:
        P = self.params
        parents, siblings, actions, valid, masks = self._replay(traversals)
        T, B = parents.shape
        L = self.n_tokens
        h = np.zeros((B, self.hidden))
        c = np.zeros((B, self.hidden))
        cache = []
        probs = np.zeros((T, B, L))
        logp_steps = np.zeros((T, B, L))
        step_entropy = np.zeros((T, B))
        chosen = np.zeros((T, B))
        feasible = np.ones(B, dtype=bool)
        rows = np.arange(B)
        for step in range(T):
            h_prev, c_prev = h, c
            h, c, gates = self._cell(parents[step], siblings[step], h_prev, c_prev)
            cache.append((h_prev, c_prev, gates, h))
            logits = h @ P["W_out"] + P["b_out"]
            m = masks[step]
            z = np.where(m, logits, -np.inf)
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            s = e.sum(axis=1, keepdims=True)
            p = e / s
            lp = np.where(m, z - np.log(s), 0.0)
            probs[step] = p
            logp_steps[step] = lp
            step_entropy[step] = np.where(valid[step], -(p * lp).sum(axis=1), 0.0)
            ok = m[rows, actions[step]] | ~valid[step]
            feasible &= ok
            chosen[step] = np.where(valid[step] & ok, lp[rows, actions[step]], 0.0)
        log_prob = chosen.sum(axis=0)
        log_prob[~feasible] = -np.inf
        entropy = step_entropy.sum(axis=0)
        return _Forward(parents, siblings, actions, valid, masks, cache, probs, logp_steps,
                        step_entropy, log_prob, entropy, feasible)

    def log_prob_entropy(self, traversals) -> tuple[np.ndarray, np.ndarray]:
        """Per-traversal log-likelihood and summed per-step entropy.

        Constraint-violating traversals get ``log_prob = -inf``.
        """
        fw = self._forward(list(traversals))
        return fw.log_prob, fw.entropy

    def _backward(self, fw: _Forward, coef_logp: np.ndarray, coef_entropy: np.ndarray) -> dict:
        """Gradient of sum(coef_logp * log_prob + coef_entropy * entropy)."""
        P = self.params
        H = self.hidden
        T, B = fw.parents.shape
        L = self.n_tokens
        grads = {k: np.zeros_like(v) for k, v in P.items()}
        a = np.where(fw.feasible, coef_logp, 0.0)[:, None]
        e = np.where(fw.feasible, coef_entropy, 0.0)[:, None]
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dgates_all = np.zeros((T, B, 4 * H))
        rows = np.arange(B)
        W_out_T = P["W_out"].T
        W_h_T = P["W_h"].T
        for step in reversed(range(T)):
            p = fw.probs[step]
            dz = -e * p * (fw.logp_steps[step] + fw.step_entropy[step][:, None]) - a * p
            dz[rows, fw.actions[step]] += a[:, 0]
            dz = np.where(fw.valid[step][:, None] & fw.masks[step], dz, 0.0)
            h_prev, c_prev, (i, f, o, g, tc), h = fw.cache[step]
            grads["W_out"] += h.T @ dz
            grads["b_out"] += dz.sum(axis=0)
            dh = dz @ W_out_T + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dgates = dgates_all[step]
            dgates[:, :H] = dc * g * i * (1 - i)
            dgates[:, H:2 * H] = dc * c_prev * f * (1 - f)
            dgates[:, 2 * H:3 * H] = do * o * (1 - o)
            dgates[:, 3 * H:] = dc * i * (1 - g * g)
            dc_next = dc * f
            grads["W_h"] += h_prev.T @ dgates
            dh_next = dgates @ W_h_T
        flat = dgates_all.reshape(T * B, 4 * H)
        grads["b"] = flat.sum(axis=0)
        cols = np.arange(T * B)
        onehot = np.zeros((L + 1, T * B))
        onehot[fw.parents.ravel(), cols] = 1.0
        grads["W_parent"] = onehot @ flat
        onehot[:] = 0.0
        onehot[fw.siblings.ravel(), cols] = 1.0
        grads["W_sibling"] = onehot @ flat
        return grads


# ---------------------------------------------------------------------------
# training objectives


class PriorityQueue:
    """The ``capacity`` highest-reward unique traversals seen so far."""

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: list[tuple[float, int, Traversal]] = []
        self._members: set = set()
        self._counter = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self.items())

    def items(self) -> list[tuple[Traversal, float]]:
        return [(t, r) for r, _, t in self._entries]

    @property
    def traversals(self) -> list[Traversal]:
        return [t for _, _, t in self._entries]

    def push(self, samples) -> "PriorityQueue":
        """Merge ``(traversal, reward)`` pairs; ties keep earlier insertions."""
        changed = False
        for t, r in samples:
            t = tuple(t)
            if t in self._members or not np.isfinite(r):
                continue
            self._entries.append((float(r), self._counter, t))
            self._members.add(t)
            self._counter += 1
            changed = True
        if changed:
            self._entries.sort(key=lambda e: (-e[0], e[1]))
            for _, _, t in self._entries[self.capacity:]:
                self._members.discard(t)
            del self._entries[self.capacity:]
        return self


def pq_update(queue: PriorityQueue, samples) -> PriorityQueue:
    return queue.push(samples)


def risk_quantile(rewards: np.ndarray, epsilon: float) -> float:
    """Empirical (1 - epsilon) quantile, linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(rewards, dtype=np.float64), 1.0 - epsilon))


def _loss_coefficients(method, batch, rewards, entropy_weight, baseline=None, epsilon=0.05, queue=None):
    """Sequences plus per-sequence weights on log-prob and entropy.

    The loss is ``sum(coef_logp * log_prob) + sum(coef_entropy * entropy)``.
    """
    batch = [tuple(t) for t in batch]
    rewards = np.asarray(rewards, dtype=np.float64)
    if not batch:
        raise ValueError("empty batch")
    if len(rewards) != len(batch):
        raise ValueError("rewards and batch differ in length")
    n = len(batch)
    coef_entropy = np.full(n, -entropy_weight / n)
    if method == "vpg":
        if baseline is None:
            raise ValueError("vpg needs a baseline")
        seqs = batch
        coef_logp = -(rewards - baseline) / n
    elif method == "rspg":
        if not 0.0 < epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        q = risk_quantile(rewards, epsilon)
        seqs = batch
        coef_logp = np.where(rewards > q, -(rewards - q) / (epsilon * n), 0.0)
    elif method == "pqt":
        if queue is None or len(queue) == 0:
            raise ValueError("pqt needs a non-empty queue")
        queued = queue.traversals
        seqs = queued + batch
        coef_logp = np.concatenate([np.full(len(queued), -1.0 / len(queued)), np.zeros(n)])
        coef_entropy = np.concatenate([np.zeros(len(queued)), coef_entropy])
    else:
        raise ValueError(f"unknown training method {method!r}")
    return seqs, coef_logp, coef_entropy


def loss_and_grad(method: str, policy: Policy, batch, rewards, *, entropy_weight: float = 0.005,
                  baseline: float | None = None, epsilon: float = 0.05, queue: PriorityQueue | None = None,
                  need_grad: bool = True):
    seqs, coef_logp, coef_entropy = _loss_coefficients(
        method, batch, rewards, entropy_weight, baseline, epsilon, queue
    )
    fw = policy._forward(seqs)
    # constraint-violating sequences are dropped from the objective
    logp = np.where(fw.feasible, fw.log_prob, 0.0)
    ent = np.where(fw.feasible, fw.entropy, 0.0)
    loss = float(np.dot(coef_logp, logp) + np.dot(coef_entropy, ent))
    if not need_grad:
        return loss, None
    return loss, policy._backward(fw, coef_logp, coef_entropy)


def compute_loss(method: str, policy: Policy, batch, rewards, **aux) -> float:
    """Surrogate loss for ``vpg``, ``rspg`` or ``pqt`` (entropy bonus included)."""
    return loss_and_grad(method, policy, batch, rewards, need_grad=False, **aux)[0]


class Adam:
    def __init__(self, lr: float = 0.0025, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        if self.lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= corr * m / (np.sqrt(v) + self.eps)


class Trainer:
    """Owns optimizer state, the VPG baseline and the PQT queue."""

    def __init__(self, policy: Policy, method: str = "pqt", learning_rate: float = 0.0025,
                 entropy_weight: float = 0.005, epsilon: float = 0.05, ewma: float = 0.25,
                 pqt_k: int = 10):
        if method not in METHODS:
            raise ValueError(f"unknown training method {method!r}")
        self.policy = policy
        self.method = method
        self.entropy_weight = entropy_weight
        self.epsilon = epsilon
        self.ewma = ewma
        self.baseline: float | None = None
        self.queue = PriorityQueue(pqt_k)
        self.optimizer = Adam(learning_rate)

    def train_step(self, batch, rewards) -> float:
        """One Adam step on the configured objective; returns the loss."""
        rewards = np.asarray(rewards, dtype=np.float64)
        if self.method == "vpg":
            mean_r = float(np.mean(rewards))
            self.baseline = mean_r if self.baseline is None else self.ewma * mean_r + (1 - self.ewma) * self.baseline
        if self.method == "pqt":
            self.queue.push(zip(batch, rewards))
        loss, grads = loss_and_grad(
            self.method, self.policy, batch, rewards, entropy_weight=self.entropy_weight,
            baseline=self.baseline, epsilon=self.epsilon, queue=self.queue,
            need_grad=self.optimizer.lr != 0,
        )
        if grads is None:
            return loss
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            log.warning("non-finite loss or gradient; skipping update")
            return loss
        self.optimizer.step(self.policy.params, grads)
        return loss


def train_step(trainer: Trainer, batch, rewards) -> float:
    return trainer.train_step(batch, rewards)
