"""Fitness: inverse-NRMSE reward, error metrics and constant fitting."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .expr import TokenLibrary, evaluate_columns, is_complete, n_constants


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    domain: list = field(default_factory=list)
    name: str = ""
    sigma_y: float | None = None

    def __post_init__(self):
        self.X_train = _as_matrix(self.X_train)
        self.X_test = _as_matrix(self.X_test)
        self.y_train = np.asarray(self.y_train, dtype=np.float64).ravel()
        self.y_test = np.asarray(self.y_test, dtype=np.float64).ravel()
        if len(self.X_train) != len(self.y_train) or len(self.X_test) != len(self.y_test):
            raise ValueError("X and y row counts differ")
        if self.sigma_y is None:
            self.sigma_y = float(np.std(self.y_train))
        if not self.sigma_y > 0:
            raise ValueError(f"dataset {self.name!r} has constant targets (sigma_y = 0)")
        self.train_columns = [np.ascontiguousarray(self.X_train[:, j]) for j in range(self.X_train.shape[1])]
        self.test_columns = [np.ascontiguousarray(self.X_test[:, j]) for j in range(self.X_test.shape[1])]

    @property
    def n_variables(self) -> int:
        return self.X_train.shape[1]

    def split(self, which: str):
        if which == "train":
            return self.train_columns, self.y_train
        if which == "test":
            return self.test_columns, self.y_test
        raise ValueError(f"unknown split {which!r}")


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


@dataclass(frozen=True)
class Fitness:
    reward: float
    nrmse: float
    consts: tuple = ()


def nrmse(y_hat, y, sigma_y: float) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    if not np.all(np.isfinite(y_hat)):
        return float("inf")
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean((y - y_hat) ** 2)) / sigma_y)


def fitness_from_nrmse(value: float, consts=()) -> Fitness:
    if not np.isfinite(value):
        return Fitness(0.0, float("inf"), tuple(consts))
    return Fitness(1.0 / (1.0 + value), value, tuple(consts))


def optimize_constants(
    t: Sequence[int],
    lib: TokenLibrary,
    d: Dataset,
    max_iter: int = 200,
    n_restarts: int = 0,
    seed: int = 0,
) -> np.ndarray:
    """Fit constant placeholders of ``t`` by Levenberg-Marquardt on train MSE.

    Starts from all ones; ``n_restarts`` extra random starts are optional.
    Returns the start vector when the objective is non-finite there.
    """
    k = n_constants(t, lib)
    if k == 0:
        raise ValueError("traversal has no constant placeholders")
    columns, y = d.train_columns, d.y_train
    n = len(y)

    def residual(c):
        r = evaluate_columns(t, lib, columns, n, c) - y
        return np.nan_to_num(r, nan=1e150, posinf=1e150, neginf=-1e150)

    def mse(c):
        r = evaluate_columns(t, lib, columns, n, c) - y
        return float(np.mean(r * r)) if np.all(np.isfinite(r)) else np.inf

    starts = [np.ones(k)]
    rng = np.random.default_rng(seed)
    starts += [rng.uniform(-10, 10, size=k) for _ in range(n_restarts)]

    best, best_mse = starts[0], mse(starts[0])
    if not np.isfinite(best_mse):
        return best
    for x0 in starts:
        if not np.isfinite(mse(x0)):
            continue
        # lm needs at least as many residuals as parameters
        method = "lm" if n >= k else "trf"
        try:
            res = optimize.least_squares(
                residual, x0, method=method, ftol=1e-12, xtol=1e-15, gtol=1e-15,
                max_nfev=max_iter * (k + 1),
            )
        except (ValueError, FloatingPointError):
            continue
        value = mse(res.x)
        if value < best_mse:
            best, best_mse = res.x, value
    return np.asarray(best, dtype=np.float64)


class RewardFunction:
    """Cached reward over the training split of one dataset.

    The cache stores computations only; callers doing budget accounting count
    candidates themselves.
    """

    def __init__(self, dataset: Dataset, lib: TokenLibrary, use_cache: bool = True, const_restarts: int = 0):
        self.dataset = dataset
        self.lib = lib
        self.use_cache = use_cache
        self.const_restarts = const_restarts
        self.cache: dict[tuple, Fitness] = {}
        self.n_computed = 0
        self._lock = threading.Lock()

    def __call__(self, t) -> Fitness:
        t = tuple(t)
        if self.use_cache:
            hit = self.cache.get(t)
            if hit is not None:
                return hit
        fit = self._compute(t)
        if self.use_cache:
            with self._lock:
                self.cache[t] = fit
        return fit

    def rewards(self, population) -> np.ndarray:
        return np.array([self(t).reward for t in population], dtype=np.float64)

    def _compute(self, t) -> Fitness:
        self.n_computed += 1
        d, lib = self.dataset, self.lib
        consts = ()
        if lib.const_id >= 0 and lib.const_id in t:
            consts = tuple(optimize_constants(t, lib, d, n_restarts=self.const_restarts))
        y_hat = evaluate_columns(t, lib, d.train_columns, len(d.y_train), consts)
        return fitness_from_nrmse(nrmse(y_hat, d.y_train, d.sigma_y), consts)


def reward(t, lib: TokenLibrary, d: Dataset) -> Fitness:
    if not is_complete(t, lib):
        raise ValueError("cannot score an incomplete traversal")
    return RewardFunction(d, lib, use_cache=False)(t)


def error_metrics(t, lib: TokenLibrary, d: Dataset, split: str = "train", consts=None) -> dict:
    """RMSE and NMSE (MSE over the split's target variance).

    Constants are fitted on the training split unless given.
    """
    if not is_complete(t, lib):
        raise ValueError("cannot score an incomplete traversal")
    if consts is None:
        consts = reward(t, lib, d).consts if n_constants(t, lib) else ()
    columns, y = d.split(split)
    y_hat = evaluate_columns(t, lib, columns, len(y), consts)
    if not np.all(np.isfinite(y_hat)):
        return {"rmse": float("inf"), "nmse": float("inf")}
    with np.errstate(over="ignore"):
        mse = float(np.mean((y - y_hat) ** 2))
    return {"rmse": float(np.sqrt(mse)), "nmse": mse / float(np.var(y))}
