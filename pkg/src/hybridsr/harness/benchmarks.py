"""Benchmark registry and dataset generation.

Each benchmark is a JSON file under ``benchmarks/``. Sampling rules are
``U`` (uniform random points per variable) and ``E`` (evenly spaced points
per variable, combined as a grid for several variables).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from ..expr import OPERATORS, TokenLibrary, Traversal, evaluate, parse_infix_extended
from ..reward import Dataset

# grids above this size are thinned to about this many points
MAX_GRID_POINTS = 100_000


@dataclass(frozen=True)
class SamplingRule:
    kind: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.kind not in ("U", "E"):
            raise ValueError(f"unknown sampling rule {self.kind!r}")
        if not self.lo < self.hi:
            raise ValueError(f"degenerate range [{self.lo}, {self.hi}]")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingRule":
        return cls(d["kind"], float(d["lo"]), float(d["hi"]), int(d["count"]))

    def __str__(self) -> str:
        return f"{self.kind}({self.lo:g},{self.hi:g},{self.count})"

    def sample(self, n_variables: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "U":
            return rng.uniform(self.lo, self.hi, size=(self.count, n_variables))
        per_axis = self.count
        if per_axis ** n_variables > MAX_GRID_POINTS:
            per_axis = max(2, int(np.floor(self.count ** (1.0 / n_variables))))
        axis = np.linspace(self.lo, self.hi, per_axis)
        mesh = np.meshgrid(*([axis] * n_variables), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    ground_truth: str
    n_variables: int
    dataset_rule: SamplingRule
    token_set: tuple
    test_rule: SamplingRule | None = None
    suite: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        test = d.get("test_dataset")
        return cls(
            name=d["name"],
            ground_truth=d["ground_truth"],
            n_variables=int(d["n_variables"]),
            dataset_rule=SamplingRule.from_dict(d["dataset"]),
            token_set=tuple(d["library"]),
            test_rule=SamplingRule.from_dict(test) if test else None,
            suite=d.get("suite", ""),
        )

    @property
    def domain(self) -> tuple[float, float]:
        return self.dataset_rule.lo, self.dataset_rule.hi

    def library(self) -> TokenLibrary:
        ops = [n for n in self.token_set if n in OPERATORS]
        rest = [n for n in self.token_set if n not in OPERATORS]
        variables = [f"x{i}" for i in range(1, self.n_variables + 1)]
        return TokenLibrary(ops + variables + rest)


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    dataset: Dataset
    library: TokenLibrary
    truth: Traversal
    # search library extended with whatever the ground truth needs
    truth_library: TokenLibrary = field(repr=False, default=None)

    @property
    def name(self) -> str:
        return self.spec.name


@lru_cache(maxsize=1)
def load_registry() -> dict[str, BenchmarkSpec]:
    root = resources.files(__package__) / "benchmarks"
    specs = {}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            spec = BenchmarkSpec.from_dict(json.loads(entry.read_text()))
            specs[spec.name] = spec
    return dict(sorted(specs.items(), key=lambda kv: _sort_key(kv[0])))


def _sort_key(name: str):
    family, _, rest = name.partition("-")
    order = ["Nguyen", "R", "Livermore", "Jin", "Neat"]
    num = int(rest.rstrip("*")) if rest.rstrip("*").isdigit() else 0
    return (order.index(family) if family in order else len(order), rest.endswith("*"), num)


def _suites(registry: dict[str, BenchmarkSpec]) -> dict[str, list[str]]:
    suites: dict[str, list[str]] = {}
    for name, spec in registry.items():
        suites.setdefault(spec.suite, []).append(name)
    # the 37-problem comparison set: Nguyen-1..11, the starred variants, Livermore
    suites["standard"] = (
        [f"Nguyen-{i}" for i in range(1, 12)] + ["Nguyen-12*", "R-1*", "R-2*", "R-3*"]
        + [f"Livermore-{i}" for i in range(1, 23)]
    )
    suites["all"] = list(registry)
    return suites


def suites() -> dict[str, list[str]]:
    return _suites(load_registry())


def get_spec(name: str) -> BenchmarkSpec:
    registry = load_registry()
    if name not in registry:
        raise KeyError(f"unknown benchmark {name!r}")
    return registry[name]


def resolve_benchmarks(selector: str | list[str]) -> list[str]:
    """Expand comma-separated benchmark and suite names, keeping order."""
    items = selector.split(",") if isinstance(selector, str) else list(selector)
    registry = load_registry()
    groups = suites()
    out: list[str] = []
    for item in (s.strip() for s in items):
        if not item:
            continue
        if item in registry:
            names = [item]
        elif item.lower() in groups:
            names = groups[item.lower()]
        else:
            raise KeyError(f"unknown benchmark or suite {item!r}")
        out += [n for n in names if n not in out]
    return out


def data_seeds(name: str, data_seed: int) -> tuple[int, int]:
    base = zlib.crc32(name.encode()) ^ (int(data_seed) * 0x9E3779B1 & 0xFFFFFFFF)
    return base, base ^ 0x5BD1E995


def instantiate_benchmark(spec: BenchmarkSpec | str, data_seed: int = 0) -> Benchmark:
    """Sample train/test data and build the token library for ``spec``.

    U-rule train and test points use different seeds; E-rule test points
    equal the training points unless a separate test rule is given.
    """
    if isinstance(spec, str):
        spec = get_spec(spec)
    lib = spec.library()
    truth_lib, truth = parse_infix_extended(spec.ground_truth, lib)
    if truth_lib.n_variables > spec.n_variables:
        raise ValueError(f"{spec.name}: ground truth uses more than {spec.n_variables} variable(s)")

    train_seed, test_seed = data_seeds(spec.name, data_seed)
    X_train = spec.dataset_rule.sample(spec.n_variables, np.random.default_rng(train_seed))
    test_rule = spec.test_rule or spec.dataset_rule
    if test_rule.kind == "E" and spec.test_rule is None:
        X_test = X_train.copy()
    else:
        X_test = test_rule.sample(spec.n_variables, np.random.default_rng(test_seed))

    y_train = evaluate(truth, truth_lib, X_train).values
    y_test = evaluate(truth, truth_lib, X_test).values
    if not (np.all(np.isfinite(y_train)) and np.all(np.isfinite(y_test))):
        raise ValueError(f"{spec.name}: ground truth is non-finite on its sampling domain")
    dataset = Dataset(X_train, y_train, X_test, y_test, domain=[spec.domain] * spec.n_variables, name=spec.name)
    return Benchmark(spec, dataset, lib, truth, truth_lib)
