"""Augmentation samplers: Default, Trivial, Rand(++), Smart, SmartSampling.

Every sampler is a pure function of an explicit ``numpy.random.Generator``
and returns an :class:`~smartaug.raster.AugPlan`. Per-image generators come
from :func:`plan_rng`, keyed on ``(seed, epoch, index)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .raster import (
    AUG_NAMES,
    COLOR_NAMES,
    GEOMETRIC_NAMES,
    MAX_MAGNITUDE,
    NO_AUGMENT,
    OPS,
    RAND_NAMES,
    AugPlan,
    Step,
)

KINDS = ("default", "trivial", "rand", "smart", "smartsampling")

SMARTSAMPLING_MAGNITUDE = (5, 30)
DEFAULT_ROTATION = 45.0
DEFAULT_SCALE = 0.35
DEFAULT_FLIP_P = 0.5


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# weight table


@dataclass(frozen=True)
class WeightTable:
    """Per-op sampling weights for SmartSamplingAugment.

    Ops missing from ``entries`` weigh zero. Entries are kept in canonical
    op order, which is also the draw order, so two tables with the same
    weights compare equal whatever order they were written in.
    """

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        seen = set()
        for name, w in self.entries:
            if name not in RAND_NAMES:
                raise ConfigError(f"weight table names unknown op {name!r}")
            if name in seen:
                raise ConfigError(f"weight table lists {name!r} twice")
            seen.add(name)
            if not (w >= 0 and np.isfinite(w)):
                raise ConfigError(f"weight for {name} must be finite and >= 0, got {w}")
        if sum(1 for _, w in self.entries if w > 0) < 2:
            raise ConfigError("weight table needs at least two ops with positive weight")
        order = {n: i for i, n in enumerate(RAND_NAMES)}
        object.__setattr__(self, "entries",
                           tuple(sorted(self.entries, key=lambda e: order[e[0]])))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "WeightTable":
        return cls(tuple((str(k), float(v)) for k, v in mapping.items()))

    @classmethod
    def uniform(cls, names: Sequence[str] = AUG_NAMES) -> "WeightTable":
        return cls(tuple((n, 1.0) for n in names))

    @classmethod
    def load(cls, path: str | Path) -> "WeightTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def probabilities(self) -> np.ndarray:
        w = np.array([w for _, w in self.entries], dtype=np.float64)
        return w / w.sum()

    def weight(self, name: str) -> float:
        return dict(self.entries).get(name, 0.0)


def default_weight_table() -> WeightTable:
    text = resources.files("smartaug.resources").joinpath("default_weights.json").read_text()
    return WeightTable.from_mapping(json.loads(text))


# ---------------------------------------------------------------------------
# configs


def _check_int(name, value, lo, hi):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
    return int(value)


@dataclass(frozen=True)
class StrategyConfig:
    """A fully resolved augmentation strategy.

    Only the fields relevant to ``kind`` are set; the rest stay ``None``.
    JSON keys follow the usual hyperparameter names (``N_C``, ``M_G``, ``P``...).
    """

    kind: str
    n_color: int | None = None
    n_geometric: int | None = None
    m_color: int | None = None
    m_geometric: int | None = None
    p: float | None = None
    n: int | None = None
    m: int | None = None
    ops: tuple[str, ...] | None = None
    weights: WeightTable | None = None
    anneal: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        _check_int("seed", self.seed, 0, 2**64 - 1)
        if self.kind == "smart":
            _check_int("N_C", self.n_color, 0, len(COLOR_NAMES))
            _check_int("N_G", self.n_geometric, 0, len(GEOMETRIC_NAMES))
            _check_int("M_C", self.m_color, 0, MAX_MAGNITUDE)
            _check_int("M_G", self.m_geometric, 0, MAX_MAGNITUDE)
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ConfigError(f"P must lie in [0, 1], got {self.p!r}")
        elif self.kind == "rand":
            ops = self.op_list
            for name in ops:
                if name not in RAND_NAMES:
                    raise ConfigError(f"rand op list names unknown op {name!r}")
            if not ops:
                raise ConfigError("rand op list is empty")
            _check_int("N", self.n, 1, len(ops))
            _check_int("M", self.m, 0, MAX_MAGNITUDE)
        elif self.kind == "smartsampling":
            if self.weights is None:
                object.__setattr__(self, "weights", default_weight_table())

    @property
    def op_list(self) -> tuple[str, ...]:
        return tuple(self.ops) if self.ops is not None else RAND_NAMES

    # constructors
    @classmethod
    def smart(cls, n_color, n_geometric, m_color, m_geometric, p, seed=0) -> "StrategyConfig":
        return cls("smart", n_color=n_color, n_geometric=n_geometric, m_color=m_color,
                   m_geometric=m_geometric, p=float(p), seed=seed)

    @classmethod
    def rand(cls, n, m, ops=None, seed=0) -> "StrategyConfig":
        return cls("rand", n=n, m=m, ops=tuple(ops) if ops is not None else None, seed=seed)

    @classmethod
    def smartsampling(cls, weights=None, anneal=True, seed=0) -> "StrategyConfig":
        return cls("smartsampling", weights=weights, anneal=anneal, seed=seed)

    def with_seed(self, seed: int) -> "StrategyConfig":
        d = self.to_dict()
        d["seed"] = seed
        return StrategyConfig.from_dict(d)

    def hyperparameters(self) -> dict:
        d = self.to_dict()
        d.pop("kind")
        d.pop("seed")
        return d

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "smart":
            d.update(N_C=self.n_color, N_G=self.n_geometric, M_C=self.m_color,
                     M_G=self.m_geometric, P=self.p)
        elif self.kind == "rand":
            d.update(N=self.n, M=self.m)
            if self.ops is not None:
                d["ops"] = list(self.ops)
        elif self.kind == "smartsampling":
            d.update(weights=self.weights.to_dict(), anneal=self.anneal)
        d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "StrategyConfig":
        d = dict(d)
        kind = d.pop("kind", None)
        seed = d.pop("seed", 0)
        allowed = {
            "smart": {"N_C", "N_G", "M_C", "M_G", "P"},
            "rand": {"N", "M", "ops"},
            "smartsampling": {"weights", "anneal"},
            "default": set(),
            "trivial": set(),
        }
        if kind not in allowed:
            raise ConfigError(f"unknown strategy kind {kind!r}; expected one of {KINDS}")
        extra = set(d) - allowed[kind]
        if extra:
            raise ConfigError(f"unexpected keys for {kind} strategy: {sorted(extra)}")
        if kind == "smart":
            missing = allowed["smart"] - set(d)
            if missing:
                raise ConfigError(f"smart strategy missing keys: {sorted(missing)}")
            p = d["P"]
            if isinstance(p, bool) or not isinstance(p, (int, float)):
                raise ConfigError(f"P must be a number, got {p!r}")
            return cls.smart(d["N_C"], d["N_G"], d["M_C"], d["M_G"], float(p), seed=seed)
        if kind == "rand":
            if "N" not in d or "M" not in d:
                raise ConfigError("rand strategy needs N and M")
            return cls.rand(d["N"], d["M"], ops=d.get("ops"), seed=seed)
        if kind == "smartsampling":
            w = d.get("weights", "default")
            if w == "default" or w is None:
                table = default_weight_table()
            elif w == "uniform":
                table = WeightTable.uniform()
            elif isinstance(w, Mapping):
                table = WeightTable.from_mapping(w)
            else:
                raise ConfigError(f"weights must be 'default', 'uniform' or a table, got {w!r}")
            anneal = d.get("anneal", True)
            if not isinstance(anneal, bool):
                raise ConfigError("anneal must be a boolean")
            return cls.smartsampling(table, anneal, seed=seed)
        return cls(kind, seed=seed)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StrategyConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"strategy is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "StrategyConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class EpochClock:
    epoch: int
    total_epochs: int

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if not 0 <= self.epoch < self.total_epochs:
            raise ConfigError(f"epoch {self.epoch} outside [0, {self.total_epochs})")


def annealed_probability(clock: EpochClock) -> Fraction:
    """Linear schedule from 0 at the first epoch to 1 at the last."""
    if clock.total_epochs == 1:
        return Fraction(1)
    return Fraction(clock.epoch, clock.total_epochs - 1)


# ---------------------------------------------------------------------------
# samplers


def plan_rng(seed: int, epoch: int = 0, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def _sign(rng: np.random.Generator, name: str) -> int:
    if OPS[name].signed:
        return 1 if rng.random() < 0.5 else -1
    return 1


def _steps(rng, names, magnitude) -> tuple[Step, ...]:
    return tuple(Step(n, int(magnitude), _sign(rng, n)) for n in names)


def sample_smart_plan(cfg: StrategyConfig, rng: np.random.Generator) -> AugPlan:
    if cfg.kind != "smart":
        raise ConfigError(f"expected a smart config, got {cfg.kind}")
    if not rng.random() < cfg.p:
        return NO_AUGMENT
    color = [COLOR_NAMES[i] for i in rng.permutation(len(COLOR_NAMES))[: cfg.n_color]]
    geo = [GEOMETRIC_NAMES[i] for i in rng.permutation(len(GEOMETRIC_NAMES))[: cfg.n_geometric]]
    return AugPlan(True, _steps(rng, color, cfg.m_color) + _steps(rng, geo, cfg.m_geometric))


def weighted_draw(probs: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """Draw ``k`` distinct indices, each proportional to weight among the rest."""
    probs = np.asarray(probs, dtype=np.float64).copy()
    picked = []
    for _ in range(k):
        total = probs.sum()
        if total <= 0:
            raise ConfigError("not enough positive weights for a draw without replacement")
        cdf = np.cumsum(probs / total)
        i = int(np.searchsorted(cdf, rng.random(), side="right"))
        i = min(i, len(probs) - 1)
        while probs[i] == 0:
            i -= 1
        picked.append(i)
        probs[i] = 0.0
    return picked


def sample_smartsampling_plan(
    weights: WeightTable,
    clock: EpochClock,
    rng: np.random.Generator,
    anneal: bool = True,
) -> AugPlan:
    p = annealed_probability(clock) if anneal else Fraction(1)
    if not rng.random() < p:
        return NO_AUGMENT
    idx = weighted_draw(weights.probabilities(), 2, rng)
    lo, hi = SMARTSAMPLING_MAGNITUDE
    magnitude = int(rng.integers(lo, hi + 1))
    return AugPlan(True, _steps(rng, [weights.names[i] for i in idx], magnitude))


def sample_rand_plan(cfg: StrategyConfig, rng: np.random.Generator) -> AugPlan:
    if cfg.kind != "rand":
        raise ConfigError(f"expected a rand config, got {cfg.kind}")
    ops = cfg.op_list
    names = [ops[i] for i in rng.integers(len(ops), size=cfg.n)]
    return AugPlan(True, _steps(rng, names, cfg.m))


def sample_trivial_plan(rng: np.random.Generator, ops: Sequence[str] = RAND_NAMES) -> AugPlan:
    name = ops[int(rng.integers(len(ops)))]
    magnitude = int(rng.integers(0, MAX_MAGNITUDE + 1))
    return AugPlan(True, _steps(rng, [name], magnitude))


def sample_default_plan(rng: np.random.Generator) -> AugPlan:
    """Horizontal flip (p=0.5), rotation in [-45, 45] degrees, scale in [0.65, 1.35]."""
    flip = rng.random() < DEFAULT_FLIP_P
    angle = float(rng.uniform(-DEFAULT_ROTATION, DEFAULT_ROTATION))
    scale = 1.0 + float(rng.uniform(-DEFAULT_SCALE, DEFAULT_SCALE))
    steps = [Step("FlipX")] if flip else []
    steps.append(Step("Rotate", value=angle))
    steps.append(Step("Scale", value=scale))
    return AugPlan(True, tuple(steps))


def sample_plan(
    cfg: StrategyConfig,
    rng: np.random.Generator,
    clock: EpochClock | None = None,
) -> AugPlan:
    if cfg.kind == "smart":
        return sample_smart_plan(cfg, rng)
    if cfg.kind == "rand":
        return sample_rand_plan(cfg, rng)
    if cfg.kind == "trivial":
        return sample_trivial_plan(rng)
    if cfg.kind == "default":
        return sample_default_plan(rng)
    if clock is None:
        raise ConfigError("smartsampling needs an epoch clock")
    return sample_smartsampling_plan(cfg.weights, clock, rng, anneal=cfg.anneal)


__all__ = [
    "AugPlan",
    "ConfigError",
    "EpochClock",
    "KINDS",
    "Step",
    "StrategyConfig",
    "WeightTable",
    "annealed_probability",
    "default_weight_table",
    "plan_rng",
    "sample_default_plan",
    "sample_plan",
    "sample_rand_plan",
    "sample_smart_plan",
    "sample_smartsampling_plan",
    "sample_trivial_plan",
    "weighted_draw",
]
