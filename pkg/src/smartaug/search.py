"""Strategy search: grid, random and TPE over the Smart / Rand spaces.

Results go to an append-only JSON Lines ledger (one trial per line), flushed
after every trial so an interrupted run resumes where it stopped. Wall-clock
times live in a sidecar ``<ledger>.timing.jsonl`` so that the ledger itself
is byte-reproducible for a fixed seed.

Every trial ``t`` draws from its own generator keyed on ``(seed, t)``, which
makes random search and the TPE start-up phase identical and keeps resumed
runs on the same trajectory.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .raster import COLOR_NAMES, GEOMETRIC_NAMES, MAX_MAGNITUDE, RAND_NAMES
from .strategy import StrategyConfig

Evaluator = Callable[[StrategyConfig, int], float]

METHODS = ("grid", "random", "bo")


class SearchError(ValueError):
    pass


class LedgerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spaces


@dataclass(frozen=True)
class Dim:
    name: str
    type: str  # "cat" (small integer range), "int" or "float"
    lo: float
    hi: float

    def sample(self, rng: np.random.Generator):
        if self.type == "float":
            return self.lo + (self.hi - self.lo) * float(rng.random())
        return int(rng.integers(int(self.lo), int(self.hi) + 1))

    def contains(self, value) -> bool:
        if self.type != "float" and (isinstance(value, bool) or not isinstance(value, (int, np.integer))):
            return False
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class SearchSpace:
    kind: str
    dims: tuple[Dim, ...]

    @classmethod
    def smart(cls) -> "SearchSpace":
        return cls("smart", (
            Dim("N_C", "cat", 0, len(COLOR_NAMES)),
            Dim("N_G", "cat", 0, len(GEOMETRIC_NAMES)),
            Dim("M_C", "int", 0, MAX_MAGNITUDE),
            Dim("M_G", "int", 0, MAX_MAGNITUDE),
            Dim("P", "float", 0.0, 1.0),
        ))

    @classmethod
    def rand(cls, n_max: int | None = None) -> "SearchSpace":
        n_max = len(RAND_NAMES) if n_max is None else n_max
        if not 1 <= n_max <= len(RAND_NAMES):
            raise SearchError(f"N upper bound must lie in [1, {len(RAND_NAMES)}], got {n_max}")
        return cls("rand", (Dim("N", "cat", 1, n_max), Dim("M", "int", 0, MAX_MAGNITUDE)))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def sample(self, rng: np.random.Generator) -> dict:
        return {d.name: d.sample(rng) for d in self.dims}

    def to_config(self, point: dict, seed: int = 0) -> StrategyConfig:
        if self.kind == "smart":
            return StrategyConfig.smart(point["N_C"], point["N_G"], point["M_C"],
                                        point["M_G"], point["P"], seed=seed)
        return StrategyConfig.rand(point["N"], point["M"], seed=seed)

    def point(self, cfg: StrategyConfig) -> dict:
        if cfg.kind != self.kind:
            raise SearchError(f"{cfg.kind} config does not belong to the {self.kind} space")
        hp = cfg.hyperparameters()
        return {d.name: hp[d.name] for d in self.dims}

    def contains(self, cfg: StrategyConfig) -> bool:
        if cfg.kind != self.kind:
            return False
        p = self.point(cfg)
        return all(d.contains(p[d.name]) for d in self.dims)

    def grid(self) -> list[dict]:
        """Row-major enumeration (first dimension slowest); integer dims only."""
        if any(d.type == "float" for d in self.dims):
            raise SearchError("grid search needs an all-integer space")
        points: list[dict] = [{}]
        for d in self.dims:
            points = [dict(p, **{d.name: v}) for p in points
                      for v in range(int(d.lo), int(d.hi) + 1)]
        return points


# ---------------------------------------------------------------------------
# ledger


@dataclass
class TrialRecord:
    trial_id: int
    config: StrategyConfig
    seed: int
    score: float | None
    status: str
    wall_time: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if self.status not in ("ok", "failed"):
            raise LedgerError(f"status must be ok or failed, got {self.status!r}")
        if (self.score is None) == (self.status == "ok"):
            raise LedgerError("score must be present exactly when status is ok")

    def to_json(self) -> str:
        d = {"trial_id": self.trial_id, "config": self.config.to_dict(), "seed": self.seed,
             "status": self.status, "score": self.score}
        if self.error is not None:
            d["error"] = self.error
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(int(d["trial_id"]), StrategyConfig.from_dict(d["config"]), int(d["seed"]),
                   None if d.get("score") is None else float(d["score"]), d["status"],
                   error=d.get("error"))


def timing_path(ledger_path: str | Path) -> Path:
    p = Path(ledger_path)
    return p.with_name(p.name + ".timing.jsonl")


def read_ledger(path: str | Path) -> list[TrialRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise LedgerError(f"cannot read ledger {path}: {exc}") from None
    except UnicodeDecodeError:
        raise LedgerError(f"ledger {path} is not UTF-8") from None
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = TrialRecord.from_dict(json.loads(line))
        except Exception as exc:
            raise LedgerError(f"{path}: line {lineno}: corrupt trial record ({exc})") from None
        if rec.trial_id != len(records):
            raise LedgerError(
                f"{path}: line {lineno}: trial_id {rec.trial_id} breaks the dense sequence "
                f"(expected {len(records)})"
            )
        records.append(rec)
    times = timing_path(path)
    if times.exists():
        wall = {}
        for line in times.read_text(encoding="utf-8").splitlines():
            try:
                row = json.loads(line)
                wall[int(row["trial_id"])] = float(row["wall_time"])
            except Exception:
                continue  # timing is advisory
        for rec in records:
            rec.wall_time = wall.get(rec.trial_id, 0.0)
    return records


class Ledger:
    """Append-only JSONL writer; each append is flushed to disk."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: list[TrialRecord] = read_ledger(self.path) if self.path.exists() else []

    def append(self, rec: TrialRecord) -> None:
        if rec.trial_id != len(self.records):
            raise LedgerError(f"trial_id {rec.trial_id} is not the next id {len(self.records)}")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")
            fh.flush()
        with open(timing_path(self.path), "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"trial_id": rec.trial_id, "wall_time": rec.wall_time}) + "\n")
        self.records.append(rec)


# ---------------------------------------------------------------------------
# TPE


def _parzen(obs: np.ndarray, lo: float, hi: float, prior_weight: float):
    """Adaptive Parzen mixture: one Gaussian per observation plus a broad
    prior at the centre. Bandwidth is the larger gap to a neighbour."""
    prior_mu = 0.5 * (lo + hi)
    width = hi - lo
    mus = np.append(np.asarray(obs, dtype=np.float64), prior_mu)
    weights = np.append(np.ones(len(obs)), prior_weight)
    order = np.argsort(mus, kind="stable")
    srt = mus[order]
    padded = np.concatenate(([lo], srt, [hi]))
    gaps = np.maximum(srt - padded[:-2], padded[2:] - srt)
    sigmas = np.empty_like(mus)
    sigmas[order] = gaps
    sigmas = np.clip(sigmas, width / min(100.0, 1.0 + len(mus)), width)
    sigmas[-1] = width
    return mus, sigmas, weights / weights.sum()


def _mass(mus, sigmas, lo, hi):
    return ndtr((hi - mus) / sigmas) - ndtr((lo - mus) / sigmas)


class _Numeric:
    def __init__(self, dim: Dim, obs, prior_weight):
        self.integer = dim.type == "int"
        self.dim = dim
        pad = 0.5 if self.integer else 0.0
        self.lo, self.hi = dim.lo - pad, dim.hi + pad
        self.mus, self.sigmas, self.w = _parzen(obs, self.lo, self.hi, prior_weight)
        self.z = _mass(self.mus, self.sigmas, self.lo, self.hi)

    def sample(self, rng):
        i = int(rng.choice(len(self.w), p=self.w))
        mu, s = self.mus[i], self.sigmas[i]
        a, b = ndtr((self.lo - mu) / s), ndtr((self.hi - mu) / s)
        x = float(mu + s * ndtri(a + (b - a) * rng.random()))
        if self.integer:
            return int(np.clip(round(x), self.dim.lo, self.dim.hi))
        return float(np.clip(x, self.dim.lo, self.dim.hi))

    def logpdf(self, x) -> float:
        if self.integer:
            p = (ndtr((x + 0.5 - self.mus) / self.sigmas) - ndtr((x - 0.5 - self.mus) / self.sigmas))
        else:
            u = (x - self.mus) / self.sigmas
            p = np.exp(-0.5 * u * u) / (self.sigmas * math.sqrt(2 * math.pi))
        return math.log(max(float(np.sum(self.w * p / self.z)), 1e-300))


class _Categorical:
    def __init__(self, dim: Dim, obs, prior_weight):
        self.lo = int(dim.lo)
        counts = np.bincount(np.asarray(obs, dtype=np.int64) - self.lo,
                             minlength=int(dim.hi) - self.lo + 1).astype(np.float64)
        probs = counts + prior_weight
        self.p = probs / probs.sum()

    def sample(self, rng):
        return self.lo + int(rng.choice(len(self.p), p=self.p))

    def logpdf(self, x) -> float:
        return math.log(self.p[int(x) - self.lo])


def _model(space: SearchSpace, points: Sequence[dict], prior_weight: float):
    out = {}
    for d in space.dims:
        obs = [p[d.name] for p in points]
        out[d.name] = (_Categorical if d.type == "cat" else _Numeric)(d, obs, prior_weight)
    return out


@dataclass
class TPESampler:
    """Tree-structured Parzen estimator over independent dimensions.

    After ``n_startup`` trials, the ok trials are split at the ``gamma``
    score quantile; ``n_candidates`` points drawn from the good-trial density
    are ranked by good/bad density ratio and the best one is returned.
    """

    gamma: float = 0.25
    n_candidates: int = 24
    n_startup: int = 10
    prior_weight: float = 1.0

    def suggest(self, history: Sequence[TrialRecord], space: SearchSpace,
                rng: np.random.Generator) -> dict:
        if len(history) < self.n_startup:
            return space.sample(rng)
        ok = [r for r in history if r.status == "ok" and r.config.kind == space.kind]
        scores = [r.score for r in ok]
        if len(ok) < 2 or max(scores) == min(scores):
            return space.sample(rng)
        ranked = sorted(ok, key=lambda r: (-r.score, r.trial_id))
        n_good = max(1, math.ceil(self.gamma * len(ranked)))
        good = [space.point(r.config) for r in ranked[:n_good]]
        bad = [space.point(r.config) for r in ranked[n_good:]]
        l_model = _model(space, good, self.prior_weight)
        g_model = _model(space, bad, self.prior_weight)
        best, best_score = None, -math.inf
        for _ in range(self.n_candidates):
            cand = {d.name: l_model[d.name].sample(rng) for d in space.dims}
            ratio = sum(l_model[n].logpdf(v) - g_model[n].logpdf(v) for n, v in cand.items())
            if ratio > best_score:
                best, best_score = cand, ratio
        return best


def tpe_suggest(history: Sequence[TrialRecord], space: SearchSpace,
                rng: np.random.Generator, **kwargs) -> StrategyConfig:
    return space.to_config(TPESampler(**kwargs).suggest(history, space, rng))


# ---------------------------------------------------------------------------
# search loop


def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial_id])


def trial_seed(seed: int, trial_id: int) -> int:
    """64-bit seed handed to the evaluator for trial ``trial_id``."""
    return int(np.random.SeedSequence([seed, trial_id, 1]).generate_state(1, np.uint64)[0])


def _evaluate(evaluator: Evaluator, trial_id: int, cfg: StrategyConfig, seed: int) -> TrialRecord:
    start = time.perf_counter()
    try:
        score = float(evaluator(cfg, seed))
        if not math.isfinite(score):
            raise ValueError(f"non-finite score {score}")
    except Exception as exc:
        msg = f"{type(exc).__name__}: {exc}"
        diag = getattr(exc, "diagnostics", "")
        if diag:
            msg += "\n" + diag
        return TrialRecord(trial_id, cfg, seed, None, "failed",
                           time.perf_counter() - start, msg)
    return TrialRecord(trial_id, cfg, seed, score, "ok", time.perf_counter() - start)


def _search(method: str, space: SearchSpace, evaluator: Evaluator, budget: int, seed: int,
            ledger: Ledger | None, records: list[TrialRecord] | None = None,
            jobs: int = 1, sampler: TPESampler | None = None) -> list[TrialRecord]:
    if method not in METHODS:
        raise SearchError(f"unknown method {method!r}; expected one of {METHODS}")
    if budget < 1:
        raise SearchError("budget must be >= 1")
    if method == "grid" and space.kind != "rand":
        raise SearchError("grid search is only defined on the rand space")
    if jobs < 1:
        raise SearchError("jobs must be >= 1")
    records = ledger.records if ledger is not None else (records if records is not None else [])
    grid = space.grid() if method == "grid" else None
    total = min(budget, len(grid)) if grid is not None else budget
    sampler = sampler or TPESampler()
    while len(records) < total:
        start = len(records)
        snapshot = list(records)
        batch = []
        for t in range(start, min(start + jobs, total)):
            if method == "grid":
                point = grid[t]
            elif method == "random":
                point = space.sample(trial_rng(seed, t))
            else:
                point = sampler.suggest(snapshot, space, trial_rng(seed, t))
            s = trial_seed(seed, t)
            batch.append((t, space.to_config(point, seed=s), s))
        if jobs == 1 or len(batch) == 1:
            done = [_evaluate(evaluator, *b) for b in batch]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                done = list(pool.map(lambda b: _evaluate(evaluator, *b), batch))
        for rec in done:
            if ledger is not None:
                ledger.append(rec)
            else:
                records.append(rec)
    return records


def grid_search(space: SearchSpace, evaluator: Evaluator, budget: int | None = None,
                ledger_path: str | Path | None = None) -> list[TrialRecord]:
    """Evaluate the grid (or its first ``budget`` points) in row-major order."""
    budget = len(space.grid()) if budget is None else budget
    ledger = Ledger(ledger_path) if ledger_path is not None else None
    return _search("grid", space, evaluator, budget, 0, ledger)


def random_search(space: SearchSpace, evaluator: Evaluator, budget: int = 50, seed: int = 0,
                  ledger_path: str | Path | None = None) -> list[TrialRecord]:
    ledger = Ledger(ledger_path) if ledger_path is not None else None
    return _search("random", space, evaluator, budget, seed, ledger)


def bo_search(space: SearchSpace, evaluator: Evaluator, budget: int = 50, seed: int = 0,
              ledger_path: str | Path | None = None,
              sampler: TPESampler | None = None) -> list[TrialRecord]:
    ledger = Ledger(ledger_path) if ledger_path is not None else None
    return _search("bo", space, evaluator, budget, seed, ledger, sampler=sampler)


def run_search(method: str, space: SearchSpace, evaluator: Evaluator, budget: int = 50,
               seed: int = 0, ledger_path: str | Path = "ledger.jsonl", jobs: int = 1,
               sampler: TPESampler | None = None) -> Path:
    """Run (or resume) a search until the ledger holds ``budget`` trials.

    An existing ledger is continued from its last trial; an unreadable one
    raises :class:`LedgerError` rather than being overwritten.
    """
    ledger = Ledger(ledger_path)
    _search(method, space, evaluator, budget, seed, ledger, jobs=jobs, sampler=sampler)
    return ledger.path


# ---------------------------------------------------------------------------
# reporting


def _bins(dim: Dim) -> list[tuple[str, float, float]]:
    if dim.type == "float":
        edges = np.linspace(dim.lo, dim.hi, 6)
        return [(f"[{a:.1f}, {b:.1f}{']' if i == 4 else ')'}", a, b)
                for i, (a, b) in enumerate(zip(edges[:-1], edges[1:]))]
    lo, hi = int(dim.lo), int(dim.hi)
    if hi - lo + 1 <= 8:
        return [(str(v), v, v) for v in range(lo, hi + 1)]
    edges = np.floor(np.linspace(lo, hi + 1, 6)).astype(int)
    return [(f"{a}-{b - 1}", a, b - 1) for a, b in zip(edges[:-1], edges[1:])]


def _in_bin(dim: Dim, value, lo, hi, last: bool) -> bool:
    if dim.type == "float":
        return lo <= value < hi or (last and value == hi)
    return lo <= value <= hi


def space_for(kind: str) -> SearchSpace | None:
    if kind == "smart":
        return SearchSpace.smart()
    if kind == "rand":
        return SearchSpace.rand()
    return None


def summarize_ledger(records: Iterable[TrialRecord], top_k: int = 3) -> dict:
    """Best trial, mean score of the top-``top_k`` trials and per-dimension
    marginal score tables (mean/std per value bin)."""
    records = list(records)
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise SearchError("no ok trials in ledger: nothing to report")
    ranked = sorted(ok, key=lambda r: (-r.score, r.trial_id))
    top = ranked[:top_k]
    best = ranked[0]
    report = {
        "n_trials": len(records),
        "n_ok": len(ok),
        "n_failed": len(records) - len(ok),
        "best": {"trial_id": best.trial_id, "score": best.score, "config": best.config.to_dict()},
        "top_k": len(top),
        "top_trials": [r.trial_id for r in top],
        "top_mean": math.fsum(r.score for r in top) / len(top),
        "marginals": {},
    }
    kinds = {r.config.kind for r in ok}
    space = space_for(kinds.pop()) if len(kinds) == 1 else None
    if space is None:
        return report
    if space.kind == "rand":
        n_hi = max(r.config.n for r in ok)
        space = SearchSpace.rand(max(n_hi, 1))
    for dim in space.dims:
        bins = _bins(dim)
        rows = []
        for i, (label, lo, hi) in enumerate(bins):
            vals = [r.score for r in ok
                    if _in_bin(dim, space.point(r.config)[dim.name], lo, hi, i == len(bins) - 1)]
            rows.append({
                "bin": label,
                "n": len(vals),
                "mean": float(np.mean(vals)) if vals else None,
                "std": float(np.std(vals)) if vals else None,
            })
        means = [row["mean"] for row in rows if row["mean"] is not None]
        report["marginals"][dim.name] = {"bins": rows, "range": max(means) - min(means)}
    return report


def format_report(report: dict) -> str:
    lines = [
        f"trials: {report['n_trials']} ({report['n_ok']} ok, {report['n_failed']} failed)",
        f"best:   trial {report['best']['trial_id']}  score {report['best']['score']:.4f}  "
        f"{json.dumps(report['best']['config'], sort_keys=True)}",
        f"top-{report['top_k']} mean: {report['top_mean']:.4f}  "
        f"(trials {', '.join(map(str, report['top_trials']))})",
    ]
    for name, table in report["marginals"].items():
        lines.append("")
        lines.append(f"{name}  (range {table['range']:.4f})")
        lines.append(f"  {'bin':>12}  {'n':>4}  {'mean':>8}  {'std':>8}")
        for row in table["bins"]:
            if row["n"]:
                lines.append(f"  {row['bin']:>12}  {row['n']:>4}  {row['mean']:>8.4f}  {row['std']:>8.4f}")
            else:
                lines.append(f"  {row['bin']:>12}  {0:>4}  {'-':>8}  {'-':>8}")
    return "\n".join(lines)
