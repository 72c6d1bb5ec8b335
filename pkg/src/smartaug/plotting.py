"""Report figures for search ledgers (matplotlib, file output only)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .search import TrialRecord


def write_marginals_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "bin", "n", "mean", "std"])
        for name, table in report["marginals"].items():
            for row in table["bins"]:
                writer.writerow([name, row["bin"], row["n"],
                                 "" if row["mean"] is None else f"{row['mean']:.6f}",
                                 "" if row["std"] is None else f"{row['std']:.6f}"])


def plot_marginals(report: dict, path: str | Path) -> Path | None:
    marginals = report["marginals"]
    if not marginals:
        return None
    n = len(marginals)
    fig = Figure(figsize=(3.2 * n, 3.0), tight_layout=True)
    for i, (name, table) in enumerate(marginals.items()):
        ax = fig.add_subplot(1, n, i + 1)
        rows = [r for r in table["bins"] if r["n"]]
        x = np.arange(len(rows))
        ax.bar(x, [r["mean"] for r in rows], yerr=[r["std"] for r in rows],
               color="0.6", ecolor="k", capsize=2)
        ax.set_xticks(x)
        ax.set_xticklabels([r["bin"] for r in rows], rotation=45, ha="right", fontsize=7)
        ax.set_title(f"{name} (range {table['range']:.3f})", fontsize=9)
        if i == 0:
            ax.set_ylabel("score")
    fig.savefig(path, dpi=100)
    return Path(path)


def plot_trace(records: Sequence[TrialRecord], path: str | Path) -> Path | None:
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        return None
    ids = [r.trial_id for r in ok]
    scores = [r.score for r in ok]
    fig = Figure(figsize=(5, 3.2), tight_layout=True)
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(ids, scores, "o", ms=3, color="0.5", label="trial")
    ax.step(ids, np.maximum.accumulate(scores), where="post", color="k", label="best so far")
    failed = [r.trial_id for r in records if r.status == "failed"]
    if failed:
        ax.plot(failed, [min(scores)] * len(failed), "x", color="r", label="failed")
    ax.set_xlabel("trial")
    ax.set_ylabel("score")
    ax.legend(fontsize=7, frameon=False)
    fig.savefig(path, dpi=100)
    return Path(path)
