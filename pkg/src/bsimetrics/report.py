"""TSV writers and matplotlib figures for bench and scorecard output."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import ScorecardRow  # noqa: E402
from .bench import BenchReport  # noqa: E402


def write_tsv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def bench_figure(reports: list[BenchReport], path: str | Path) -> Path:
    """One panel per measure: normal vs BSI bars, annotated with the ratio."""
    measures = [(r, m) for r in reports for m in r.measures]
    fig, axes = plt.subplots(1, len(measures), figsize=(3.2 * len(measures), 3.6), squeeze=False)
    for ax, (r, m) in zip(axes[0], measures):
        scale, unit = (1e-6, "MB") if m.unit == "B" else (1e3, "ms")
        ax.bar(["normal", "bsi"], [m.normal * scale, m.bsi * scale], color=["#999999", "#3a6ea5"])
        ax.set_title(f"{r.scenario}: {m.name}", fontsize=9)
        ax.set_ylabel(unit)
        ax.text(0.5, 0.95, f"bsi/normal = {m.ratio:.3f}", transform=ax.transAxes, ha="center", va="top", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def scorecard_figure(rows: list[ScorecardRow], path: str | Path, z: float = 1.959963984540054) -> Path:
    """Relative delta with 95% interval for every tested row."""
    tested = [r for r in rows if r.result is not None]
    fig, ax = plt.subplots(figsize=(6.4, 0.45 * max(len(tested), 1) + 1.2))
    labels, centers, halves = [], [], []
    for r in tested:
        base = r.control_point or float("nan")
        half = z * math.sqrt(r.result.variance)
        labels.append(f"{r.strategy} {r.metric}" + (" (cuped)" if r.result.cuped else ""))
        centers.append(100 * r.result.delta / base)
        halves.append(100 * half / abs(base))
    y = range(len(tested))
    ax.errorbar(centers, list(y), xerr=halves, fmt="o", color="#3a6ea5", capsize=3)
    ax.axvline(0, color="#666666", lw=0.8)
    ax.set_yticks(list(y))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("relative delta vs control (%)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
