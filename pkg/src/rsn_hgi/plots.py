"""Static charts of a result table (gap and idleness against r)."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import ResultTable  # noqa: E402

__all__ = ["emit_plots"]


def _monotone(ys) -> str:
    if len(ys) < 2:
        return ""
    if all(b < a for a, b in zip(ys, ys[1:])):
        return "decreasing in r"
    if all(b > a for a, b in zip(ys, ys[1:])):
        return "increasing in r"
    return "not monotone in r"


def _chart(path: Path, rs, series: dict, ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    notes = []
    for label, (ys, es) in series.items():
        ax.errorbar(rs, ys, yerr=es, marker="o", capsize=3, label=label)
        trend = _monotone(ys)
        if trend:
            notes.append(f"{label}: {trend}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("r")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if notes:
        ax.text(0.02, 0.02, "\n".join(notes), transform=ax.transAxes, fontsize=7, va="bottom")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def emit_plots(table: ResultTable, out_dir) -> list[Path]:
    """Write ``gap_vs_r.svg`` and ``idleness_vs_r.svg``; nothing for an empty table."""
    if len(table) == 0:
        warnings.warn("result table is empty; no plots written", stacklevel=2)
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rs = table.r_values
    agg = {(a["r"], a["metric"]): a for a in table.aggregates()}

    def series(metric, shift=0.0):
        if not all((r, metric) in agg for r in rs):
            return None
        return ([abs(agg[(r, metric)]["mean"] - shift) for r in rs],
                [agg[(r, metric)]["std_error"] for r in rs])

    written = []
    gap = {}
    ref = table.hgi.get("value")
    for metric in ("J_E", "J_D"):
        s = series(metric, ref) if ref is not None else None
        if s:
            gap[f"|{metric} - HGI|"] = s
    s = series("mean_gap")
    if s:
        gap["mean h.Q - hhat(W)"] = s
    if gap:
        p = out_dir / "gap_vs_r.svg"
        _chart(p, rs, gap, "gap", "Cost gap against r")
        written.append(p)
    idle = {m: series(m) for m in table.metrics if m.startswith("idle_")}
    idle = {k: v for k, v in idle.items() if v}
    if idle:
        p = out_dir / "idleness_vs_r.svg"
        _chart(p, rs, idle, "time fraction", "Idleness under high workload")
        written.append(p)
    return written
