"""Report rendering from trace CSVs alone (no model state required).

Produces a delimited summary plus matplotlib figures next to it:

    summary.csv       one line per trace: best value, evaluations, arms used
    convergence.csv   per-evaluation incumbent for every trace, aligned
    convergence.png   incumbent vs evaluation index
    batch_mix.png     per-iteration arm composition (stacked bars)
"""

from __future__ import annotations

import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .engine import read_trace  # noqa: E402

ARM_COLORS = {"INIT": "#999999", "KAT": "#1f77b4", "NEUK": "#d62728",
              "RANDOM": "#2ca02c"}


def _label(path: str, index: int) -> str:
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return parent or f"trace{index}"


def write_report(trace_paths: list[str], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    traces = [(path, _label(path, i), read_trace(path))
              for i, path in enumerate(trace_paths)]

    _write_summary(os.path.join(out_dir, "summary.csv"), traces)
    _write_convergence_csv(os.path.join(out_dir, "convergence.csv"), traces)
    _plot_convergence(os.path.join(out_dir, "convergence.png"), traces)
    _plot_batch_mix(os.path.join(out_dir, "batch_mix.png"), traces)


def _write_summary(path: str, traces) -> None:
    lines = ["trace,label,evaluations,best,feasible_count,"
             "evals_init,evals_kat,evals_neuk,evals_random"]
    for trace_path, label, cols in traces:
        inc = cols["incumbent"]
        best = np.nanmax(inc) if np.isfinite(inc).any() else float("nan")
        arms = cols["arm"]
        lines.append(
            f"{trace_path},{label},{len(inc)},{repr(float(best))},"
            f"{int(cols['feasible'].sum())},"
            f"{int((arms == 'INIT').sum())},{int((arms == 'KAT').sum())},"
            f"{int((arms == 'NEUK').sum())},{int((arms == 'RANDOM').sum())}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_convergence_csv(path: str, traces) -> None:
    longest = max(len(cols["incumbent"]) for _, _, cols in traces)
    header = ["evaluation"] + [label for _, label, _ in traces]
    lines = [",".join(header)]
    for i in range(longest):
        cells = [str(i + 1)]
        for _, _, cols in traces:
            inc = cols["incumbent"]
            cells.append("" if i >= len(inc) or np.isnan(inc[i])
                         else repr(float(inc[i])))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _plot_convergence(path: str, traces) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for _, label, cols in traces:
        inc = cols["incumbent"]
        ax.plot(np.arange(1, len(inc) + 1), inc, drawstyle="steps-post",
                label=label, linewidth=1.5)
    ax.set_xlabel("evaluations")
    ax.set_ylabel("best feasible objective")
    ax.set_title("incumbent vs evaluation budget")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _plot_batch_mix(path: str, traces) -> None:
    fig, axes = plt.subplots(1, len(traces), figsize=(5 * len(traces), 3.6),
                             squeeze=False)
    for ax, (_, label, cols) in zip(axes[0], traces):
        iters = cols["iteration"]
        arms = cols["arm"]
        uniq = sorted(set(iters.tolist()))
        bottom = np.zeros(len(uniq))
        for arm, color in ARM_COLORS.items():
            counts = np.array([(arms[iters == it] == arm).sum() for it in uniq],
                              dtype=float)
            if counts.sum() == 0:
                continue
            ax.bar(uniq, counts, bottom=bottom, color=color, label=arm, width=0.8)
            bottom += counts
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("iteration")
        ax.set_ylabel("evaluations")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
