"""Three-panel SVG learning curves: CDPO per c_reg, PPO+entropy per c_reg, aggregated."""
from __future__ import annotations

from pathlib import Path

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .harness import SweepSummary

LABELS = {"cdpo": "CDPO", "ppo_ent": "PPOwEnt", "ppo": "PPOwoEnt"}
FILENAME = "learning_curves.svg"


def _band(ax, steps, mean, err, label, **kw):
    (line,) = ax.plot(steps, mean, label=label, linewidth=1.2, **kw)
    ax.fill_between(steps, mean - err, mean + err, color=line.get_color(), alpha=0.2, linewidth=0)


def _gap(ax, text, y):
    ax.text(0.02, y, f"missing: {text}", transform=ax.transAxes, fontsize=7, color="red",
            va="top")


def emit_plots(summary: SweepSummary, out_dir, title: str | None = None) -> list[Path]:
    """Write the learning-curve figure and return the written paths.

    Output depends only on the summary, which is itself a pure function of
    the run CSVs, so unchanged inputs produce byte-identical SVG.
    """
    if not summary.series:
        raise ValueError("empty sweep summary; nothing to plot")
    out_dir = Path(out_dir)
    coefs = sorted({s.reg_coef for s in summary.series if s.algo != "ppo"}, reverse=True)
    baseline = summary.get("ppo", 0.0)

    with matplotlib.rc_context({"svg.hashsalt": "cdpo", "svg.fonttype": "none"}):
        fig = Figure(figsize=(13, 3.8))
        FigureCanvasSVG(fig)
        axes = fig.subplots(1, 3, sharey=True)
        for ax, algo in zip(axes[:2], ("cdpo", "ppo_ent")):
            missing = []
            for c in coefs:
                s = summary.get(algo, c)
                if s is None or not len(s.steps):
                    missing.append(f"c_reg={c:g}")
                    continue
                _band(ax, s.steps, s.mean_curve, s.stderr_curve, f"c_reg={c:g}")
            if baseline is not None:
                _band(ax, baseline.steps, baseline.mean_curve, baseline.stderr_curve,
                      LABELS["ppo"], color="black", linestyle="--")
            for i, m in enumerate(missing):
                _gap(ax, m, 0.98 - 0.07 * i)
            ax.set_title(LABELS[algo])
        ax = axes[2]
        missing = []
        for algo in ("cdpo", "ppo_ent"):
            agg = summary.aggregated(algo)
            if agg is None:
                missing.append(LABELS[algo])
                continue
            _band(ax, *agg, LABELS[algo])
        if baseline is not None:
            _band(ax, baseline.steps, baseline.mean_curve, baseline.stderr_curve,
                  LABELS["ppo"], color="black", linestyle="--")
        for i, m in enumerate(missing):
            _gap(ax, m, 0.98 - 0.07 * i)
        ax.set_title("aggregated over c_reg")
        for ax in axes:
            ax.set_xlabel("environment steps")
            ax.grid(alpha=0.3)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=7, loc="lower right")
        axes[0].set_ylabel("mean return")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / FILENAME
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return [path]
