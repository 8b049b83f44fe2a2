"""Figures written next to the delimited outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 150,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_pr_curves(report, path) -> None:
    """Structural-AP curves for every threshold and the heatmap PR curve."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.2))
        for t, ap in report.sap.items():
            c = report.pr_curves.get(f"sap{t:g}")
            if c is not None and len(c.recall):
                ax1.plot(c.recall, c.precision, label=f"sAP$^{{{t:g}}}$ = {100 * ap:.1f}")
        ax1.set_title("line segments (structural)")
        h = report.pr_curves.get("heatmap")
        if h is not None:
            ax2.plot(h.recall, h.precision, "o-", ms=2, label=f"AP$^H$ = {100 * report.aph:.1f}")
        ax2.set_title(f"heatmap, F$^H$ = {100 * report.fh:.1f}")
        for ax in (ax1, ax2):
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1.02)
            ax.set_xlabel("recall")
            ax.set_ylabel("precision")
            ax.grid(alpha=0.3)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(loc="lower left")
        _save(fig, path)


def plot_wireframe(wf, path, prediction=None) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4 * wf.height / wf.width))
        for x1, y1, x2, y2 in wf.lines:
            ax.plot([x1, x2], [y1, y2], color="0.6", lw=2.5, zorder=1)
        if len(wf.junctions):
            ax.scatter(*wf.junctions.T, s=6, color="0.3", zorder=2)
        if prediction is not None:
            scores = prediction.segment_scores
            for (x1, y1, x2, y2), s in zip(prediction.lines, scores):
                ax.plot([x1, x2], [y1, y2], color=plt.cm.viridis(s), lw=1, zorder=3)
            if len(prediction.junctions):
                ax.scatter(*prediction.junctions.T, s=4, color="tab:red", zorder=4)
        ax.set_xlim(0, wf.width)
        ax.set_ylim(wf.height, 0)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
        _save(fig, path)


def plot_field(afm, path) -> None:
    """The four normalized channels; background pixels are masked."""
    names = ["distance", "angle", "endpoint 1 angle", "endpoint 2 angle"]
    bg = ~afm.foreground
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 4, figsize=(10, 2.8))
        for ax, ch, name in zip(axes, afm.channels, names):
            im = ax.imshow(np.ma.masked_where(bg, ch), vmin=0, vmax=1, cmap="viridis", interpolation="nearest")
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=list(axes), shrink=0.8)
        fig.savefig(path)
        plt.close(fig)
