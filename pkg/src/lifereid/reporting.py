"""Figure rendering for run directories.

Reads the delimited metrics output and writes PNG figures next to it, so a
finished run folds into a visual report without re-running anything.  Kept
separate from the pipeline: nothing here affects training or the CSV.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
}


def _steps(rows):
    return sorted({r["step"] for r in rows})


def _series(rows, domain_id, mode, metric="mAP"):
    pts = [(r["step"], r[metric]) for r in rows if r["domain_id"] == domain_id and r["mode"] == mode]
    pts.sort()
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_forgetting(rows) -> plt.Figure:
    """Per-domain mAP across steps; solid self-test, dashed cross-test."""
    fig, ax = plt.subplots()
    seen = sorted({r["domain_id"] for r in rows if r["kind"] == "seen"})
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, d in enumerate(seen):
        c = colors[i % len(colors)]
        xs, ys = _series(rows, d, "self")
        ax.plot(xs, ys, "-o", color=c, label="domain %d self" % d)
        xs, ys = _series(rows, d, "cross")
        if xs:
            ax.plot(xs, ys, "--s", color=c, alpha=0.7, label="domain %d cross" % d)
    ax.set_xlabel("step")
    ax.set_ylabel("mAP (%)")
    ax.set_title("Seen-domain retention")
    ax.legend(fontsize=8)
    ax.set_xticks(_steps(rows))
    return fig


def plot_seen_unseen(rows) -> plt.Figure:
    """Average mAP of seen vs unseen domains per step."""
    fig, ax = plt.subplots()
    for kind, style in (("seen", "-o"), ("unseen", "--s")):
        xs, ys = [], []
        for s in _steps(rows):
            vals = [
                r["mAP"]
                for r in rows
                if r["step"] == s and r["kind"] == kind and r["mode"] == "self"
            ]
            if vals:
                xs.append(s)
                ys.append(sum(vals) / len(vals))
        ax.plot(xs, ys, style, label="%s average" % kind)
    ax.set_xlabel("step")
    ax.set_ylabel("mAP (%)")
    ax.set_title("Adaptation vs generalization")
    ax.legend()
    ax.set_xticks(_steps(rows))
    return fig


def plot_compat_gap(rows) -> plt.Figure:
    """Self minus cross mAP per trained domain; positive means degradation."""
    fig, ax = plt.subplots()
    seen = sorted({r["domain_id"] for r in rows if r["mode"] == "cross"})
    for d in seen:
        xs_s, ys_s = _series(rows, d, "self")
        xs_c, ys_c = _series(rows, d, "cross")
        cross = dict(zip(xs_c, ys_c))
        xs = [x for x in xs_s if x in cross]
        ax.plot(xs, [ys_s[xs_s.index(x)] - cross[x] for x in xs], "-o", label="domain %d" % d)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("self - cross mAP (points)")
    ax.set_title("Backward-compatibility gap")
    ax.legend(fontsize=8)
    ax.set_xticks(_steps(rows))
    return fig


def render_run_figures(run_dir: str, rows) -> list[str]:
    """Write the standard figures into run_dir/figures; returns the paths."""
    fig_dir = os.path.join(run_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    out = []
    with plt.rc_context(_STYLE):
        for name, fn in (
            ("forgetting.png", plot_forgetting),
            ("seen_unseen.png", plot_seen_unseen),
            ("compat_gap.png", plot_compat_gap),
        ):
            fig = fn(rows)
            path = os.path.join(fig_dir, name)
            fig.savefig(path, bbox_inches="tight")
            plt.close(fig)
            out.append(path)
    return out


def render_ablation_figure(out_dir: str, summary: list[dict]) -> str:
    """Bar chart of final seen-average and first-domain mAP per ablation."""
    names = [row["ablation"] for row in summary]
    x = range(len(names))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        width = 0.38
        ax.bar([i - width / 2 for i in x], [row["seen_avg_mAP"] for row in summary],
               width, label="seen avg mAP")
        ax.bar([i + width / 2 for i in x], [row["first_domain_mAP"] for row in summary],
               width, label="first domain mAP")
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=20)
        ax.set_ylabel("mAP (%)")
        ax.set_title("Loss ablations, final step")
        ax.legend()
        path = os.path.join(out_dir, "ablation.png")
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
    return path
