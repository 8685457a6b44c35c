"""SVG figures behind the comparison CSVs (matplotlib, Agg backend)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ._io import atomic_write_bytes  # noqa: E402

# fixed salt and no date keep repeated runs byte-identical
plt.rcParams["svg.hashsalt"] = "minvent"
_META = {"Date": None, "Creator": "minvent"}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata=_META)
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def scatter_svg(path, ref, preds: dict, title: str = "Predicted vs reference minute ventilation"):
    """Prediction-vs-reference scatter, one series per model, identity line."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ref = np.asarray(ref)
    lo, hi = float(ref.min()), float(ref.max())
    for name, p in preds.items():
        p = np.asarray(p)
        ax.scatter(ref, p, s=6, alpha=0.6, label=name)
        lo, hi = min(lo, float(p.min())), max(hi, float(p.max()))
    ax.plot([lo, hi], [lo, hi], "k--", lw=1, label="identity")
    ax.set_xlabel("reference MV (L/min)")
    ax.set_ylabel("predicted MV (L/min)")
    ax.set_title(title)
    ax.legend(loc="upper left")
    return _save(fig, path)


def level_bars_svg(path, per_level: dict, annotations: dict | None = None,
                   title: str = "RMSE by artifact level"):
    """Grouped bars: ``per_level[model][level] -> rmse``; optional text per level."""
    fig, ax = plt.subplots(figsize=(6, 4))
    models = list(per_level)
    levels = sorted({lv for m in models for lv in per_level[m]})
    width = 0.8 / max(len(models), 1)
    x = np.arange(len(levels))
    for i, m in enumerate(models):
        vals = [per_level[m].get(lv, np.nan) for lv in levels]
        ax.bar(x + i * width, vals, width, label=m)
    if annotations:
        top = max(v for m in models for v in per_level[m].values())
        for j, lv in enumerate(levels):
            if lv in annotations:
                ax.text(x[j] + 0.4 - width / 2, top * 1.05, annotations[lv], ha="center")
        ax.set_ylim(0, top * 1.15)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([str(lv) for lv in levels])
    ax.set_xlabel("artifact level")
    ax.set_ylabel("RMSE (L/min)")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def bland_altman_svg(path, ref, pred, limits, title: str = "Bland-Altman"):
    ref, pred = np.asarray(ref), np.asarray(pred)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter((ref + pred) / 2, pred - ref, s=6, alpha=0.6)
    for y, style in zip(limits, ("-", "--", "--")):
        ax.axhline(y, color="k", ls=style, lw=1)
    ax.set_xlabel("mean of methods (L/min)")
    ax.set_ylabel("prediction - reference (L/min)")
    ax.set_title(title)
    return _save(fig, path)
