"""Figures written next to the run reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .stattests import ALPHA  # noqa: E402

# no Software/date chunks, so repeated runs give identical PNG bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def arrival_histogram(events, scheme, path, resolution_ps: int = 10):
    """Folded arrival-time histogram with the decoding windows shaded."""
    period = scheme.period
    offsets = (np.asarray(events) % np.uint64(period)).astype(np.int64)
    nbins = max(1, period // resolution_ps)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.hist(offsets / 1000.0, bins=nbins, range=(0, period / 1000.0), color="0.2", histtype="step")
    for k, c in enumerate(scheme.bin_centers, 1):
        lo = (c - scheme.bin_width / 2) / 1000.0
        ax.axvspan(lo, lo + scheme.bin_width / 1000.0, color=f"C{k % 10}", alpha=0.25, lw=0)
        ax.text(c / 1000.0, 1.0, f"b={k}", transform=ax.get_xaxis_transform(), ha="center", va="bottom", fontsize=8)
    ax.set_yscale("log")
    ax.set_xlabel("arrival time modulo pulse period (ns)")
    ax.set_ylabel("events")
    _save(fig, path)


def symbol_distribution(counts, path, expected=None, labels=None):
    """Empirical outcome probabilities, optionally against the model values."""
    counts = np.asarray(counts, dtype=float)
    probs = counts / counts.sum()
    x = np.arange(1, len(probs) + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(x, probs, width=0.6, color="0.6", edgecolor="k", label="decoded")
    if expected is not None:
        ax.plot(x, expected, "r_", ms=22, mew=2, label="model")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xticks(x)
    if labels is not None:
        ax.set_xticklabels([str(v) for v in labels])
    ax.set_xlabel("outcome b" if labels is None else "output mode")
    ax.set_ylabel("probability")
    _save(fig, path)


def pvalues(report, path):
    """Per-test p-values against the pass threshold."""
    names = [e.name for e in report.entries]
    ps = [e.p_value for e in report.entries]
    fig, ax = plt.subplots(figsize=(7, 3.6))
    colors = ["0.45" if e.passed else "C3" for e in report.entries]
    ax.bar(np.arange(len(ps)), ps, color=colors)
    ax.axhline(ALPHA, color="k", ls="--", lw=1)
    ax.set_xticks(np.arange(len(ps)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_ylabel("p-value")
    _save(fig, path)


def semidi_rows(model, ambiguous, path):
    """Per-input click probabilities with ambiguous outcomes hatched."""
    k = len(model.outcomes)
    n = len(model.inputs)
    x = np.arange(k)
    width = 0.8 / n
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for j, o in enumerate(model.outcomes):
        if o in ambiguous:
            ax.axvspan(j - 0.45, j + 0.45, facecolor="none", edgecolor="0.5", hatch="..", lw=0)
    for i, (label, row) in enumerate(zip(model.inputs, model.cond)):
        ax.bar(x - 0.4 + width * (i + 0.5), row, width=width, label=f"input {label}")
    ax.set_xticks(x)
    ax.set_xticklabels([str(o) for o in model.outcomes])
    ax.set_xlabel("outcome")
    ax.set_ylabel("P(outcome | input)")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)
