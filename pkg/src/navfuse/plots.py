"""Static SVG charts. Output bytes are deterministic (fixed hash salt, no date)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "navfuse", "svg.fonttype": "path"}


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def bar_chart(labels, values, ylabel: str) -> bytes:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(range(len(values)), values, color="#4c72b0")
        ax.set_xticks(range(len(labels)), labels, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _svg(fig)


def curve_chart(xlabels, series: dict, ylabel: str, xlabel: str) -> bytes:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        for name, ys in series.items():
            ax.plot(range(len(xlabels)), ys, marker="o", label=name)
        ax.set_xticks(range(len(xlabels)), xlabels)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _svg(fig)
