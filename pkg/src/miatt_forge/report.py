"""Training-curve reports: a fixed-template SVG and a matplotlib figure.

The SVG template is stable and machine-readable: the root element carries
``data-epochs``, ``data-loss``, ``data-liou``, ``data-lerrors`` (space
separated, ``nan`` for undefined values) and ``data-selected-epoch``, so
tests and tools can parse the plotted series back out without touching the
geometry.  The PNG is the human-friendly render of the same rows.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import UNKNOWN, OBJECT, PartialLabeling

SVG_FORMAT = "miatt-forge-report-v1"

# fixed overlay colors (see README): prediction vs a reference labeling
OVERLAY_COLORS = {
    "agree": (0, 160, 0),
    "disagree": (200, 0, 0),
    "undetermined": (128, 128, 128),
}

# per-pixel agreement classes served for canvas rendering
AGREE_UNDETERMINED = 0
AGREE_OBJECT = 1
AGREE_NONOBJECT = 2
FALSE_POSITIVE = 3  # predicted Object where facts say NonObject
FALSE_NEGATIVE = 4  # predicted NonObject where facts say Object

_PANEL_W, _PANEL_H, _GAP = 640, 140, 42
_LEFT, _TOP = 60, 30


def _series_token(v) -> str:
    return "nan" if v is None else repr(float(v))


def _scale(points, lo, hi, x0, y0, w, h, xmin, xmax):
    span_x = max(xmax - xmin, 1)
    span_y = max(hi - lo, 1e-12)
    out = []
    for x, y in points:
        px = x0 + (x - xmin) / span_x * w
        py = y0 + h - (y - lo) / span_y * h
        out.append(f"{px:.2f},{py:.2f}")
    return " ".join(out)


def _panel(title, rows_x, values, index, selected, color):
    x0, w, h = _LEFT, _PANEL_W, _PANEL_H
    y0 = _TOP + index * (_PANEL_H + _GAP)
    defined = [(x, v) for x, v in zip(rows_x, values) if v is not None]
    if defined:
        lo = min(v for _, v in defined)
        hi = max(v for _, v in defined)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = 0.0, 1.0
    xmin, xmax = rows_x[0], rows_x[-1]
    parts = [
        f'<g id="panel-{title.lower()}">',
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>',
        f'<text x="{x0}" y="{y0 - 8}" font-size="13" font-family="monospace">{title}</text>',
        f'<text x="{x0 - 8}" y="{y0 + 12}" font-size="11" text-anchor="end" font-family="monospace">{hi:.4g}</text>',
        f'<text x="{x0 - 8}" y="{y0 + h}" font-size="11" text-anchor="end" font-family="monospace">{lo:.4g}</text>',
    ]
    if defined:
        pts = _scale(defined, lo, hi, x0, y0, w, h, xmin, xmax)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    if selected is not None and xmax > xmin:
        sx = x0 + (selected - xmin) / (xmax - xmin) * w
        parts.append(
            f'<line x1="{sx:.2f}" y1="{y0}" x2="{sx:.2f}" y2="{y0 + h}" '
            f'stroke="#c00" stroke-dasharray="4 3"/>'
        )
    parts.append("</g>")
    return "\n".join(parts)


def history_svg(rows: Sequence[dict], selected_epoch: Optional[int] = None) -> str:
    """Render parsed history rows (see formats.history_from_csv) as SVG."""
    if not rows:
        raise ValueError("history has no rows to plot")
    epochs = [r["epoch"] for r in rows]
    loss = [r["loss"] for r in rows]
    liou = [r["LIoU"] for r in rows]
    lerrors = [float(r["LErrors"]) for r in rows]
    height = _TOP + 3 * (_PANEL_H + _GAP) + 30
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_LEFT + _PANEL_W + 30}" '
        f'height="{height}" data-format="{SVG_FORMAT}" '
        f'data-epochs="{" ".join(str(e) for e in epochs)}" '
        f'data-loss="{" ".join(_series_token(v) for v in loss)}" '
        f'data-liou="{" ".join(_series_token(v) for v in liou)}" '
        f'data-lerrors="{" ".join(_series_token(v) for v in lerrors)}" '
        f'data-selected-epoch="{selected_epoch if selected_epoch is not None else ""}">'
    )
    axis_y = _TOP + 3 * (_PANEL_H + _GAP) - _GAP + _PANEL_H + 16
    body = [
        _panel("LIoU", epochs, liou, 0, selected_epoch, "#000"),
        _panel("LErrors", epochs, lerrors, 1, selected_epoch, "#555"),
        _panel("Loss", epochs, loss, 2, selected_epoch, "#07c"),
        f'<text x="{_LEFT + _PANEL_W / 2:.0f}" y="{axis_y}" font-size="12" '
        f'text-anchor="middle" font-family="monospace">epoch</text>',
    ]
    return head + "\n" + "\n".join(body) + "\n</svg>\n"


def history_png(
    rows: Sequence[dict], path: Union[str, Path], selected_epoch: Optional[int] = None
) -> None:
    """Matplotlib render of the same three curves, stacked and sharing x."""
    if not rows:
        raise ValueError("history has no rows to plot")
    epochs = [r["epoch"] for r in rows]
    liou = [(e, r["LIoU"]) for e, r in zip(epochs, rows) if r["LIoU"] is not None]
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    if liou:
        axes[0].plot(*zip(*liou), "k-", marker="^", markersize=3, linewidth=1)
    axes[0].set_ylabel("LIoU")
    axes[1].bar(
        epochs,
        [r["LErrors"] for r in rows],
        width=max((epochs[-1] - epochs[0]) / max(len(epochs), 1), 1),
        color="0.6",
    )
    axes[1].set_ylabel("LErrors")
    axes[2].plot(epochs, [r["loss"] for r in rows], "-", color="tab:blue",
                 marker="o", markersize=3, linewidth=1)
    axes[2].set_ylabel("Loss")
    axes[2].set_xlabel("epoch")
    if selected_epoch is not None:
        for ax in axes:
            ax.axvline(selected_epoch, color="tab:red", linestyle="--", linewidth=1)
        axes[0].set_title(f"selected epoch {selected_epoch}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overlay_rgb(pred: PartialLabeling, reference: PartialLabeling) -> np.ndarray:
    """3-class overlay of a complete prediction against a (partial) reference.

    Pixels the reference leaves Unknown render as 'undetermined'; determined
    pixels render 'agree'/'disagree' by comparing the two labels.
    """
    out = np.zeros((pred.height, pred.width, 3), dtype=np.uint8)
    ref = reference.cells
    agree = (ref == pred.cells) & (ref != int(UNKNOWN))
    disagree = (ref != pred.cells) & (ref != int(UNKNOWN))
    out[ref == int(UNKNOWN)] = OVERLAY_COLORS["undetermined"]
    out[agree] = OVERLAY_COLORS["agree"]
    out[disagree] = OVERLAY_COLORS["disagree"]
    return out


def overlay_counts(pred: PartialLabeling, reference: PartialLabeling) -> dict:
    ref = reference.cells
    return {
        "agree": int(((ref == pred.cells) & (ref != int(UNKNOWN))).sum()),
        "disagree": int(((ref != pred.cells) & (ref != int(UNKNOWN))).sum()),
        "undetermined": int((ref == int(UNKNOWN)).sum()),
    }


def agreement_classes(pred: PartialLabeling, ltt: PartialLabeling) -> np.ndarray:
    """Per-pixel 5-class agreement codes (flat uint8, row-major).

    Codes: 0 undetermined, 1 agree-object, 2 agree-nonobject,
    3 false-positive, 4 false-negative.  Class counts correspond one-to-one
    with the logical confusion counts of the same (prediction, LTT) pair.
    """
    p = pred.flat()
    f = ltt.flat()
    out = np.full(p.size, AGREE_UNDETERMINED, dtype=np.uint8)
    pred_obj = p == int(OBJECT)
    fact_det = f != int(UNKNOWN)
    fact_obj = f == int(OBJECT)
    out[fact_det & fact_obj & pred_obj] = AGREE_OBJECT
    out[fact_det & ~fact_obj & ~pred_obj] = AGREE_NONOBJECT
    out[fact_det & ~fact_obj & pred_obj] = FALSE_POSITIVE
    out[fact_det & fact_obj & ~pred_obj] = FALSE_NEGATIVE
    return out
