"""Attention CSV files and SVG heatmaps of cross-attention maps.

The CSV layout is spreadsheet friendly: a header row ``token,0,1,...`` of
frame indices, then one row per emitted token with the token string in the
first column. :func:`render_svg` draws one cell per matrix entry on a
white-to-violet ramp, outlines each row's argmax cell and optionally shades
ground-truth segment bands along the frame axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

RAMP_END = (88, 24, 150)
OUTLINE = "#e0a000"
BAND_COLOURS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


@dataclass
class HeatmapSpec:
    cell: int = 12
    label_width: int = 110
    tick_stride: int = 10
    top: int = 28


def write_attention_csv(path, tokens: Sequence[str], beta) -> None:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2 or beta.shape[0] != len(tokens):
        raise ValueError("need one attention row per token")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token", *range(beta.shape[1])])
        for tok, row in zip(tokens, beta):
            w.writerow([tok, *(repr(float(v)) for v in row)])


def read_attention_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["token"]:
        raise ValueError(f"{path}: missing 'token' header row")
    width = len(rows[0]) - 1
    tokens, values = [], []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise ValueError(f"{path}: line {n} has {len(row) - 1} values, expected {width}")
        tokens.append(row[0])
        values.append([float(v) for v in row[1:]])
    return tokens, np.array(values, dtype=np.float64).reshape(len(tokens), width)


def write_centers_csv(path, tokens: Sequence[str], centers, windows=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "token", "center", "window_start", "window_end"])
        for i, (tok, m) in enumerate(zip(tokens, centers)):
            lo, hi = ("", "") if windows is None else (int(windows[i][0]), int(windows[i][1]))
            w.writerow([i, tok, repr(float(m)), lo, hi])


def aggregate_rows(beta, tokens: Sequence[str], spans) -> tuple[list[str], np.ndarray]:
    """Average attention rows over token spans to get phrase-level rows.

    ``spans`` is a list of ``[start, end]`` (inclusive token steps) or of
    objects ``{"span": [start, end], "label": ...}``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    labels, rows = [], []
    for s in spans:
        if isinstance(s, dict):
            lo, hi = s["span"]
            label = s.get("label")
        else:
            lo, hi = s
            label = None
        if not 0 <= lo <= hi < len(tokens):
            raise ValueError(f"span [{lo}, {hi}] outside 0..{len(tokens) - 1}")
        rows.append(beta[lo:hi + 1].mean(axis=0))
        labels.append(label or " ".join(tokens[lo:hi + 1]))
    return labels, np.array(rows)


def _colour(w: float) -> str:
    r, g, b = (round(255 + (c - 255) * w) for c in RAMP_END)
    return f"#{r:02x}{g:02x}{b:02x}"


def check_matrix(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2 or 0 in beta.shape:
        raise ValueError("attention matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(beta)) or np.any(beta < 0):
        raise ValueError("attention weights must be finite and non-negative")
    zero = np.flatnonzero(~beta.any(axis=1))
    if zero.size:
        raise ValueError(f"attention row {int(zero[0])} is all zero")
    return beta


def render_svg(beta, tokens: Sequence[str], segments=None, spec: HeatmapSpec | None = None) -> str:
    """SVG text for ``beta`` (rows = tokens, columns = frames).

    Colour is linear in weight, scaled so the largest entry is fully
    saturated. ``segments`` is an optional list of ``(label, start, end)``
    frame ranges drawn as bands above the grid.
    """
    spec = spec or HeatmapSpec()
    beta = check_matrix(beta)
    if len(tokens) != beta.shape[0]:
        raise ValueError("need one token label per row")
    n_rows, n_cols = beta.shape
    c, x0, y0 = spec.cell, spec.label_width, spec.top
    width, height = x0 + n_cols * c + 10, y0 + n_rows * c + 24
    scale = beta.max()
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for k, (label, lo, hi) in enumerate(segments or ()):
        colour = BAND_COLOURS[k % len(BAND_COLOURS)]
        out.append(f'<rect class="segment" x="{x0 + lo * c}" y="{y0 - 14}" '
                   f'width="{(hi - lo + 1) * c}" height="{n_rows * c + 14}" fill="{colour}" '
                   f'fill-opacity="0.12" stroke="{colour}"/>')
        out.append(f'<text x="{x0 + lo * c + 2}" y="{y0 - 4}" fill="{colour}">'
                   f'{escape(str(label))} [{lo},{hi}]</text>')
    for i, row in enumerate(beta):
        y = y0 + i * c
        out.append(f'<text x="{x0 - 4}" y="{y + c - 3}" text-anchor="end">{escape(tokens[i])}</text>')
        for j, w in enumerate(row):
            out.append(f'<rect class="cell" x="{x0 + j * c}" y="{y}" width="{c}" height="{c}" '
                       f'fill="{_colour(w / scale)}"/>')
    for i, j in enumerate(np.argmax(beta, axis=1)):
        out.append(f'<rect class="argmax" x="{x0 + j * c}" y="{y0 + i * c}" width="{c}" '
                   f'height="{c}" fill="none" stroke="{OUTLINE}" stroke-width="2"/>')
    for j in range(0, n_cols, max(1, spec.tick_stride)):
        out.append(f'<text x="{x0 + j * c}" y="{y0 + n_rows * c + 14}">{j}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def load_segments(path) -> list[tuple[str, int, int]]:
    """Segments from JSON: a list of ``{"label", "frame_span"}`` objects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "segments" in data:
        data = data["segments"]
    return [(str(d["label"]), int(d["frame_span"][0]), int(d["frame_span"][1])) for d in data]
