"""Small, dependency-free SVG figures: heat map, scatter and line chart with bands."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _num(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _text(x, y, s, size=11, anchor="middle", rotate=None):
    extra = f' transform="rotate({rotate} {_num(x)} {_num(y)})"' if rotate is not None else ""
    return (
        f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" text-anchor="{anchor}"'
        f' font-family="sans-serif"{extra}>{escape(str(s))}</text>'
    )


def _document(width, height, body, title):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"'
        f' viewBox="0 0 {width} {height}">'
    )
    parts = [head, f"<title>{escape(title)}</title>", f'<rect width="{width}" height="{height}" fill="white"/>']
    return "\n".join(parts + body + ["</svg>"]) + "\n"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt_tick(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e3 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"


def _shade(v):
    """White to dark blue for ``v`` in [0, 1]."""
    v = float(np.clip(v, 0.0, 1.0))
    lo, hi = np.array([255, 255, 255]), np.array([8, 48, 107])
    r, g, b = np.rint(lo + (hi - lo) * v).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


class _Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def x(self, v):
        lo, hi = self.xlim
        return self.x0 + (v - lo) / (hi - lo) * self.w

    def y(self, v):
        lo, hi = self.ylim
        return self.y0 + self.h - (v - lo) / (hi - lo) * self.h

    def frame(self, xlabel, ylabel):
        out = [
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" fill="none" stroke="#333"/>',
        ]
        for t in _ticks(*self.xlim):
            px = self.x(t)
            out.append(f'<line x1="{_num(px)}" y1="{self.y0 + self.h}" x2="{_num(px)}" y2="{self.y0 + self.h + 4}" stroke="#333"/>')
            out.append(_text(px, self.y0 + self.h + 16, _fmt_tick(t), 10))
        for t in _ticks(*self.ylim):
            py = self.y(t)
            out.append(f'<line x1="{self.x0 - 4}" y1="{_num(py)}" x2="{self.x0}" y2="{_num(py)}" stroke="#333"/>')
            out.append(_text(self.x0 - 6, py + 3, _fmt_tick(t), 10, anchor="end"))
        out.append(_text(self.x0 + self.w / 2, self.y0 + self.h + 34, xlabel, 12))
        out.append(_text(self.x0 - 48, self.y0 + self.h / 2, ylabel, 12, rotate=-90))
        return out


def _limits(values, pad=0.05):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def heatmap(matrix, row_labels, col_labels, title="Global importance", normalize_columns=True):
    """Cell grid coloured by value; columns are scaled to their own maximum by default."""
    M = np.asarray(matrix, dtype=float)
    if M.shape != (len(row_labels), len(col_labels)):
        raise ValueError("label counts do not match the matrix shape")
    shown = M
    if normalize_columns:
        peak = M.max(axis=0, keepdims=True) if M.size else M
        shown = M / np.where(peak > 0, peak, 1.0)
    elif M.size and M.max() > 0:
        shown = M / M.max()
    cell, left, top = 22, 70, 40
    width = left + cell * len(col_labels) + 20
    height = top + cell * len(row_labels) + 70
    body = [_text(width / 2, 22, title, 13)]
    for i, r in enumerate(row_labels):
        y = top + i * cell
        body.append(_text(left - 6, y + cell * 0.65, r, 10, anchor="end"))
        for j in range(len(col_labels)):
            x = left + j * cell
            body.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_shade(shown[i, j])}"'
                f' stroke="#ddd"><title>{escape(f"{r} -> {col_labels[j]}: {M[i, j]:.4g}")}</title></rect>'
            )
    base = top + cell * len(row_labels) + 8
    for j, c in enumerate(col_labels):
        x = left + j * cell + cell / 2
        body.append(_text(x, base, c, 10, anchor="end", rotate=-60))
    return _document(width, height, body, title)


def scatter(x, y, xlabel, ylabel, title=""):
    """Point cloud, e.g. input value against its contribution."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ax = _Axes(70, 40, 360, 240, _limits(x), _limits(y))
    body = [_text(250, 22, title or f"{ylabel} vs {xlabel}", 13)]
    body += ax.frame(xlabel, ylabel)
    if ax.ylim[0] < 0 < ax.ylim[1]:
        body.append(f'<line x1="{ax.x0}" y1="{_num(ax.y(0))}" x2="{ax.x0 + ax.w}" y2="{_num(ax.y(0))}" stroke="#bbb" stroke-dasharray="3,3"/>')
    for xi, yi in zip(x, y):
        body.append(f'<circle cx="{_num(ax.x(xi))}" cy="{_num(ax.y(yi))}" r="2.5" fill="{PALETTE[0]}" fill-opacity="0.6"/>')
    return _document(500, 330, body, title or f"{ylabel} vs {xlabel}")


def line_chart(x, series, xlabel, ylabel, title="", bands=None):
    """One polyline per named series; ``bands`` maps names to +/- half widths."""
    x = np.asarray(x, dtype=float)
    bands = bands or {}
    values = [np.asarray(v, dtype=float) for v in series.values()]
    values += [np.asarray(series[k]) + np.asarray(b) for k, b in bands.items()]
    values += [np.asarray(series[k]) - np.asarray(b) for k, b in bands.items()]
    lo, hi = _limits(np.concatenate(values) if values else [0.0])
    ax = _Axes(70, 40, 360, 240, _limits(x, 0.0), (min(lo, 0.0), hi))
    body = [_text(270, 22, title, 13)]
    body += ax.frame(xlabel, ylabel)
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        ys = np.asarray(ys, dtype=float)
        if name in bands:
            b = np.asarray(bands[name], dtype=float)
            upper = [f"{_num(ax.x(a))},{_num(ax.y(v))}" for a, v in zip(x, ys + b)]
            lower = [f"{_num(ax.x(a))},{_num(ax.y(v))}" for a, v in zip(x[::-1], (ys - b)[::-1])]
            body.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{_num(ax.x(a))},{_num(ax.y(v))}" for a, v in zip(x, ys))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"><title>{escape(name)}</title></polyline>')
        body.append(f'<rect x="450" y="{50 + 18 * k}" width="12" height="12" fill="{color}"/>')
        body.append(_text(468, 60 + 18 * k, name, 11, anchor="start"))
    return _document(560, 330, body, title)


def write(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document)
    return path
