"""Self-contained SVG charts: rate curves over training and quartered answer
distributions. Coordinates are written with two decimals so output is byte-stable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from smm.errors import InputError
from smm.model import VOCAB_SIZE

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")

FIG1A = "fig1a_accuracy.svg"
FIG1B = "fig1b_usage.svg"
FIG2 = "fig2_quarters.svg"


@dataclass(frozen=True)
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float | None]  # None marks a window without data


@dataclass(frozen=True)
class _Frame:
    left: float
    top: float
    width: float
    height: float
    x0: float
    x1: float
    y0: float
    y1: float

    def px(self, x: float) -> float:
        span = (self.x1 - self.x0) or 1.0
        return self.left + (x - self.x0) / span * self.width

    def py(self, y: float) -> float:
        span = (self.y1 - self.y0) or 1.0
        return self.top + self.height - (y - self.y0) / span * self.height


def _f(v: float) -> str:
    return f"{v:.2f}"


def _text(x: float, y: float, s: str, size: int = 11, anchor: str = "middle", extra: str = "") -> str:
    return (f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}"{extra}>{escape(s)}</text>')


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw - 1e-12)
    k0, k1 = math.ceil(lo / step - 1e-9), math.floor(hi / step + 1e-9)
    return [round(k * step, 10) + 0.0 for k in range(k0, k1 + 1)]


def _tick_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def _axes(fr: _Frame, x_label: str, y_label: str, x_ticks, y_ticks) -> list[str]:
    out = [f'<rect x="{_f(fr.left)}" y="{_f(fr.top)}" width="{_f(fr.width)}" '
           f'height="{_f(fr.height)}" fill="none" stroke="#000" stroke-width="1"/>']
    for t in x_ticks:
        x = fr.px(t)
        out.append(f'<line x1="{_f(x)}" y1="{_f(fr.top + fr.height)}" x2="{_f(x)}" '
                   f'y2="{_f(fr.top + fr.height + 4)}" stroke="#000"/>')
        out.append(_text(x, fr.top + fr.height + 16, _tick_label(t), 10))
    for t in y_ticks:
        y = fr.py(t)
        out.append(f'<line x1="{_f(fr.left - 4)}" y1="{_f(y)}" x2="{_f(fr.left)}" y2="{_f(y)}" '
                   f'stroke="#000"/>')
        out.append(f'<line x1="{_f(fr.left)}" y1="{_f(y)}" x2="{_f(fr.left + fr.width)}" '
                   f'y2="{_f(y)}" stroke="#ddd" stroke-width="0.5"/>')
        out.append(_text(fr.left - 7, y + 3.5, _tick_label(t), 10, "end"))
    out.append(_text(fr.left + fr.width / 2, fr.top + fr.height + 34, x_label, 12))
    cx, cy = fr.left - 38, fr.top + fr.height / 2
    out.append(_text(cx, cy, y_label, 12, extra=f' transform="rotate(-90 {_f(cx)} {_f(cy)})"'))
    return out


def _polyline(fr: _Frame, xs, ys, color: str, width: float = 1.5, opacity: float = 1.0) -> str:
    pts = " ".join(f"{_f(fr.px(x))},{_f(fr.py(y))}" for x, y in zip(xs, ys) if y is not None)
    op = "" if opacity == 1.0 else f' stroke-opacity="{opacity:.2f}"'
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}"{op}/>')


def _document(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    bg = f'<rect x="0" y="0" width="{width}" height="{height}" fill="#fff"/>'
    return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', head, bg, *body, "</svg>"]) + "\n"


def _write(doc: str, path: str | Path | None) -> str:
    if path is not None:
        Path(path).write_text(doc, encoding="utf-8")
    return doc


def render_line_chart(series: Sequence[Series], title: str, x_label: str, y_label: str,
                      path: str | Path | None = None,
                      y_range: tuple[float, float] = (0.0, 1.0)) -> str:
    """One polyline per series on fixed y-limits, with axes, ticks and a legend."""
    if not series:
        raise InputError("line chart needs at least one series")
    for s in series:
        if len(s.xs) != len(s.ys):
            raise InputError(f"series {s.label!r}: {len(s.xs)} x values but {len(s.ys)} y values")
        if sum(y is not None for y in s.ys) < 2:
            raise InputError(f"series {s.label!r} needs at least 2 points")
    xs = [x for s in series for x, y in zip(s.xs, s.ys) if y is not None]
    width, height = 640, 400
    fr = _Frame(70, 40, 420, 300, min(xs), max(xs), *y_range)
    body = [_text(width / 2, 22, title, 14)]
    body += _axes(fr, x_label, y_label, _nice_ticks(fr.x0, fr.x1), _nice_ticks(fr.y0, fr.y1, 4))
    for i, s in enumerate(series):
        body.append(_polyline(fr, s.xs, s.ys, PALETTE[i % len(PALETTE)]))
    lx, ly = fr.left + fr.width + 18, fr.top + 8
    for i, s in enumerate(series):
        y = ly + 18 * i
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<line x1="{_f(lx)}" y1="{_f(y)}" x2="{_f(lx + 20)}" y2="{_f(y)}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(_text(lx + 26, y + 4, s.label, 11, "start"))
    return _write(_document(width, height, body), path)


def quarter_of(step: int, total_steps: int) -> int:
    """Quarter 0..3 of the run's step range containing ``step``."""
    return min(3, max(0, step * 4 // total_steps))


def render_distribution_quarters(snapshots: Sequence, total_steps: int, probe: str,
                                 path: str | Path | None = None) -> str:
    """Four panels (by step range), each overlaying that quarter's answer distributions."""
    if len(snapshots) < 4:
        raise InputError(f"need at least 4 snapshots of {probe}, got {len(snapshots)}")
    if total_steps < 4:
        raise InputError(f"total_steps must be >= 4, got {total_steps}")
    quarters: list[list] = [[], [], [], []]
    for snap in snapshots:
        quarters[quarter_of(snap.step, total_steps)].append(snap)
    width, height = 900, 300
    answers = list(range(1, VOCAB_SIZE + 1))
    body = [_text(width / 2, 22, f"Answer distributions for {probe}", 14)]
    names = ("early", "early-middle", "late-middle", "late")
    for q, snaps in enumerate(quarters):
        fr = _Frame(60 + q * 210, 50, 170, 180, 1, VOCAB_SIZE, 0.0, 1.0)
        lo, hi = q * total_steps // 4, (q + 1) * total_steps // 4
        body.append(_text(fr.left + fr.width / 2, 42, f"{names[q]}: steps {lo}-{hi} (n={len(snaps)})", 10))
        body += _axes(fr, "answer", "probability" if q == 0 else "", answers, _nice_ticks(0, 1, 4))
        n = len(snaps)
        for i, snap in enumerate(snaps):
            # later snapshots drawn darker
            opacity = 0.25 + 0.75 * (i + 1) / n
            body.append(_polyline(fr, answers, [float(p) for p in snap.probs], PALETTE[q], 1.0, opacity))
    return _write(_document(width, height, body), path)
