"""Minimal dependency-free SVG trajectory plots.

Hand-rolled rather than driven by a plotting library so emitted files are
byte-deterministic across machines.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 420
_MARGIN = 55


def _scale(vals, lo, hi, out_lo, out_hi):
    if hi == lo:
        hi = lo + 1.0
    return out_lo + (np.asarray(vals, dtype=float) - lo) * (out_hi - out_lo) / (hi - lo)


def trajectory_svg(times, curves: dict, path, xlabel="time", ylabel="mean outcome"):
    """Write polyline trajectories over a shared time axis to an SVG file.

    ``curves`` maps label -> value sequence aligned with ``times``.
    """
    times = np.asarray(times, dtype=float)
    all_vals = np.concatenate([np.asarray(v, dtype=float) for v in curves.values()])
    ylo, yhi = float(all_vals.min()), float(all_vals.max())
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    xs = _scale(times, times[0], times[-1], _MARGIN, _W - _MARGIN)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
    ]
    for t, x in zip(times, xs):
        parts.append(
            f'<line x1="{x:.1f}" y1="{_H - _MARGIN}" x2="{x:.1f}" '
            f'y2="{_H - _MARGIN + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_H - _MARGIN + 18}" font-size="11" '
            f'text-anchor="middle">{t:g}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        yv = ylo + frac * (yhi - ylo)
        ypix = _H - _MARGIN - frac * (_H - 2 * _MARGIN)
        parts.append(
            f'<text x="{_MARGIN - 8}" y="{ypix:.1f}" font-size="11" '
            f'text-anchor="end">{yv:.1f}</text>'
        )
    parts.append(
        f'<text x="{_W / 2:.0f}" y="{_H - 12}" font-size="12" '
        f'text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="14" y="{_H / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {_H / 2:.0f})">{ylabel}</text>'
    )
    for i, (label, vals) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        ys = [
            _H - _MARGIN - float(p)
            for p in _scale(vals, ylo, yhi, 0, _H - 2 * _MARGIN)
        ]
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        leg_y = _MARGIN + 16 * i
        parts.append(
            f'<line x1="{_W - _MARGIN - 150}" y1="{leg_y}" '
            f'x2="{_W - _MARGIN - 125}" y2="{leg_y}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_W - _MARGIN - 118}" y="{leg_y + 4}" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def scenario_trajectory_svg(scenario_meta: dict, path):
    """Plot the generating mean trajectories of a simulated-trial scenario."""
    if scenario_meta.get("family") != "cs1":
        raise ContractError("trajectory plots are available for cs1 scenarios only")
    from .simulation import CS1_PLACEBO_MEANS, cs1_active_means

    times = scenario_meta["schedule"]
    curves = {
        "placebo": CS1_PLACEBO_MEANS,
        f"active ({scenario_meta['effect']})": cs1_active_means(scenario_meta["effect"]),
    }
    return trajectory_svg(times, curves, path, xlabel="months since baseline")
