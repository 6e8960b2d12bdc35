"""Static SVG and text reports built from sweep results.

No plotting library: the SVG is assembled by hand so reports can be
generated anywhere the CSV is available.
"""

from __future__ import annotations

import csv
import io
import math
from xml.sax.saxutils import escape

from .bounds import ClusterSpec, cpu_bound, ideal_bound, network_bound, normalize_across
from .sweep import CellResult, GridMismatch

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf")
CELL_W, CELL_H = 96, 40
MARGIN_L, MARGIN_T = 110, 50


def _axes(results: list[CellResult]) -> tuple[list[int], list[int]]:
    sizes = sorted({r.point.message_size_bytes for r in results})
    costs = sorted({r.point.cpu_cost_us for r in results})
    return sizes, costs


def fmt_size(n: int) -> str:
    for unit, scale in (("MB", 10**6), ("KB", 10**3)):
        if n >= scale and n % (scale // 10) == 0:
            return f"{n / scale:g} {unit}"
    return f"{n} B"


def fmt_cost(us: int) -> str:
    return "0" if us == 0 else f"{us / 1e6:g} s"


def fmt_hz(hz: float) -> str:
    if math.isinf(hz):
        return "inf"
    for unit, scale in (("MHz", 1e6), ("kHz", 1e3)):
        if hz >= scale:
            return f"{hz / scale:.3g} {unit}"
    return f"{hz:.3g} Hz"


def heat_color(frac: float) -> str:
    """White at 0, dark blue at 1 (clamped)."""
    t = min(1.0, max(0.0, frac))
    r = int(round(255 - t * (255 - 8)))
    g = int(round(255 - t * (255 - 48)))
    b = int(round(255 - t * (255 - 107)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _index(results: list[CellResult]) -> dict[tuple[int, int], CellResult]:
    # latest row wins when a cell was repeated
    return {(r.point.message_size_bytes, r.point.cpu_cost_us): r for r in results}


def best_per_cell(result_sets: dict[str, list[CellResult]]) -> dict[tuple[int, int], tuple[str, int]]:
    """Winning adapter and rate per cell; ties go to the earlier adapter."""
    indexed = {name: _index(rs) for name, rs in result_sets.items()}
    grids = {name: set(idx) for name, idx in indexed.items()}
    first = next(iter(grids.values()))
    for name, g in grids.items():
        if g != first:
            raise GridMismatch(f"result set {name!r} covers a different grid")
    best = {}
    for cell in first:
        winner = None
        for name, idx in indexed.items():
            hz = idx[cell].max_hz
            if winner is None or hz > winner[1]:
                winner = (name, hz)
        best[cell] = winner
    return best


def emit_regime_map(result_sets: dict[str, list[CellResult]]) -> tuple[str, str]:
    """Grid of best rate per cell, coloured by the winning adapter.

    A single result set is coloured by utilisation of the ideal bound
    instead. Returns (svg, text table).
    """
    if not result_sets:
        raise ValueError("no result sets")
    best = best_per_cell(result_sets)
    names = list(result_sets)
    sizes, costs = _axes(next(iter(result_sets.values())))
    single = len(names) == 1
    util = _index(result_sets[names[0]])
    colors = {n: PALETTE[i % len(PALETTE)] for i, n in enumerate(names)}

    width = MARGIN_L + CELL_W * len(sizes) + 20
    height = MARGIN_T + CELL_H * len(costs) + 60 + 18 * (0 if single else len(names))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<text x="{MARGIN_L}" y="20" font-size="14">Maximum sustained frequency '
        f'({"utilization of ideal bound" if single else "best framework per cell"})</text>',
    ]
    # highest CPU cost on top
    for row, cost in enumerate(reversed(costs)):
        y = MARGIN_T + row * CELL_H
        out.append(f'<text x="{MARGIN_L - 8}" y="{y + CELL_H / 2 + 4}" text-anchor="end">{escape(fmt_cost(cost))}</text>')
        for col, size in enumerate(sizes):
            x = MARGIN_L + col * CELL_W
            name, hz = best[(size, cost)]
            fill = heat_color(util[(size, cost)].utilization) if single else colors[name]
            text_fill = "#000" if single and util[(size, cost)].utilization < 0.6 else "#fff"
            out.append(
                f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#fff" '
                f'data-adapter="{escape(name)}" data-size="{size}" data-cost="{cost}"/>'
            )
            out.append(
                f'<text x="{x + CELL_W / 2}" y="{y + CELL_H / 2 + 4}" text-anchor="middle" '
                f'font-weight="bold" fill="{text_fill}">{hz}</text>'
            )
    y_axis = MARGIN_T + CELL_H * len(costs)
    for col, size in enumerate(sizes):
        out.append(f'<text x="{MARGIN_L + col * CELL_W + CELL_W / 2}" y="{y_axis + 16}" text-anchor="middle">{escape(fmt_size(size))}</text>')
    out.append(f'<text x="{MARGIN_L + CELL_W * len(sizes) / 2}" y="{y_axis + 36}" text-anchor="middle">message size</text>')
    out.append(f'<text x="14" y="{MARGIN_T - 10}">CPU s/msg</text>')
    if not single:
        for i, n in enumerate(names):
            ly = y_axis + 52 + 18 * i
            out.append(f'<rect x="{MARGIN_L}" y="{ly - 10}" width="12" height="12" fill="{colors[n]}"/>')
            out.append(f'<text x="{MARGIN_L + 18}" y="{ly}">{escape(n)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n", _regime_table(result_sets, best, sizes, costs)


def _regime_table(result_sets, best, sizes, costs) -> str:
    lines = []
    header = "cpu \\ size".ljust(12) + "".join(fmt_size(s).rjust(22) for s in sizes)
    lines.append(header)
    for cost in reversed(costs):
        cells = []
        for size in sizes:
            name, hz = best[(size, cost)]
            cells.append((f"{hz} {name}" if len(result_sets) > 1 else str(hz)).rjust(22))
        lines.append(fmt_cost(cost).ljust(12) + "".join(cells))
    if len(result_sets) > 1:
        lines.append("")
        lines.append("fraction of best, per cell:")
        indexed = {n: _index(rs) for n, rs in result_sets.items()}
        for cost in reversed(costs):
            for size in sizes:
                fr = normalize_across({n: idx[(size, cost)].max_hz for n, idx in indexed.items()})
                parts = " ".join(f"{n}={v:.3f}" for n, v in fr.items())
                lines.append(f"  {fmt_size(size)} / {fmt_cost(cost)}: {parts}")
    return "\n".join(lines) + "\n"


def bound_comparison_rows(results: list[CellResult], spec: ClusterSpec) -> list[dict]:
    rows = []
    idx = _index(results)
    sizes, costs = _axes(results)
    for cost in costs:
        for size in sizes:
            r = idx.get((size, cost))
            if r is None:
                raise GridMismatch(f"no result for {fmt_size(size)} / {fmt_cost(cost)}")
            ideal = ideal_bound(r.point, spec)
            rows.append(
                {
                    "adapter": r.adapter,
                    "cpu_cost_us": cost,
                    "message_size_bytes": size,
                    "max_hz": r.max_hz,
                    "bound_network_hz": network_bound(r.point, spec),
                    "bound_cpu_hz": cpu_bound(r.point, spec),
                    "ideal_hz": ideal,
                    "utilization": r.max_hz / ideal,
                }
            )
    return rows


def _log_scale(lo: float, hi: float, a: float, b: float):
    llo, lhi = math.log10(lo), math.log10(hi)
    span = (lhi - llo) or 1.0
    return lambda v: a + (math.log10(v) - llo) / span * (b - a)


def emit_bound_comparison(results: list[CellResult], spec: ClusterSpec) -> tuple[str, str]:
    """Per CPU cost: measured maximum vs size against the network and CPU bounds.

    Returns (svg, csv) where the CSV carries the normalised utilisation.
    """
    rows = bound_comparison_rows(results, spec)
    sizes, costs = _axes(results)

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    pw, ph, gap = 420, 200, 40
    left, top = 70, 30
    finite = [v for r in rows for v in (r["max_hz"], r["bound_network_hz"], r["bound_cpu_hz"]) if v > 0 and not math.isinf(v)]
    lo, hi = (min(finite), max(finite)) if finite else (1.0, 10.0)
    lo, hi = 10 ** math.floor(math.log10(lo)), 10 ** math.ceil(math.log10(hi))
    xs = _log_scale(sizes[0], sizes[-1] if sizes[-1] > sizes[0] else sizes[0] * 10, left, left + pw)
    height = top + len(costs) * (ph + gap) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + pw + 40}" height="{height}" font-family="sans-serif" font-size="11">']
    for i, cost in enumerate(costs):
        y0 = top + i * (ph + gap)
        ys = _log_scale(lo, hi, y0 + ph, y0)
        out.append(f'<text x="{left}" y="{y0 - 8}" font-size="13">CPU cost {escape(fmt_cost(cost))} per message</text>')
        out.append(f'<rect x="{left}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>')
        for dec in range(int(math.log10(lo)), int(math.log10(hi)) + 1):
            yy = ys(10**dec)
            out.append(f'<line x1="{left}" x2="{left + pw}" y1="{yy:.1f}" y2="{yy:.1f}" stroke="#eee"/>')
            out.append(f'<text x="{left - 4}" y="{yy + 4:.1f}" text-anchor="end">{escape(fmt_hz(10**dec))}</text>')
        sub = [r for r in rows if r["cpu_cost_us"] == cost]
        net = " ".join(f"{xs(r['message_size_bytes']):.1f},{ys(r['bound_network_hz']):.1f}" for r in sub)
        out.append(f'<polyline class="bound-network" points="{net}" fill="none" stroke="#d62728" stroke-dasharray="6 3"/>')
        if not math.isinf(sub[0]["bound_cpu_hz"]):
            yy = ys(sub[0]["bound_cpu_hz"])
            out.append(
                f'<line class="bound-cpu" x1="{left}" x2="{left + pw}" y1="{yy:.1f}" y2="{yy:.1f}" stroke="#2ca02c" stroke-dasharray="2 3"/>'
            )
        pts = [(xs(r["message_size_bytes"]), ys(max(r["max_hz"], lo))) for r in sub]
        out.append(
            '<polyline class="measured" points="'
            + " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            + '" fill="none" stroke="#1f77b4" stroke-width="2"/>'
        )
        for (x, y), r in zip(pts, sub):
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="#1f77b4"><title>{r["max_hz"]} Hz, {r["utilization"]:.3f} of bound</title></circle>')
        for s in sizes:
            out.append(f'<text x="{xs(s):.1f}" y="{y0 + ph + 14}" text-anchor="middle">{escape(fmt_size(s))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n", buf.getvalue()
