"""Cross-run comparison: ranking table and training-cost efficiency curves.

Cost per iteration is the number of backward passes, i.e. pgd_steps + 1
for adversarial defenses and 1 for plain training. Curves are written as
standalone SVG so reports have no plotting dependencies.
"""

from __future__ import annotations

import os

from .train import RunRecord

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf")

ERS_SVG = "cost_vs_ers.svg"
R1_SVG = "cost_vs_r1.svg"
TABLE_FILE = "comparison.txt"


def _run_points(records: list[RunRecord]):
    """(label, cost, ers, r_at_1, status, eta) per record; metrics are None
    for runs that did not finish."""
    points = []
    for rec in records:
        eta = rec.config.get("pgd_steps")
        ers = r1 = None
        if rec.final_report is not None:
            ers = rec.final_report["ers"]
            r1 = rec.final_report["r_at_1"]
        points.append({"label": rec.label, "cost": rec.cost_per_iteration,
                       "eta": eta, "ers": ers, "r_at_1": r1, "status": rec.status,
                       "seed": rec.config.get("seed")})
    return points


def comparison_table(records: list[RunRecord]) -> str:
    """Plain-text ranking, best aggregate robustness first; unfinished runs
    sink to the bottom with their status."""
    points = _run_points(records)
    points.sort(key=lambda p: (p["ers"] is None, -(p["ers"] or 0.0)))
    header = f"{'defense':<34} {'eta':>4} {'cost':>5} {'seed':>5} {'R@1':>7} {'ERS':>7}  status"
    lines = [header, "-" * len(header)]
    for p in points:
        r1 = f"{p['r_at_1']:.1f}" if p["r_at_1"] is not None else "-"
        ers = f"{p['ers']:.1f}" if p["ers"] is not None else "-"
        lines.append(f"{p['label']:<34} {p['eta']:>4} {p['cost']:>5} {p['seed']:>5} "
                     f"{r1:>7} {ers:>7}  {p['status']}")
    return "\n".join(lines)


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def svg_line_chart(series: dict[str, list[tuple[float, float]]], title: str,
                   xlabel: str, ylabel: str) -> str:
    """Minimal multi-series line chart; deterministic output text."""
    width, height, margin = 640, 420, 60
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0

    def px(x: float) -> float:
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y: float) -> float:
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {height / 2:.1f})">{ylabel}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(tx):.1f}" y1="{height - margin}" x2="{px(tx):.1f}" '
                     f'y2="{margin}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{px(tx):.1f}" y="{height - margin + 18}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{margin}" y1="{py(ty):.1f}" x2="{width - margin}" '
                     f'y2="{py(ty):.1f}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{margin - 8}" y="{py(ty):.1f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif" dy="4">{ty:g}</text>')
    parts.append(f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
                 f'height="{height - 2 * margin}" fill="none" stroke="#333333"/>')

    for i, label in enumerate(sorted(series)):
        pts = sorted(series[label])
        color = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3.5" fill="{color}"/>')
        parts.append(f'<text x="{width - margin - 4}" y="{margin + 16 + 16 * i}" '
                     f'text-anchor="end" font-size="12" font-family="sans-serif" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _curve_series(records: list[RunRecord], metric: str) -> dict:
    series: dict[str, list[tuple[float, float]]] = {}
    for p in _run_points(records):
        if p[metric] is None:
            continue
        series.setdefault(p["label"], []).append((float(p["cost"]), float(p[metric])))
    return series


def write_report(records: list[RunRecord], out_dir: str) -> dict:
    """Emit the comparison table and both efficiency curves; returns the
    table text and the generated file paths."""
    if not records:
        raise ValueError("no run records to report on")
    os.makedirs(out_dir, exist_ok=True)
    table = comparison_table(records)
    table_path = os.path.join(out_dir, TABLE_FILE)
    with open(table_path, "w") as fh:
        fh.write(table + "\n")
    paths = [table_path]
    for metric, fname, ylabel in (("ers", ERS_SVG, "ERS (aggregate robustness)"),
                                  ("r_at_1", R1_SVG, "benign R@1 (%)")):
        svg = svg_line_chart(_curve_series(records, metric),
                             title=f"training cost vs {ylabel}",
                             xlabel="backward passes per iteration (pgd steps + 1)",
                             ylabel=ylabel)
        path = os.path.join(out_dir, fname)
        with open(path, "w") as fh:
            fh.write(svg)
        paths.append(path)
    return {"table": table, "paths": paths}
