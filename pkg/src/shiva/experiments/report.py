"""Run reports (JSON), flat CSV series and a tiny SVG plotter.

``report.json`` schema (``schema_version`` 1)::

    {"schema": "shiva-run-report", "schema_version": 1, "command": str,
     "config": {...}, "summary": {...}, "series": {column: [values...]},
     "wall_clock_s": float}

CSV files are the source of truth for plots.  They never contain timing
data, so identical config and seed give byte-identical CSVs.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = "shiva-run-report"
SCHEMA_VERSION = 1


@dataclass
class RunReport:
    command: str
    config: dict
    series: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    extra_csv: dict = field(default_factory=dict, repr=False)  # filename -> csv text
    svg: str | None = field(default=None, repr=False)
    artifacts: dict = field(default_factory=dict, repr=False)  # in-memory objects, never written

    def to_json(self) -> str:
        return json.dumps({
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "summary": self.summary,
            "series": self.series,
            "wall_clock_s": self.wall_clock_s,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        blob = json.loads(text)
        if blob.get("schema") != SCHEMA or blob.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("not a version-1 shiva run report")
        return cls(blob["command"], blob["config"], blob["series"], blob["summary"],
                   blob["wall_clock_s"])

    def series_csv(self) -> str:
        return series_to_csv(self.series)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "series.csv").write_text(self.series_csv())
        for name, text in self.extra_csv.items():
            (out / name).write_text(text)
        if self.svg:
            (out / "plot.svg").write_text(self.svg)
        return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def series_to_csv(series: dict) -> str:
    cols = list(series)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    n = len(series[cols[0]]) if cols else 0
    for i in range(n):
        writer.writerow([_fmt(series[c][i]) for c in cols])
    return buf.getvalue()


def config_dict(config) -> dict:
    return dataclasses.asdict(config)


# --- SVG ---------------------------------------------------------------

_W, _H, _PAD = 640, 360, 48
_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"]


def _scale(vals, lo_px, hi_px):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        hi = lo + 1.0
    return lambda v: lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px), lo, hi


def _frame(title, lines):
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2}" y="20" text-anchor="middle">{title}</text>',
            f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>']
    return "\n".join(head + lines + ["</svg>"]) + "\n"


def line_plot_svg(x, ys: dict, title: str = "") -> str:
    """One polyline per entry of ``ys``, each scaled to its own y-range."""
    sx, xlo, xhi = _scale(list(x), _PAD, _W - _PAD)
    lines = [f'<text x="{_PAD}" y="{_H - _PAD + 16}">{xlo:.4g}</text>',
             f'<text x="{_W - _PAD}" y="{_H - _PAD + 16}" text-anchor="end">{xhi:.4g}</text>']
    for i, (name, y) in enumerate(ys.items()):
        sy, ylo, yhi = _scale(list(y), _H - _PAD, _PAD)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        color = _COLORS[i % len(_COLORS)]
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        lines.append(f'<text x="{_W - _PAD}" y="{_PAD + 14 * i}" text-anchor="end" fill="{color}">'
                     f'{name} [{ylo:.4g}, {yhi:.4g}]</text>')
    return _frame(title, lines)


def histogram_svg(edges, counts, title: str = "") -> str:
    sx, xlo, xhi = _scale(list(edges), _PAD, _W - _PAD)
    top = max(max(counts), 1)
    lines = [f'<text x="{_PAD}" y="{_H - _PAD + 16}">{xlo:.4g}</text>',
             f'<text x="{_W - _PAD}" y="{_H - _PAD + 16}" text-anchor="end">{xhi:.4g}</text>',
             f'<text x="{_PAD - 4}" y="{_PAD}" text-anchor="end">{top}</text>']
    span = _H - 2 * _PAD
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        h = span * c / top
        lines.append(f'<rect x="{sx(lo):.2f}" y="{_H - _PAD - h:.2f}" width="{sx(hi) - sx(lo):.2f}" '
                     f'height="{h:.2f}" fill="{_COLORS[0]}" stroke="white"/>')
    return _frame(title, lines)
