"""Plot-ready series and a minimal SVG bar chart for bin tables."""
from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from typing import Any
from xml.sax.saxutils import escape

SERIES_HEADER = ("label", "replicated", "failed")


def series_from_bins(bin_table: Mapping[str, Any] | None) -> list[dict[str, Any]]:
    """``(label, replicated, failed)`` rows from a serialized bin table; empty for a missing table."""
    if not bin_table:
        return []
    return [{"label": b["label"], "replicated": int(b["replicated"]), "failed": int(b["failed"])}
            for b in bin_table.get("bins", [])]


def series_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SERIES_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in SERIES_HEADER})
    return buf.getvalue()


def series_svg(rows: Sequence[Mapping[str, Any]], title: str = "") -> str:
    """Stacked bars, replicated (green) under failed (purple), one bar per bin."""
    bar, gap, height, top, bottom, left = 48, 16, 220, 30, 60, 40
    width = left + max(len(rows), 1) * (bar + gap) + gap
    peak = max([r["replicated"] + r["failed"] for r in rows] + [1])
    scale = height / peak
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{top + height + bottom}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + height}" x2="{width - gap}" y2="{top + height}" stroke="black"/>',
    ]
    for i, r in enumerate(rows):
        x = left + gap + i * (bar + gap)
        h_rep = r["replicated"] * scale
        h_fail = r["failed"] * scale
        y_rep = top + height - h_rep
        y_fail = y_rep - h_fail
        out.append(f'<rect x="{x}" y="{y_rep:.1f}" width="{bar}" height="{h_rep:.1f}" fill="#2e8b57"/>')
        out.append(f'<rect x="{x}" y="{y_fail:.1f}" width="{bar}" height="{h_fail:.1f}" fill="#7b4fa0"/>')
        total = r["replicated"] + r["failed"]
        out.append(f'<text x="{x + bar / 2}" y="{y_fail - 4:.1f}" text-anchor="middle">{r["replicated"]}/{total}</text>')
        out.append(f'<text x="{x + bar / 2}" y="{top + height + 16}" text-anchor="middle">{escape(str(r["label"]))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
