"""Deterministic CSV/HTML rendering shared by trace, status and compliance reports.

Reports carry no timestamps so that identical project state renders to
identical bytes.
"""

from __future__ import annotations

import csv
import html
import io
from typing import Iterable, Mapping, Sequence


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def render_html(
    title: str,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    summary: Mapping[str, object] | None = None,
    subtitle: str | None = None,
    row_classes: Sequence[str] | None = None,
) -> str:
    esc = html.escape
    out = [
        "<!DOCTYPE html>",
        '<html lang="en">',
        "<head>",
        '<meta charset="utf-8">',
        f"<title>{esc(title)}</title>",
        "<style>",
        "body{font-family:sans-serif;margin:2em}",
        "table{border-collapse:collapse}",
        "td,th{border:1px solid #999;padding:2px 8px;text-align:left}",
        ".covered,.valid,.Full,.pass,.equivalent{background:#d4f4d4}",
        ".justified,.Partial{background:#f4ecc4}",
        ".uncovered,.outdated,.missing,.fail,.divergent{background:#f4d0d0}",
        "</style>",
        "</head>",
        "<body>",
        f"<h1>{esc(title)}</h1>",
    ]
    if subtitle:
        out.append(f"<p>{esc(subtitle)}</p>")
    if summary:
        out.append('<table class="summary">')
        out += [f"<tr><th>{esc(str(k))}</th><td>{esc(str(v))}</td></tr>" for k, v in summary.items()]
        out.append("</table>")
        out.append("<p></p>")
    out.append('<table class="report">')
    out.append("<tr>" + "".join(f"<th>{esc(str(h))}</th>" for h in header) + "</tr>")
    for i, row in enumerate(rows):
        cls = f' class="{esc(row_classes[i])}"' if row_classes else ""
        out.append(f"<tr{cls}>" + "".join(f"<td>{esc(str(c))}</td>" for c in row) + "</tr>")
    out += ["</table>", "</body>", "</html>"]
    return "\n".join(out) + "\n"
