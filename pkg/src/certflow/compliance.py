"""Objective catalog, subset selection and compliance matrices.

Catalog files are CSV with the columns in :data:`CATALOG_COLUMNS`.  Scores
are ``low``/``medium``/``high`` (or 1/2/3).  An objective is selected when
importance + automation + reuse reaches the threshold; objectives that apply
to every level A-D count as high importance regardless of the stored score.
An explicit ``include``/``exclude`` override beats the score rule.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from certflow._fs import atomic_write
from certflow.errors import CatalogError
from certflow.reports import render_csv, render_html

CATALOG_COLUMNS = (
    "standard", "table", "objective_id", "description",
    "appl_A", "appl_B", "appl_C", "appl_D",
    "importance", "automation", "reuse", "override", "status", "rationale",
)
LEVELS = ("A", "B", "C", "D")
STANDARDS = {"DO-178C": "A", "DO-331": "MB.A"}
TABLE_NUMBERS = range(1, 11)
STATUSES = ("Full", "Partial", "NA")
DEFAULT_THRESHOLD = 6

LOW, MEDIUM, HIGH = 1, 2, 3
_SCORES = {"low": LOW, "medium": MEDIUM, "high": HIGH, "1": LOW, "2": MEDIUM, "3": HIGH}
_SCORE_NAMES = {LOW: "low", MEDIUM: "medium", HIGH: "high"}
_TRUE = {"yes", "y", "true", "1", "x"}
_FALSE = {"no", "n", "false", "0", ""}


@dataclass(frozen=True)
class Objective:
    objective_id: str
    table: str
    description: str
    applicability: Mapping[str, bool]
    importance: int
    automation: int
    reuse: int
    override: str | None = None
    status: str | None = None
    rationale: str = ""
    selected: bool = False

    @property
    def all_levels(self) -> bool:
        return all(self.applicability.get(level, False) for level in LEVELS)

    @property
    def effective_importance(self) -> int:
        return HIGH if self.all_levels else self.importance

    @property
    def score(self) -> int:
        return self.effective_importance + self.automation + self.reuse


@dataclass(frozen=True)
class ObjectiveCatalog:
    standard: str
    objectives: list[Objective]
    tables: list[str] = field(default_factory=list)

    def get(self, objective_id: str) -> Objective:
        for obj in self.objectives:
            if obj.objective_id == objective_id:
                return obj
        raise CatalogError(f"unknown objective: {objective_id}")

    def selected_ids(self) -> set[str]:
        return {o.objective_id for o in self.objectives if o.selected}


def table_ids(standard: str) -> list[str]:
    return [f"{STANDARDS[standard]}-{n}" for n in TABLE_NUMBERS]


def _score(value: str, column: str, where: str) -> int:
    try:
        return _SCORES[value.strip().lower()]
    except KeyError:
        raise CatalogError(f"{where}: {column} must be low, medium or high, got {value!r}") from None


def _flag(value: str, column: str, where: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise CatalogError(f"{where}: {column} must be yes or no, got {value!r}")


def _status(value: str, where: str) -> str | None:
    v = value.strip()
    if not v:
        return None
    if v in ("N/A", "n/a"):
        return "NA"
    for status in STATUSES:
        if v.lower() == status.lower():
            return status
    raise CatalogError(f"{where}: status must be one of Full, Partial, NA, got {value!r}")


def parse_catalog(text: str, source: str = "<catalog>") -> ObjectiveCatalog:
    reader = csv.reader(io.StringIO(text))
    rows = [(i, row) for i, row in enumerate(reader, 1) if any(cell.strip() for cell in row)]
    if not rows:
        raise CatalogError(f"{source}: no tables (empty catalog)")
    header = [h.strip() for h in rows[0][1]]
    if tuple(header) != CATALOG_COLUMNS:
        raise CatalogError(f"{source}:{rows[0][0]}: header must be {','.join(CATALOG_COLUMNS)}")
    if len(rows) == 1:
        raise CatalogError(f"{source}: no tables (catalog has no objectives)")
    standard = None
    objectives: list[Objective] = []
    seen: set[str] = set()
    for lineno, row in rows[1:]:
        where = f"{source}:{lineno}"
        if len(row) != len(CATALOG_COLUMNS):
            raise CatalogError(f"{where}: expected {len(CATALOG_COLUMNS)} columns, got {len(row)}")
        rec = dict(zip(CATALOG_COLUMNS, (c.strip() for c in row)))
        if rec["standard"] not in STANDARDS:
            raise CatalogError(f"{where}: unknown standard {rec['standard']!r}")
        if standard is None:
            standard = rec["standard"]
        elif rec["standard"] != standard:
            raise CatalogError(f"{where}: mixed standards {standard} and {rec['standard']} in one catalog")
        if rec["table"] not in table_ids(standard):
            raise CatalogError(f"{where}: unknown table {rec['table']!r} for {standard}")
        oid = rec["objective_id"]
        if not re.match(rf"^{re.escape(rec['table'])}\.\d+[a-z]?$", oid):
            raise CatalogError(f"{where}: objective id {oid!r} does not belong to table {rec['table']}")
        if oid in seen:
            raise CatalogError(f"{where}: duplicate objective id {oid}")
        seen.add(oid)
        override = rec["override"].lower() or None
        if override not in (None, "include", "exclude"):
            raise CatalogError(f"{where}: override must be include, exclude or empty, got {rec['override']!r}")
        status = _status(rec["status"], where)
        if status in ("Partial", "NA") and not rec["rationale"]:
            raise CatalogError(f"{where}: status {status} needs a rationale")
        objectives.append(
            Objective(
                objective_id=oid,
                table=rec["table"],
                description=rec["description"],
                applicability={lvl: _flag(rec[f"appl_{lvl}"], f"appl_{lvl}", where) for lvl in LEVELS},
                importance=_score(rec["importance"], "importance", where),
                automation=_score(rec["automation"], "automation", where),
                reuse=_score(rec["reuse"], "reuse", where),
                override=override,
                status=status,
                rationale=rec["rationale"],
            )
        )
    assert standard is not None
    present = {o.table for o in objectives}
    return ObjectiveCatalog(standard, objectives, [t for t in table_ids(standard) if t in present])


def load_catalog(path: str | Path) -> ObjectiveCatalog:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CatalogError(f"catalog not found: {path}") from None
    return parse_catalog(text, source=str(path))


def render_catalog(catalog: ObjectiveCatalog) -> str:
    def yn(flag: bool) -> str:
        return "yes" if flag else "no"

    rows = [
        [
            catalog.standard, o.table, o.objective_id, o.description,
            *(yn(o.applicability.get(lvl, False)) for lvl in LEVELS),
            _SCORE_NAMES[o.importance], _SCORE_NAMES[o.automation], _SCORE_NAMES[o.reuse],
            o.override or "", o.status or "", o.rationale,
        ]
        for o in catalog.objectives
    ]
    return render_csv(CATALOG_COLUMNS, rows)


def save_catalog(catalog: ObjectiveCatalog, path: str | Path) -> None:
    atomic_write(Path(path), render_catalog(catalog))


def select_subset(catalog: ObjectiveCatalog, threshold: int = DEFAULT_THRESHOLD) -> ObjectiveCatalog:
    if not 3 <= threshold <= 9:
        raise CatalogError(f"threshold must be within 3..9, got {threshold}")
    chosen = []
    for obj in catalog.objectives:
        if obj.override == "include":
            selected = True
        elif obj.override == "exclude":
            selected = False
        else:
            selected = obj.score >= threshold
        chosen.append(replace(obj, selected=selected))
    return replace(catalog, objectives=chosen)


def set_status(catalog: ObjectiveCatalog, objective_id: str, status: str, rationale: str = "") -> tuple[ObjectiveCatalog, Objective]:
    """Return the updated catalog and objective; persist with :func:`save_catalog`."""
    norm = _status(status, "status")
    if norm is None:
        raise CatalogError("status must be one of Full, Partial, NA")
    rationale = rationale.strip()
    if norm in ("Partial", "NA") and not rationale:
        raise CatalogError(f"status {norm} needs a rationale")
    obj = replace(catalog.get(objective_id), status=norm, rationale=rationale)
    objectives = [obj if o.objective_id == objective_id else o for o in catalog.objectives]
    return replace(catalog, objectives=objectives), obj


@dataclass(frozen=True)
class TableSummary:
    table: str
    applicable: int
    selected: int
    full: int
    partial: int
    na: int
    open: int
    unselected: int


MATRIX_COLUMNS = ("table", "applicable", "selected", "full", "partial", "na", "open", "unselected")


def matrix_report(catalog: ObjectiveCatalog, level: str) -> list[TableSummary]:
    """Per-table counts over the objectives applicable at ``level``.

    ``open`` counts selected objectives that have no status yet, so that
    full + partial + na + open == selected.
    """
    if level not in LEVELS:
        raise CatalogError(f"software level must be one of {', '.join(LEVELS)}, got {level!r}")
    out = []
    for table in catalog.tables:
        objs = [o for o in catalog.objectives if o.table == table and o.applicability.get(level)]
        sel = [o for o in objs if o.selected]
        out.append(
            TableSummary(
                table=table,
                applicable=len(objs),
                selected=len(sel),
                full=sum(o.status == "Full" for o in sel),
                partial=sum(o.status == "Partial" for o in sel),
                na=sum(o.status == "NA" for o in sel),
                open=sum(o.status is None for o in sel),
                unselected=len(objs) - len(sel),
            )
        )
    return out


def _matrix_rows(summary: list[TableSummary]) -> list[list[object]]:
    return [[getattr(s, col) for col in MATRIX_COLUMNS] for s in summary]


def matrix_csv(summary: list[TableSummary]) -> str:
    return render_csv(MATRIX_COLUMNS, _matrix_rows(summary))


def matrix_html(catalog: ObjectiveCatalog, level: str, summary: list[TableSummary]) -> str:
    totals = {col: sum(getattr(s, col) for s in summary) for col in MATRIX_COLUMNS[1:]}
    detail = [
        [o.objective_id, o.description, o.score, "yes" if o.selected else "no", o.status or "", o.rationale]
        for o in catalog.objectives
        if o.applicability.get(level)
    ]
    page = render_html(
        f"{catalog.standard} compliance summary, level {level}",
        MATRIX_COLUMNS,
        _matrix_rows(summary),
        summary=totals,
    )
    body = render_html(
        "Objectives",
        ("objective", "description", "score", "selected", "status", "rationale"),
        detail,
        row_classes=[str(row[4]) for row in detail],
    )
    # splice the objective table into the summary page
    tail = body.split("<body>\n", 1)[1].replace("<h1>", "<h2>").replace("</h1>", "</h2>")
    return page.replace("</body>\n</html>\n", tail)


def report_basename(standard: str, level: str) -> str:
    return f"compliance_{standard}_{level}"
