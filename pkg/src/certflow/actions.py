"""Built-in job actions.

Each action receives an :class:`~certflow.jobs.ActionContext` and returns the
bytes of every declared output.  Report actions pick the format from the
output's suffix (``.csv`` or ``.html``).
"""

from __future__ import annotations

import os
import shlex
import subprocess
from pathlib import PurePosixPath
from typing import Callable, Mapping

from certflow import compliance
from certflow.errors import ActionError
from certflow.jobs import Action, ActionContext
from certflow.lint import lint_requirement
from certflow.reports import render_csv, render_html
from certflow.store import ItemKind, Project
from certflow.testkit.cases import parse_testcase, records_from_xml, records_to_xml, run_mil
from certflow.testkit.compare import compare_runs
from certflow.testkit.model import make_model
from certflow.trace import Direction, ItemFilter, LinkRole, coverage, trace_report_csv, trace_report_html


def _by_suffix(ctx: ActionContext, renderers: Mapping[str, Callable[[], str]]) -> dict[str, str]:
    out = {}
    for path in ctx.job.outputs:
        suffix = PurePosixPath(path).suffix
        if suffix not in renderers:
            raise ActionError(f"job {ctx.job.name}: cannot produce {suffix or 'suffix-less'} output {path}")
        out[path] = renderers[suffix]()
    return out


def _int_param(ctx: ActionContext, name: str) -> int | None:
    raw = ctx.param(name)
    if raw in (None, ""):
        return None
    try:
        return int(raw)
    except ValueError:
        raise ActionError(f"param.{name} must be an integer, got {raw!r}") from None


def copy(ctx: ActionContext) -> dict[str, bytes]:
    """Every output receives the concatenation of all inputs, in input order."""
    data = b"".join(ctx.read(p) for p in ctx.inputs)
    return {out: data for out in ctx.job.outputs}


def exec_command(ctx: ActionContext) -> dict[str, bytes]:
    """Run ``param.cmd``; its stdout becomes the single output."""
    if len(ctx.job.outputs) != 1:
        raise ActionError("exec jobs must declare exactly one output")
    env = dict(os.environ, CERTFLOW_INPUTS="\n".join(ctx.inputs))
    proc = subprocess.run(shlex.split(ctx.require("cmd")), cwd=ctx.root, env=env, capture_output=True)
    if proc.returncode != 0:
        raise ActionError(f"command exited {proc.returncode}: {proc.stderr.decode(errors='replace').strip()}")
    return {ctx.job.outputs[0]: proc.stdout}


def lint_all_requirements(ctx: ActionContext) -> dict[str, str]:
    project = Project(ctx.root)
    rows = []
    for item in project.items(ItemKind.REQUIREMENT):
        result = lint_requirement(item.body or item.title)
        rows.append((str(item.id), result.verdict, "; ".join(result.diagnostics)))
    header = ("id", "verdict", "diagnostics")
    summary = {v: sum(r[1] == v for r in rows) for v in ("conformant", "nonconformant")}
    return _by_suffix(
        ctx,
        {
            ".csv": lambda: render_csv(header, rows),
            ".html": lambda: render_html("Requirement statement lint", header, rows, summary=summary),
        },
    )


def emit_trace_report(ctx: ActionContext) -> dict[str, str]:
    project = Project(ctx.root)
    kind = ctx.param("kind")
    levels = ctx.param("levels")
    item_filter = ItemFilter(
        ItemKind.parse(kind) if kind else None,
        tuple(x.strip() for x in levels.split(",") if x.strip()) if levels else None,
    )
    justify = ctx.param("justify_derived")
    report = coverage(
        project,
        item_filter,
        LinkRole.parse(ctx.require("role")),
        Direction(ctx.param("direction", "outgoing")),
        justify_derived=None if justify is None else justify.lower() in ("1", "true", "yes"),
    )
    return _by_suffix(
        ctx,
        {".csv": lambda: trace_report_csv(report), ".html": lambda: trace_report_html(report)},
    )


def run_testcases_mil(ctx: ActionContext) -> dict[str, str | bytes]:
    """Run every ``.tc`` input against the model; emit record XML and/or a CSV summary."""
    model = make_model(
        ctx.param("model", "amds") or "amds",
        delay_samples=_int_param(ctx, "delay_samples"),
        stuck_channel=_int_param(ctx, "stuck_channel"),
    )
    cases = [parse_testcase(ctx.read(p).decode("utf-8"), source=p) for p in ctx.inputs if p.endswith(".tc")]
    records = [run_mil(model, case) for case in sorted(cases, key=lambda c: c.case_id)]
    rows = [(r.case_id, r.run_id, r.verdict) for r in records]
    out: dict[str, str | bytes] = {}
    for path in ctx.job.outputs:
        if path.endswith(".xml"):
            out[path] = records_to_xml(records)
        elif path.endswith(".csv"):
            out[path] = render_csv(("case_id", "run_id", "verdict"), rows)
        else:
            raise ActionError(f"job {ctx.job.name}: cannot produce {path}")
    return out


COMPARE_COLUMNS = ("case_id", "verdict", "divergences", "first_divergence_ms", "first_signal")


def compare_mil_hil(ctx: ActionContext) -> dict[str, str]:
    """Compare MIL records (first input or param.mil) with HIL records (second input or param.hil)."""
    xml_inputs = [p for p in ctx.inputs if p.endswith(".xml")]
    mil_path = ctx.param("mil") or (xml_inputs[0] if xml_inputs else None)
    hil_path = ctx.param("hil") or (xml_inputs[1] if len(xml_inputs) > 1 else None)
    if not mil_path or not hil_path:
        raise ActionError("compare-mil-hil needs a MIL and a HIL record file")
    tolerance = float(ctx.param("tolerance", "0") or 0)
    mil = {r.case_id: r for r in records_from_xml(ctx.read(mil_path), mil_path)}
    hil = {r.case_id: r for r in records_from_xml(ctx.read(hil_path), hil_path)}
    rows = []
    for case_id in sorted(set(mil) | set(hil)):
        if case_id not in mil or case_id not in hil:
            rows.append((case_id, "missing", "", "", ""))
            continue
        verdict = compare_runs(mil[case_id], hil[case_id], tolerance)
        first = verdict.first
        rows.append(
            (
                case_id,
                "equivalent" if verdict.equivalent else "divergent",
                len(verdict.divergences),
                first.time_ms if first else "",
                first.signal if first else "",
            )
        )
    return _by_suffix(
        ctx,
        {
            ".csv": lambda: render_csv(COMPARE_COLUMNS, rows),
            ".html": lambda: render_html(
                "MIL/HIL equivalence", COMPARE_COLUMNS, rows, row_classes=[str(r[1]) for r in rows]
            ),
        },
    )


def emit_compliance_matrix(ctx: ActionContext) -> dict[str, str]:
    catalogs = [p for p in ctx.inputs if p.endswith(".csv")]
    if len(catalogs) != 1:
        raise ActionError("emit-compliance-matrix needs exactly one catalog .csv input")
    level = ctx.param("level", "C") or "C"
    threshold = _int_param(ctx, "threshold") or compliance.DEFAULT_THRESHOLD
    catalog = compliance.select_subset(
        compliance.parse_catalog(ctx.read(catalogs[0]).decode("utf-8"), catalogs[0]), threshold
    )
    summary = compliance.matrix_report(catalog, level)
    return _by_suffix(
        ctx,
        {
            ".csv": lambda: compliance.matrix_csv(summary),
            ".html": lambda: compliance.matrix_html(catalog, level, summary),
        },
    )


BUILTIN_ACTIONS: dict[str, Action] = {
    "copy": copy,
    "exec": exec_command,
    "lint-all-requirements": lint_all_requirements,
    "emit-trace-report": emit_trace_report,
    "run-testcases-mil": run_testcases_mil,
    "compare-mil-hil": compare_mil_hil,
    "emit-compliance-matrix": emit_compliance_matrix,
}
