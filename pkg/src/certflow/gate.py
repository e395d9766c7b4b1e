"""Merge gate: pass only when tests pass, requirements are verified and artifacts are fresh."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from certflow.errors import IngestError
from certflow.jobs import VALID, JobGraph
from certflow.store import ItemKind, Project
from certflow.testkit.cases import PASS, records_from_xml
from certflow.trace import UNCOVERED, Direction, ItemFilter, LinkRole, coverage


@dataclass
class GateResult:
    failing_runs: list[str] = field(default_factory=list)
    uncovered: list[str] = field(default_factory=list)
    stale: list[str] = field(default_factory=list)
    trace_gate: bool = True
    stale_gate: bool = True

    @property
    def passed(self) -> bool:
        return (
            not self.failing_runs
            and (not self.trace_gate or not self.uncovered)
            and (not self.stale_gate or not self.stale)
        )

    @property
    def reasons(self) -> list[str]:
        out = []
        if self.failing_runs:
            out.append(f"failing runs: {len(self.failing_runs)}")
        if self.trace_gate and self.uncovered:
            out.append(f"uncovered requirements: {len(self.uncovered)}")
        if self.stale_gate and self.stale:
            out.append(f"stale artifacts: {len(self.stale)}")
        return out

    def summary_lines(self) -> list[str]:
        lines = [f"gate: {'pass' if self.passed else 'fail'}"]
        lines.append(f"failing runs: {len(self.failing_runs)}")
        for name in self.failing_runs:
            lines.append(f"  failing run: {name}")
        trace_note = "" if self.trace_gate else " (not enforced)"
        lines.append(f"uncovered requirements: {len(self.uncovered)}{trace_note}")
        for name in self.uncovered:
            lines.append(f"  uncovered: {name}")
        stale_note = "" if self.stale_gate else " (not enforced)"
        lines.append(f"stale artifacts: {len(self.stale)}{stale_note}")
        for name in self.stale:
            lines.append(f"  stale: {name}")
        return lines


def _produced_failures(graph: JobGraph) -> list[str]:
    failing = []
    for job in graph.ordered():
        for out in job.outputs:
            path = graph.root / out
            if not path.exists():
                continue  # reported as stale
            if job.action == "run-testcases-mil" and out.endswith(".xml"):
                for rec in records_from_xml(path.read_bytes(), out):
                    if rec.verdict != PASS:
                        failing.append(f"{rec.run_id} ({rec.verdict}, {out})")
            elif job.action == "compare-mil-hil" and out.endswith(".csv"):
                for row in csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))):
                    if row.get("verdict") != "equivalent":
                        failing.append(f"MIL/HIL {row.get('case_id')} ({row.get('verdict')}, {out})")
    return failing


def evaluate_gate(project: Project, trace_gate: bool = True, stale_gate: bool = True) -> GateResult:
    result = GateResult(trace_gate=trace_gate, stale_gate=stale_gate)
    for item in project.items(ItemKind.TEST_RUN):
        verdict = item.custom_fields.get("verdict")
        if verdict != PASS:
            result.failing_runs.append(f"{item.id} {item.custom_fields.get('run_id', '')} ({verdict})")
    graph = JobGraph.load(project.root)
    try:
        result.failing_runs += _produced_failures(graph)
    except IngestError as exc:
        result.failing_runs.append(f"unreadable test records: {exc}")
    report = coverage(
        project, ItemFilter(ItemKind.REQUIREMENT), LinkRole.VERIFIES, Direction.INCOMING, justify_derived=True
    )
    result.uncovered = [str(item.id) for item, status, _ in report.rows if status == UNCOVERED]
    result.stale = [f"{a} ({s})" for a, s in graph.status().items() if s != VALID]
    return result
