"""Turn exported test-run XML into TestRun work items linked to their test cases."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from certflow.errors import IngestError
from certflow.store import ItemKind, Project, WorkItem, WorkItemId
from certflow.testkit.cases import records_from_xml
from certflow.trace import Link, LinkRole, add_link


@dataclass
class IngestResult:
    created: list[WorkItem] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def case_index(project: Project) -> dict[str, WorkItemId]:
    """Map both surrogate ids and their ``case_id`` fields to surrogate ids."""
    index: dict[str, WorkItemId] = {}
    for item in project.items(ItemKind.TEST_CASE_SURROGATE):
        index[str(item.id)] = item.id
        if "case_id" in item.custom_fields:
            index[item.custom_fields["case_id"]] = item.id
    return index


def ingest_records(project: Project, xml_path: str | Path) -> IngestResult:
    """Create one TestRun item per ``<run>`` plus a records link to its case.

    Re-ingesting a run id already present is a no-op.  The whole file is
    validated before anything is written.
    """
    xml_path = Path(xml_path)
    try:
        data = xml_path.read_bytes()
    except FileNotFoundError:
        raise IngestError(f"no such file: {xml_path}") from None
    records = records_from_xml(data, source=str(xml_path))
    seen: set[str] = set()
    for rec in records:
        if rec.run_id in seen:
            raise IngestError(f"{xml_path}: duplicate run id {rec.run_id!r}")
        seen.add(rec.run_id)

    result = IngestResult()
    with project.write_lock():
        cases = case_index(project)
        unknown = sorted({rec.case_id for rec in records if rec.case_id not in cases})
        if unknown:
            raise IngestError(f"{xml_path}: unknown test case(s): {', '.join(unknown)}")
        existing = {
            item.custom_fields.get("run_id")
            for item in project.items(ItemKind.TEST_RUN)
        }
        for rec in records:
            if rec.run_id in existing:
                result.skipped.append(rec.run_id)
                continue
            fields = {
                "run_id": rec.run_id,
                "case_id": rec.case_id,
                "env": rec.environment,
                "verdict": rec.verdict,
                "samples": str(len(rec.samples)),
            }
            if rec.time:
                fields["time"] = rec.time
            item = project.create_item(
                ItemKind.TEST_RUN,
                title=f"{rec.environment} run {rec.run_id}: {rec.verdict}",
                body=rec.message,
                custom_fields=fields,
            )
            result.created.append(item)
            result.links.append(add_link(project, item.id, LinkRole.RECORDS, cases[rec.case_id]))
    return result
