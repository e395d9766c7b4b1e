"""Typed trace links between work items.

Links live in ``links.tsv``, one per line::

    <source>\t<role>\t<target>\t<source rev>\t<target rev>

The two revision columns record the endpoint revisions at the time the link
was created or last reviewed.  A link is *suspect* when either endpoint has
moved past its recorded revision.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable

from certflow._fs import atomic_write
from certflow.errors import LinkError
from certflow.reports import render_csv, render_html
from certflow.store import ItemKind, Project, WorkItem, WorkItemId

LINKS_FILE = "links.tsv"


class LinkRole(enum.Enum):
    REFINES = "refines"
    IMPLEMENTS = "implements"
    VERIFIES = "verifies"
    RECORDS = "records"
    JUSTIFIES = "justifies"

    @classmethod
    def parse(cls, text: "str | LinkRole") -> "LinkRole":
        if isinstance(text, LinkRole):
            return text
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise LinkError(f"unknown link role: {text!r}") from None


class Direction(enum.Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"


# role -> (allowed source kind, allowed target kind); None means any kind
ROLE_MATRIX: dict[LinkRole, tuple[ItemKind | None, ItemKind | None]] = {
    LinkRole.REFINES: (ItemKind.REQUIREMENT, ItemKind.REQUIREMENT),
    LinkRole.IMPLEMENTS: (ItemKind.MODEL_SURROGATE, ItemKind.REQUIREMENT),
    LinkRole.VERIFIES: (ItemKind.TEST_CASE_SURROGATE, ItemKind.REQUIREMENT),
    LinkRole.RECORDS: (ItemKind.TEST_RUN, ItemKind.TEST_CASE_SURROGATE),
    LinkRole.JUSTIFIES: (ItemKind.REVIEW_CHECKLIST, None),
}


@dataclass(frozen=True)
class Link:
    source: WorkItemId
    role: LinkRole
    target: WorkItemId
    recorded_source_rev: int = 0
    recorded_target_rev: int = 0

    @property
    def key(self) -> tuple[WorkItemId, LinkRole, WorkItemId]:
        return (self.source, self.role, self.target)

    def is_suspect(self, source_rev: int, target_rev: int) -> bool:
        return source_rev > self.recorded_source_rev or target_rev > self.recorded_target_rev

    def render(self) -> str:
        return (
            f"{self.source}\t{self.role.value}\t{self.target}\t"
            f"{self.recorded_source_rev}\t{self.recorded_target_rev}"
        )

    def __str__(self) -> str:
        return f"{self.source} --{self.role.value}--> {self.target}"


def load_links(project: Project) -> list[Link]:
    path = project.root / LINKS_FILE
    if not path.exists():
        return []
    links = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise LinkError(f"{path}:{lineno}: expected 5 tab-separated columns")
        try:
            links.append(
                Link(
                    WorkItemId.parse(parts[0]),
                    LinkRole.parse(parts[1]),
                    WorkItemId.parse(parts[2]),
                    int(parts[3]),
                    int(parts[4]),
                )
            )
        except ValueError as exc:
            raise LinkError(f"{path}:{lineno}: {exc}") from None
    return links


def save_links(project: Project, links: Iterable[Link]) -> None:
    rows = sorted(links, key=lambda l: (l.source, l.role.value, l.target))
    atomic_write(project.root / LINKS_FILE, "".join(l.render() + "\n" for l in rows))


def role_allowed(role: LinkRole, source: WorkItem, target: WorkItem, project: Project) -> str | None:
    """Return why ``source --role--> target`` is illegal, or None if it is legal."""
    want_src, want_tgt = ROLE_MATRIX[role]
    if source.id == target.id:
        return "an item cannot link to itself"
    if want_src is not None and source.kind is not want_src:
        return f"{role.value} needs a {want_src.value} source, got {source.kind.value}"
    if want_tgt is not None and target.kind is not want_tgt:
        return f"{role.value} needs a {want_tgt.value} target, got {target.kind.value}"
    if role is LinkRole.REFINES:
        assert source.level is not None and target.level is not None
        if project.levels.index(target.level) > project.levels.index(source.level):
            return f"downward refine: {source.level} requirement cannot refine a {target.level} requirement"
    return None


def add_link(project: Project, source: "str | WorkItemId", role: "str | LinkRole", target: "str | WorkItemId") -> Link:
    role = LinkRole.parse(role)
    with project.write_lock():
        src = project.get_item(source)
        tgt = project.get_item(target)
        reason = role_allowed(role, src, tgt, project)
        if reason:
            raise LinkError(f"illegal link {src.id} {role.value} {tgt.id}: {reason}")
        links = load_links(project)
        if any(l.key == (src.id, role, tgt.id) for l in links):
            raise LinkError(f"duplicate link {src.id} {role.value} {tgt.id}")
        link = Link(src.id, role, tgt.id, src.revision, tgt.revision)
        save_links(project, links + [link])
    return link


def remove_link(project: Project, source: "str | WorkItemId", role: "str | LinkRole", target: "str | WorkItemId") -> None:
    key = (WorkItemId.parse(source), LinkRole.parse(role), WorkItemId.parse(target))
    with project.write_lock():
        links = load_links(project)
        kept = [l for l in links if l.key != key]
        if len(kept) == len(links):
            raise LinkError(f"unknown link {key[0]} {key[1].value} {key[2]}")
        save_links(project, kept)


def check_links_for(project: Project, item: WorkItem) -> None:
    """Raise if an edited ``item`` would make any of its existing links illegal."""
    for link in load_links(project):
        if item.id not in (link.source, link.target):
            continue
        src = item if link.source == item.id else project.get_item(link.source)
        tgt = item if link.target == item.id else project.get_item(link.target)
        reason = role_allowed(link.role, src, tgt, project)
        if reason:
            raise LinkError(f"change would break link {link}: {reason}")


def drop_links_for(project: Project, item_id: WorkItemId) -> None:
    links = load_links(project)
    kept = [l for l in links if item_id not in (l.source, l.target)]
    if len(kept) != len(links):
        save_links(project, kept)


def _revisions(project: Project) -> dict[WorkItemId, int]:
    return {item.id: item.revision for item in project.items()}


def suspect_links(project: Project) -> list[Link]:
    revs = _revisions(project)
    return [
        link
        for link in load_links(project)
        if link.is_suspect(revs.get(link.source, 0), revs.get(link.target, 0))
    ]


def mark_link_reviewed(project: Project, link: "Link | tuple") -> Link:
    """Re-record current endpoint revisions so the link is no longer suspect."""
    if isinstance(link, Link):
        key = link.key
    else:
        key = (WorkItemId.parse(link[0]), LinkRole.parse(link[1]), WorkItemId.parse(link[2]))
    with project.write_lock():
        links = load_links(project)
        for i, existing in enumerate(links):
            if existing.key == key:
                break
        else:
            raise LinkError(f"unknown link {key[0]} {key[1].value} {key[2]}")
        updated = replace(
            existing,
            recorded_source_rev=project.get_item(key[0]).revision,
            recorded_target_rev=project.get_item(key[2]).revision,
        )
        if updated != existing:
            links[i] = updated
            save_links(project, links)
    return updated


# -- coverage reports -------------------------------------------------------


@dataclass(frozen=True)
class ItemFilter:
    kind: ItemKind | None = None
    levels: tuple[str, ...] | None = None

    def matches(self, item: WorkItem) -> bool:
        if self.kind is not None and item.kind is not self.kind:
            return False
        if self.levels is not None and item.level not in self.levels:
            return False
        return True

    def describe(self) -> str:
        parts = [self.kind.value if self.kind else "any kind"]
        if self.levels is not None:
            parts.append("levels " + ",".join(self.levels))
        return ", ".join(parts)


COVERED, UNCOVERED, JUSTIFIED = "covered", "uncovered", "justified"
STATUSES = (COVERED, JUSTIFIED, UNCOVERED)


@dataclass(frozen=True)
class TraceReport:
    item_filter: ItemFilter
    role: LinkRole
    direction: Direction
    rows: list[tuple[WorkItem, str, list[WorkItemId]]]

    @property
    def distribution(self) -> dict[str, int]:
        counts = dict.fromkeys(STATUSES, 0)
        for _, status, _ in self.rows:
            counts[status] += 1
        return counts

    def status_of(self, item_id: "str | WorkItemId") -> str:
        item_id = WorkItemId.parse(item_id)
        for item, status, _ in self.rows:
            if item.id == item_id:
                return status
        raise KeyError(str(item_id))


def coverage(
    project: Project,
    item_filter: ItemFilter,
    role: "LinkRole | str",
    direction: "Direction | str",
    justify_derived: bool | None = None,
) -> TraceReport:
    """Classify every item matching ``item_filter`` as covered/justified/uncovered.

    Suspect links still cover.  By default only upstream (outgoing refines)
    queries justify derived requirements; ``justify_derived=True`` forces it
    for other queries, as the merge gate does.
    """
    role = LinkRole.parse(role)
    direction = Direction(direction) if isinstance(direction, str) else direction
    if justify_derived is None:
        justify_derived = role is LinkRole.REFINES and direction is Direction.OUTGOING
    peers: dict[WorkItemId, list[WorkItemId]] = {}
    for link in load_links(project):
        if link.role is not role:
            continue
        if direction is Direction.OUTGOING:
            peers.setdefault(link.source, []).append(link.target)
        else:
            peers.setdefault(link.target, []).append(link.source)
    rows = []
    for item in project.items():
        if not item_filter.matches(item):
            continue
        linked = sorted(peers.get(item.id, []))
        if linked:
            status = COVERED
        elif justify_derived and item.derived:
            status = JUSTIFIED
        else:
            status = UNCOVERED
        rows.append((item, status, linked))
    return TraceReport(item_filter, role, direction, rows)


def impact_set(project: Project, item_id: "str | WorkItemId") -> set[WorkItemId]:
    """Everything reachable from ``item_id`` over links, ignoring direction."""
    seed = project.get_item(item_id).id
    adjacency: dict[WorkItemId, set[WorkItemId]] = {}
    for link in load_links(project):
        adjacency.setdefault(link.source, set()).add(link.target)
        adjacency.setdefault(link.target, set()).add(link.source)
    seen = {seed}
    queue = deque([seed])
    while queue:
        for nxt in adjacency.get(queue.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    seen.discard(seed)
    return seen


def trace_report_csv(report: TraceReport) -> str:
    return render_csv(("id", "status"), [(str(item.id), status) for item, status, _ in report.rows])


def trace_report_html(report: TraceReport) -> str:
    dist = report.distribution
    total = sum(dist.values())
    summary = {
        status: f"{count} ({100 * count / total:.1f}%)" if total else "0" for status, count in dist.items()
    }
    summary["total"] = total
    rows = [
        (str(item.id), item.level or "", item.title, status, " ".join(map(str, linked)))
        for item, status, linked in report.rows
    ]
    return render_html(
        f"Trace report: {report.role.value} ({report.direction.value})",
        ("id", "level", "title", "status", "linked"),
        rows,
        summary=summary,
        subtitle=f"Items: {report.item_filter.describe()}",
        row_classes=[r[3] for r in rows],
    )
