"""Plain-text work item store.

A project is a directory::

    project.cfg        level scheme and id prefixes
    counters           last ordinal per prefix, plus tombstones of deleted ids
    items/<id>.wi      one work item per file
    baselines/<l>.bl   content digests of every item at baseline time
    links.tsv          trace links (see :mod:`certflow.trace`)

Item files are ``key: value`` header lines, a blank line, then the free-text
body.  Everything is UTF-8 with LF line endings so that the project diffs
cleanly under git.
"""

from __future__ import annotations

import configparser
import enum
import json
import os
import re
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

from certflow._fs import atomic_write, sha256_hex, utc_now
from certflow.errors import BaselineError, ItemError, ProjectError, ProjectLockedError

DEFAULT_LEVELS = ("aircraft", "system", "component", "software")

CONFIG_FILE = "project.cfg"
COUNTERS_FILE = "counters"
LOCK_FILE = ".lock"
ITEMS_DIR = "items"
BASELINES_DIR = "baselines"

_ID_RE = re.compile(r"^([A-Z][A-Z0-9]*)-(\d+)$")
_FIELD_KEY_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.-]*$")
_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class ItemKind(enum.Enum):
    REQUIREMENT = "Requirement"
    MODEL_SURROGATE = "ModelSurrogate"
    TEST_CASE_SURROGATE = "TestCaseSurrogate"
    TEST_RUN = "TestRun"
    REVIEW_CHECKLIST = "ReviewChecklist"

    @classmethod
    def parse(cls, text: "str | ItemKind") -> "ItemKind":
        if isinstance(text, ItemKind):
            return text
        key = text.strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if key in (kind.value.lower(), kind.name.lower().replace("_", "")):
                return kind
        for kind, prefix in DEFAULT_PREFIXES.items():
            if key == prefix.lower():
                return kind
        raise ItemError(f"unknown work item kind: {text!r}")


DEFAULT_PREFIXES = {
    ItemKind.REQUIREMENT: "REQ",
    ItemKind.MODEL_SURROGATE: "MDL",
    ItemKind.TEST_CASE_SURROGATE: "TC",
    ItemKind.TEST_RUN: "RUN",
    ItemKind.REVIEW_CHECKLIST: "CHK",
}


@dataclass(frozen=True, order=True)
class WorkItemId:
    prefix: str
    ordinal: int

    def __str__(self) -> str:
        return f"{self.prefix}-{self.ordinal:04d}"

    @classmethod
    def parse(cls, value: "str | WorkItemId") -> "WorkItemId":
        if isinstance(value, WorkItemId):
            return value
        m = _ID_RE.match(value.strip())
        if not m or int(m.group(2)) < 1:
            raise ItemError(f"malformed work item id: {value!r}")
        return cls(m.group(1), int(m.group(2)))


@dataclass(frozen=True)
class LevelScheme:
    """Requirement levels, highest first."""

    levels: tuple[str, ...] = DEFAULT_LEVELS

    def __post_init__(self) -> None:
        if not self.levels:
            raise ProjectError("level scheme must not be empty")
        if len(set(self.levels)) != len(self.levels):
            raise ProjectError(f"duplicate level labels in {list(self.levels)}")
        for label in self.levels:
            if not label or "," in label or label != label.strip():
                raise ProjectError(f"invalid level label: {label!r}")

    def __contains__(self, label: object) -> bool:
        return label in self.levels

    def index(self, label: str) -> int:
        try:
            return self.levels.index(label)
        except ValueError:
            raise ItemError(f"unknown level: {label!r} (known: {', '.join(self.levels)})") from None


@dataclass(frozen=True)
class WorkItem:
    id: WorkItemId
    kind: ItemKind
    title: str
    body: str = ""
    level: str | None = None
    derived: bool = False
    custom_fields: Mapping[str, str] = field(default_factory=dict)
    revision: int = 0

    def content_digest(self) -> str:
        """SHA-256 over a canonical serialization of the content fields (not revision)."""
        payload = {
            "kind": self.kind.value,
            "level": self.level,
            "title": self.title,
            "body": self.body,
            "derived": self.derived,
            "custom_fields": dict(sorted(self.custom_fields.items())),
        }
        canon = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return sha256_hex(canon.encode("utf-8"))

    def render(self) -> str:
        lines = [f"id: {self.id}", f"kind: {self.kind.value}"]
        if self.level is not None:
            lines.append(f"level: {self.level}")
        if self.kind is ItemKind.REQUIREMENT:
            lines.append(f"derived: {'true' if self.derived else 'false'}")
        lines.append(f"revision: {self.revision}")
        lines.append(f"title: {self.title}")
        for key in sorted(self.custom_fields):
            lines.append(f"field.{key}: {self.custom_fields[key]}")
        return "\n".join(lines) + "\n\n" + self.body

    @classmethod
    def parse(cls, text: str, source: str = "<item>") -> "WorkItem":
        header, sep, body = text.partition("\n\n")
        if not sep:
            raise ItemError(f"{source}: missing blank line after header")
        values: dict[str, str] = {}
        custom: dict[str, str] = {}
        for lineno, line in enumerate(header.split("\n"), 1):
            key, colon, value = line.partition(": ")
            if not colon:
                raise ItemError(f"{source}:{lineno}: expected 'key: value', got {line!r}")
            if key.startswith("field."):
                custom[key[len("field."):]] = value
            elif key in values:
                raise ItemError(f"{source}:{lineno}: duplicate key {key!r}")
            else:
                values[key] = value
        try:
            derived = values.get("derived", "false")
            if derived not in ("true", "false"):
                raise ItemError(f"{source}: derived must be true or false")
            return cls(
                id=WorkItemId.parse(values["id"]),
                kind=ItemKind(values["kind"]),
                title=values["title"],
                body=body,
                level=values.get("level"),
                derived=derived == "true",
                custom_fields=custom,
                revision=int(values["revision"]),
            )
        except KeyError as exc:
            raise ItemError(f"{source}: missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ItemError(f"{source}: {exc}") from None


@dataclass(frozen=True)
class Baseline:
    label: str
    item_digests: Mapping[WorkItemId, str]
    created_at: str

    def render(self) -> str:
        lines = [f"label: {self.label}", f"created_at: {self.created_at}"]
        lines += [f"{item_id} {digest}" for item_id, digest in sorted(self.item_digests.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Baseline":
        lines = text.splitlines()
        if len(lines) < 2 or not lines[0].startswith("label: ") or not lines[1].startswith("created_at: "):
            raise BaselineError("malformed baseline file")
        digests = {}
        for line in lines[2:]:
            item_id, _, digest = line.partition(" ")
            digests[WorkItemId.parse(item_id)] = digest
        return cls(lines[0][len("label: "):], digests, lines[1][len("created_at: "):])


@dataclass(frozen=True)
class ChangeSet:
    added: list[WorkItemId]
    removed: list[WorkItemId]
    modified: list[WorkItemId]

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified)


def _check_single_line(name: str, value: str) -> None:
    if "\n" in value or "\r" in value:
        raise ItemError(f"{name} must be a single line")


def _normalize_body(body: str) -> str:
    return body.replace("\r\n", "\n").replace("\r", "\n")


class Project:
    """Handle on a project directory.

    Reads never lock.  Mutating methods take the project write lock for the
    duration of the call, or reuse it if the caller already holds it via
    :meth:`write_lock`.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        cfg_path = self.root / CONFIG_FILE
        if not cfg_path.is_file():
            raise ProjectError(f"not a certflow project (no {CONFIG_FILE}): {self.root}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # type: ignore[assignment]
        try:
            parser.read_string(cfg_path.read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ProjectError(f"{cfg_path}: {exc}") from None
        self.name = parser.get("project", "name", fallback=self.root.name)
        levels = parser.get("project", "levels", fallback=",".join(DEFAULT_LEVELS))
        self.levels = LevelScheme(tuple(x.strip() for x in levels.split(",") if x.strip()))
        self.prefixes = dict(DEFAULT_PREFIXES)
        if parser.has_section("prefixes"):
            for key, value in parser.items("prefixes"):
                self.prefixes[ItemKind.parse(key)] = value.strip()
        if len(set(self.prefixes.values())) != len(self.prefixes):
            raise ProjectError("work item prefixes must be distinct")
        for prefix in self.prefixes.values():
            if not re.match(r"^[A-Z][A-Z0-9]*$", prefix):
                raise ProjectError(f"invalid prefix {prefix!r}")
        self._lock_depth = 0

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def init(
        cls,
        root: str | os.PathLike,
        levels: "tuple[str, ...] | list[str] | None" = None,
        name: str | None = None,
    ) -> "Project":
        root = Path(root)
        if root.exists() and (not root.is_dir() or any(root.iterdir())):
            raise ProjectError(f"directory is not empty: {root}")
        scheme = LevelScheme(tuple(levels) if levels else DEFAULT_LEVELS)
        root.mkdir(parents=True, exist_ok=True)
        (root / ITEMS_DIR).mkdir()
        (root / BASELINES_DIR).mkdir()
        cfg = [
            "[project]",
            f"name = {name or root.resolve().name}",
            f"levels = {', '.join(scheme.levels)}",
            "",
            "[prefixes]",
        ]
        cfg += [f"{kind.value} = {prefix}" for kind, prefix in DEFAULT_PREFIXES.items()]
        atomic_write(root / CONFIG_FILE, "\n".join(cfg) + "\n")
        atomic_write(root / COUNTERS_FILE, "")
        atomic_write(root / "links.tsv", "")
        return cls(root)

    @contextmanager
    def write_lock(self) -> Iterator["Project"]:
        lock = self.root / LOCK_FILE
        if self._lock_depth == 0:
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            except FileExistsError:
                raise ProjectLockedError(
                    f"project is locked by another writer ({lock}); remove it if stale"
                ) from None
            with os.fdopen(fd, "w") as fh:
                fh.write(f"{os.getpid()}\n")
        self._lock_depth += 1
        try:
            yield self
        finally:
            self._lock_depth -= 1
            if self._lock_depth == 0:
                lock.unlink(missing_ok=True)

    # -- counters ----------------------------------------------------------

    def _read_counters(self) -> tuple[dict[str, int], list[str]]:
        counters: dict[str, int] = {}
        tombstones: list[str] = []
        path = self.root / COUNTERS_FILE
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                key, _, value = line.partition(" ")
                if key == "tombstone":
                    tombstones.append(value)
                else:
                    counters[key] = int(value)
        return counters, tombstones

    def _write_counters(self, counters: dict[str, int], tombstones: list[str]) -> None:
        lines = [f"{k} {v}" for k, v in sorted(counters.items())]
        lines += [f"tombstone {t}" for t in sorted(set(tombstones))]
        atomic_write(self.root / COUNTERS_FILE, "".join(line + "\n" for line in lines))

    # -- items -------------------------------------------------------------

    def item_path(self, item_id: "str | WorkItemId") -> Path:
        return self.root / ITEMS_DIR / f"{WorkItemId.parse(item_id)}.wi"

    def _validate(self, item: WorkItem) -> None:
        _check_single_line("title", item.title)
        for key, value in item.custom_fields.items():
            if not _FIELD_KEY_RE.match(key):
                raise ItemError(f"invalid custom field name: {key!r}")
            _check_single_line(f"field {key!r}", value)
        if item.kind is ItemKind.REQUIREMENT:
            if item.level is None:
                raise ItemError("requirements need a level")
            self.levels.index(item.level)
        else:
            if item.level is not None:
                raise ItemError(f"level is only allowed on requirements, not {item.kind.value}")
            if item.derived:
                raise ItemError(f"derived flag is only allowed on requirements, not {item.kind.value}")

    def _save(self, item: WorkItem) -> None:
        atomic_write(self.item_path(item.id), item.render())

    def create_item(
        self,
        kind: "ItemKind | str",
        title: str,
        body: str = "",
        level: str | None = None,
        derived: bool = False,
        custom_fields: Mapping[str, str] | None = None,
    ) -> WorkItem:
        kind = ItemKind.parse(kind)
        prefix = self.prefixes[kind]
        with self.write_lock():
            counters, tombstones = self._read_counters()
            item = WorkItem(
                id=WorkItemId(prefix, counters.get(prefix, 0) + 1),
                kind=kind,
                title=title,
                body=_normalize_body(body),
                level=level,
                derived=derived,
                custom_fields=dict(custom_fields or {}),
            )
            self._validate(item)
            counters[prefix] = item.id.ordinal
            self._write_counters(counters, tombstones)
            self._save(item)
        return item

    def get_item(self, item_id: "str | WorkItemId") -> WorkItem:
        path = self.item_path(item_id)
        try:
            text = path.read_bytes().decode("utf-8")
        except FileNotFoundError:
            raise ItemError(f"unknown work item: {item_id}") from None
        return WorkItem.parse(text, source=str(path))

    def has_item(self, item_id: "str | WorkItemId") -> bool:
        return self.item_path(item_id).is_file()

    def items(self, kind: "ItemKind | str | None" = None) -> list[WorkItem]:
        kind = ItemKind.parse(kind) if kind is not None else None
        found = []
        for path in (self.root / ITEMS_DIR).glob("*.wi"):
            item = WorkItem.parse(path.read_bytes().decode("utf-8"), source=str(path))
            if kind is None or item.kind is kind:
                found.append(item)
        return sorted(found, key=lambda it: it.id)

    def update_item(self, item_id: "str | WorkItemId", changes: Mapping[str, object] | None = None, **kw: object) -> WorkItem:
        """Apply field changes; bumps the revision when anything actually changed.

        Allowed keys: title, body, level, derived, custom_fields (replaces the mapping).
        """
        changes = {**(changes or {}), **kw}
        for key in ("id", "kind", "revision"):
            if key in changes:
                raise ItemError(f"cannot change {key} of a work item")
        unknown = set(changes) - {"title", "body", "level", "derived", "custom_fields"}
        if unknown:
            raise ItemError(f"unknown fields: {', '.join(sorted(unknown))}")
        if "body" in changes:
            changes["body"] = _normalize_body(str(changes["body"]))
        if "custom_fields" in changes:
            changes["custom_fields"] = dict(changes["custom_fields"])  # type: ignore[call-overload]
        with self.write_lock():
            old = self.get_item(item_id)
            new = replace(old, **changes)  # type: ignore[arg-type]
            if new == old:
                return old
            self._validate(new)
            if new.level != old.level:
                from certflow.trace import check_links_for

                check_links_for(self, new)
            new = replace(new, revision=old.revision + 1)
            self._save(new)
        return new

    def delete_item(self, item_id: "str | WorkItemId") -> None:
        """Remove an item and every link touching it; its ordinal stays burned."""
        from certflow.trace import drop_links_for

        with self.write_lock():
            item = self.get_item(item_id)
            drop_links_for(self, item.id)
            counters, tombstones = self._read_counters()
            self._write_counters(counters, tombstones + [str(item.id)])
            self.item_path(item.id).unlink()

    def tombstones(self) -> list[str]:
        return sorted(self._read_counters()[1])

    # -- baselines ---------------------------------------------------------

    def _baseline_path(self, label: str) -> Path:
        if not _LABEL_RE.match(label):
            raise BaselineError(f"invalid baseline label: {label!r}")
        return self.root / BASELINES_DIR / f"{label}.bl"

    def snapshot(self) -> dict[WorkItemId, str]:
        return {item.id: item.content_digest() for item in self.items()}

    def baseline(self, label: str) -> Baseline:
        path = self._baseline_path(label)
        with self.write_lock():
            if path.exists():
                raise BaselineError(f"baseline already exists: {label}")
            bl = Baseline(label, self.snapshot(), utc_now())
            atomic_write(path, bl.render())
        return bl

    def load_baseline(self, label: str) -> Baseline:
        path = self._baseline_path(label)
        if not path.is_file():
            raise BaselineError(f"unknown baseline: {label}")
        return Baseline.parse(path.read_text(encoding="utf-8"))

    def baselines(self) -> list[str]:
        return sorted(p.stem for p in (self.root / BASELINES_DIR).glob("*.bl"))

    def diff(self, label_a: str, label_b: str) -> ChangeSet:
        a = self.load_baseline(label_a).item_digests
        b = self.load_baseline(label_b).item_digests
        return ChangeSet(
            added=sorted(set(b) - set(a)),
            removed=sorted(set(a) - set(b)),
            modified=sorted(k for k in set(a) & set(b) if a[k] != b[k]),
        )
