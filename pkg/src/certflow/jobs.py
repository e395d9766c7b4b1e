"""Incremental verification jobs over an artifact dependency graph.

``jobs.cfg`` declares jobs as blank-line separated blocks::

    job: trace-verification
    action: emit-trace-report
    input: items/*.wi
    input: links.tsv
    output: reports/trace_verification.csv
    param.role: verifies

Inputs may be glob patterns (segment-wise, ``*`` never crosses ``/``);
outputs are literal paths.  A job consumes another job's artifact when one
of its input patterns matches that output.

Freshness is decided by content digests.  Every produced artifact gets a
manifest in ``manifests/`` holding the digests of the inputs it was built
from, the digest of the job definition and the digest of the artifact
itself.  An artifact is valid only if all of them still match and all of
its upstream artifacts are valid.
"""

from __future__ import annotations

import fnmatch
import heapq
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping
from urllib.parse import quote

from certflow._fs import atomic_write, file_digest, sha256_hex, utc_now
from certflow.errors import ActionError, JobGraphError
from certflow.reports import render_csv, render_html

JOBS_FILE = "jobs.cfg"
MANIFEST_DIR = "manifests"

VALID, OUTDATED, MISSING = "valid", "outdated", "missing"
PASSED, FAILED, BLOCKED = "pass", "fail", "blocked"

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
_GLOB_CHARS = set("*?[")


def is_pattern(path: str) -> bool:
    return bool(_GLOB_CHARS & set(path))


def path_matches(pattern: str, path: str) -> bool:
    if not is_pattern(pattern):
        return pattern == path
    pparts, parts = pattern.split("/"), path.split("/")
    return len(pparts) == len(parts) and all(fnmatch.fnmatchcase(p, q) for q, p in zip(pparts, parts))


def _check_relpath(path: str, what: str) -> None:
    if not path or path.startswith("/") or ".." in path.split("/") or "\\" in path:
        raise JobGraphError(f"{what} must be a relative project path: {path!r}")


@dataclass(frozen=True)
class Job:
    name: str
    action: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    params: Mapping[str, str] = field(default_factory=dict)

    def signature(self) -> str:
        canon = json.dumps(
            {
                "name": self.name,
                "action": self.action,
                "inputs": list(self.inputs),
                "outputs": list(self.outputs),
                "params": dict(sorted(self.params.items())),
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return sha256_hex(canon.encode("utf-8"))

    def consumes(self, path: str) -> bool:
        return any(path_matches(p, path) for p in self.inputs)

    def render(self) -> str:
        lines = [f"job: {self.name}", f"action: {self.action}"]
        lines += [f"input: {p}" for p in self.inputs]
        lines += [f"output: {p}" for p in self.outputs]
        lines += [f"param.{k}: {v}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"


def parse_jobs(text: str, source: str = JOBS_FILE) -> list[Job]:
    jobs = []
    block: list[tuple[int, str]] = []

    def flush() -> None:
        if not block:
            return
        fields: dict[str, str] = {}
        inputs, outputs, params = [], [], {}
        for lineno, line in block:
            key, colon, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if not colon:
                raise JobGraphError(f"{source}:{lineno}: expected 'key: value'")
            if key == "input":
                inputs.append(value)
            elif key == "output":
                outputs.append(value)
            elif key.startswith("param."):
                params[key[len("param."):]] = value
            elif key in ("job", "action") and key not in fields:
                fields[key] = value
            else:
                raise JobGraphError(f"{source}:{lineno}: unexpected key {key!r}")
        if "job" not in fields or "action" not in fields:
            raise JobGraphError(f"{source}:{block[0][0]}: job block needs 'job' and 'action'")
        jobs.append(Job(fields["job"], fields["action"], tuple(inputs), tuple(outputs), params))
        block.clear()

    for lineno, line in enumerate(text.splitlines(), 1):
        if line.lstrip().startswith("#"):
            continue
        if not line.strip():
            flush()
        else:
            block.append((lineno, line))
    flush()
    return jobs


@dataclass
class Manifest:
    artifact: str
    job: str
    job_digest: str
    output_digest: str
    inputs: dict[str, str | None]
    produced_at: str = ""

    def render(self) -> str:
        lines = [
            f"artifact: {self.artifact}",
            f"job: {self.job}",
            f"job_digest: {self.job_digest}",
            f"output_digest: {self.output_digest}",
            f"produced_at: {self.produced_at}",
        ]
        lines += [f"input: {digest or '-'} {path}" for path, digest in sorted(self.inputs.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        values: dict[str, str] = {}
        inputs: dict[str, str | None] = {}
        for line in text.splitlines():
            key, _, value = line.partition(": ")
            if key == "input":
                digest, _, path = value.partition(" ")
                inputs[path] = None if digest == "-" else digest
            else:
                values[key] = value
        return cls(
            values["artifact"], values["job"], values["job_digest"],
            values["output_digest"], inputs, values.get("produced_at", ""),
        )


@dataclass(frozen=True)
class Impact:
    jobs: list[str]
    artifacts: list[str]


@dataclass
class JobResult:
    job: str
    outcome: str
    duration_s: float = 0.0
    message: str = ""
    manifests: list[str] = field(default_factory=list)


@dataclass
class RunReport:
    results: list[JobResult] = field(default_factory=list)

    def _named(self, outcome: str) -> list[str]:
        return [r.job for r in self.results if r.outcome == outcome]

    @property
    def executed(self) -> list[str]:
        return [r.job for r in self.results if r.outcome != BLOCKED]

    @property
    def passed(self) -> list[str]:
        return self._named(PASSED)

    @property
    def failed(self) -> list[str]:
        return self._named(FAILED)

    @property
    def blocked(self) -> list[str]:
        return self._named(BLOCKED)

    @property
    def ok(self) -> bool:
        return not self.failed and not self.blocked


@dataclass
class ActionContext:
    root: Path
    job: Job
    inputs: list[str]

    def read(self, path: str) -> bytes:
        try:
            return (self.root / path).read_bytes()
        except FileNotFoundError:
            raise ActionError(f"input not found: {path}") from None

    def param(self, name: str, default: str | None = None) -> str | None:
        return self.job.params.get(name, default)

    def require(self, name: str) -> str:
        value = self.job.params.get(name)
        if value is None:
            raise ActionError(f"job {self.job.name}: missing param.{name}")
        return value


Action = Callable[[ActionContext], Mapping[str, "bytes | str"]]


class JobGraph:
    def __init__(self, root: str | Path, jobs: Iterable[Job] = ()):
        self.root = Path(root)
        self.jobs: dict[str, Job] = {}
        for job in jobs:
            if job.name in self.jobs:
                raise JobGraphError(f"duplicate job name {job.name!r}")
            self.jobs[job.name] = job
        self._validate()

    @classmethod
    def load(cls, root: str | Path) -> "JobGraph":
        root = Path(root)
        path = root / JOBS_FILE
        text = path.read_text(encoding="utf-8") if path.exists() else ""
        return cls(root, parse_jobs(text, str(path)))

    def save(self) -> None:
        text = "\n".join(job.render() for job in self.ordered())
        atomic_write(self.root / JOBS_FILE, text)

    # -- structure ---------------------------------------------------------

    def _validate(self) -> None:
        producers: dict[str, str] = {}
        for job in self.jobs.values():
            if not _NAME_RE.match(job.name):
                raise JobGraphError(f"invalid job name {job.name!r}")
            if not job.outputs:
                raise JobGraphError(f"job {job.name} declares no outputs")
            for p in job.inputs:
                _check_relpath(p, f"input of {job.name}")
            for out in job.outputs:
                _check_relpath(out, f"output of {job.name}")
                if is_pattern(out):
                    raise JobGraphError(f"output of {job.name} must not be a pattern: {out}")
                if out.startswith(MANIFEST_DIR + "/"):
                    raise JobGraphError(f"output of {job.name} collides with {MANIFEST_DIR}/")
                if out in producers:
                    raise JobGraphError(f"output collision: {out} is written by {producers[out]} and {job.name}")
                producers[out] = job.name
                if job.consumes(out):
                    raise JobGraphError(f"job {job.name} consumes its own output {out}")
        self.producers = producers
        self.ordered()  # raises on cycles

    def upstream(self, job: Job) -> list[str]:
        return sorted({name for out, name in self.producers.items() if job.consumes(out)})

    def downstream(self, job: Job) -> list[str]:
        return sorted(j.name for j in self.jobs.values() if any(j.consumes(out) for out in job.outputs))

    def ordered(self) -> list[Job]:
        """Topological order, ties broken by job name."""
        indeg = {name: len(self.upstream(job)) for name, job in self.jobs.items()}
        heap = [name for name, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            name = heapq.heappop(heap)
            order.append(self.jobs[name])
            for nxt in self.downstream(self.jobs[name]):
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(heap, nxt)
        if len(order) != len(self.jobs):
            stuck = sorted(set(self.jobs) - {j.name for j in order})
            raise JobGraphError(f"dependency cycle among jobs: {', '.join(stuck)}")
        return order

    def expand(self, pattern: str) -> list[str]:
        if not is_pattern(pattern):
            return [pattern]
        found = {out for out in self.producers if path_matches(pattern, out)}
        for path in self.root.glob(pattern):
            rel = path.relative_to(self.root).as_posix()
            if path.is_file() and not any(part.startswith(".") for part in rel.split("/")):
                found.add(rel)
        return sorted(found)

    def job_inputs(self, job: Job) -> list[str]:
        seen: dict[str, None] = {}
        for pattern in job.inputs:
            seen.update(dict.fromkeys(self.expand(pattern)))
        return list(seen)

    def artifacts(self) -> list[str]:
        return [out for job in self.ordered() for out in job.outputs]

    # -- freshness -----------------------------------------------------------

    def manifest_path(self, artifact: str) -> Path:
        return self.root / MANIFEST_DIR / (quote(artifact, safe="") + ".mf")

    def read_manifest(self, artifact: str) -> Manifest | None:
        try:
            return Manifest.parse(self.manifest_path(artifact).read_text(encoding="utf-8"))
        except (FileNotFoundError, KeyError):
            return None

    def status(self) -> dict[str, str]:
        """State of every artifact, in topological order."""
        digests: dict[str, str | None] = {}

        def digest(path: str) -> str | None:
            if path not in digests:
                digests[path] = file_digest(self.root / path)
            return digests[path]

        states: dict[str, str] = {}
        for job in self.ordered():
            inputs = self.job_inputs(job)
            upstream_ok = all(states.get(p, VALID) == VALID for p in inputs)
            for out in job.outputs:
                current = digest(out)
                mf = self.read_manifest(out)
                if current is None:
                    states[out] = MISSING
                elif (
                    mf is None
                    or not upstream_ok
                    or mf.job_digest != job.signature()
                    or mf.output_digest != current
                    or set(mf.inputs) != set(inputs)
                    or any(mf.inputs[p] != digest(p) for p in inputs)
                ):
                    states[out] = OUTDATED
                else:
                    states[out] = VALID
        return states

    def impact_analysis(self, changed_paths: Iterable[str]) -> Impact:
        """Jobs and artifacts reachable downstream of the changed paths."""
        frontier = []
        for path in changed_paths:
            if path not in self.producers and not any(j.consumes(path) for j in self.jobs.values()):
                raise JobGraphError(f"path is not part of the job graph: {path}")
            frontier.append(path)
        jobs: set[str] = set()
        artifacts: set[str] = set()
        while frontier:
            path = frontier.pop()
            for job in self.jobs.values():
                if job.name not in jobs and job.consumes(path):
                    jobs.add(job.name)
                    for out in job.outputs:
                        if out not in artifacts:
                            artifacts.add(out)
                            frontier.append(out)
        return Impact(sorted(jobs), sorted(artifacts))

    def plan(self) -> list[Job]:
        states = self.status()
        return [job for job in self.ordered() if any(states[o] != VALID for o in job.outputs)]

    # -- execution -------------------------------------------------------------

    def run(self, plan: Iterable[Job] | None = None, actions: Mapping[str, Action] | None = None) -> RunReport:
        """Execute the plan; a failing job blocks its dependents, nothing else.

        Exceptions raised inside an action count as job failure.  Errors
        while writing artifacts or manifests propagate.
        """
        from certflow.actions import BUILTIN_ACTIONS

        registry: dict[str, Action] = {**BUILTIN_ACTIONS, **(actions or {})}
        todo = {job.name for job in (plan if plan is not None else self.plan())}
        report = RunReport()
        bad: set[str] = set()
        for job in self.ordered():
            if job.name not in todo:
                continue
            if any(up in bad for up in self.upstream(job)):
                bad.add(job.name)
                report.results.append(JobResult(job.name, BLOCKED, message="upstream job failed"))
                continue
            inputs = self.job_inputs(job)
            input_digests = {p: file_digest(self.root / p) for p in inputs}
            started = time.perf_counter()
            try:
                action = registry.get(job.action)
                if action is None:
                    raise ActionError(f"unknown action {job.action!r}")
                produced = dict(action(ActionContext(self.root, job, inputs)))
                if set(produced) != set(job.outputs):
                    raise ActionError(
                        f"action produced {sorted(produced)} but job declares {sorted(job.outputs)}"
                    )
            except Exception as exc:  # noqa: BLE001 - any action failure is a job failure
                bad.add(job.name)
                report.results.append(
                    JobResult(job.name, FAILED, time.perf_counter() - started, f"{type(exc).__name__}: {exc}")
                )
                continue
            written = []
            for out in job.outputs:
                data = produced[out]
                data = data.encode("utf-8") if isinstance(data, str) else data
                atomic_write(self.root / out, data)
                mf = Manifest(out, job.name, job.signature(), sha256_hex(data), input_digests, utc_now())
                atomic_write(self.manifest_path(out), mf.render())
                written.append(self.manifest_path(out).relative_to(self.root).as_posix())
            report.results.append(JobResult(job.name, PASSED, time.perf_counter() - started, manifests=written))
        return report


def register_job(
    root: str | Path,
    name: str,
    inputs: Iterable[str],
    outputs: Iterable[str],
    action: str,
    params: Mapping[str, str] | None = None,
) -> Job:
    """Add a job to ``jobs.cfg`` if the graph stays acyclic and outputs stay disjoint."""
    graph = JobGraph.load(root)
    job = Job(name, action, tuple(inputs), tuple(outputs), dict(params or {}))
    new = JobGraph(root, [*graph.jobs.values(), job])
    new.save()
    return job


def status_report(graph: JobGraph) -> tuple[str, str]:
    """Return (csv, html) of the artifact status overview."""
    states = graph.status()
    producer = graph.producers
    rows = [(artifact, state) for artifact, state in states.items()]
    csv_text = render_csv(("artifact", "state"), rows)
    counts = {s: sum(1 for v in states.values() if v == s) for s in (VALID, OUTDATED, MISSING)}
    html_text = render_html(
        "Verification status overview",
        ("artifact", "job", "state"),
        [(a, producer[a], s) for a, s in rows],
        summary=counts,
        row_classes=[s for _, s in rows],
    )
    return csv_text, html_text
