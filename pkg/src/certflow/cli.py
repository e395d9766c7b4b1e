"""``certflow`` command-line entry point.

Exit codes: 0 success / gate pass, 1 policy failure (gate fail, failing
tests, divergent runs), 2 usage or configuration error, 3 I/O or transport
error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from certflow import compliance
from certflow._fs import atomic_write, utc_now
from certflow.errors import CertflowError, TransportError, UsageError
from certflow.gate import evaluate_gate
from certflow.jobs import VALID, JobGraph, register_job, status_report
from certflow.lint import lint_requirement
from certflow.store import ItemKind, Project
from certflow.testkit import wire
from certflow.testkit.cases import load_testcase, records_from_xml, records_to_xml, run_mil
from certflow.testkit.compare import compare_runs
from certflow.testkit.hil import HilClient, run_hil, serve_target
from certflow.testkit.ingest import ingest_records
from certflow.testkit.model import make_model
from certflow.trace import (
    Direction,
    ItemFilter,
    LinkRole,
    add_link,
    coverage,
    impact_set,
    mark_link_reviewed,
    remove_link,
    suspect_links,
    trace_report_csv,
    trace_report_html,
)

EXIT_OK, EXIT_POLICY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("certflow")


def _project(args: argparse.Namespace) -> Project:
    return Project(args.project)


def _fields(pairs: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, eq, value = pair.partition("=")
        if not eq:
            raise UsageError(f"expected key=value, got {pair!r}")
        out[key.strip()] = value
    return out


def _write_reports(root: Path, base: str, fmt: str, csv_text: str, html_text: str) -> list[str]:
    written = []
    if fmt in ("csv", "both"):
        atomic_write(root / "reports" / f"{base}.csv", csv_text)
        written.append(f"reports/{base}.csv")
    if fmt in ("html", "both"):
        atomic_write(root / "reports" / f"{base}.html", html_text)
        written.append(f"reports/{base}.html")
    return written


def _catalog_path(args: argparse.Namespace) -> Path:
    if args.catalog:
        return Path(args.catalog)
    found = sorted((Path(args.project) / "compliance").glob("*.csv"))
    if len(found) != 1:
        raise UsageError("pass --catalog (expected exactly one catalog in compliance/)")
    return found[0]


# -- commands -----------------------------------------------------------------


def cmd_init(args: argparse.Namespace) -> int:
    target = Path(args.path or args.project)
    if args.example:
        if target.exists() and any(target.iterdir()):
            raise UsageError(f"directory is not empty: {target}")
        source = resources.files("certflow") / "data" / args.example
        if not source.is_dir():
            raise UsageError(f"unknown example {args.example!r}")
        with resources.as_file(source) as src:
            shutil.copytree(src, target, dirs_exist_ok=True)
        Project(target)
    else:
        levels = [x.strip() for x in args.levels.split(",")] if args.levels else None
        Project.init(target, levels)
        if not (target / "jobs.cfg").exists():
            register_job(
                target, "lint-reqs", ["items/*.wi"], ["reports/lint.csv"], "lint-all-requirements"
            )
    print(f"initialized project in {target}")
    return EXIT_OK


def cmd_add(args: argparse.Namespace) -> int:
    body = Path(args.body_file).read_text(encoding="utf-8") if args.body_file else (args.body or "")
    item = _project(args).create_item(
        args.kind, args.title, body, level=args.level, derived=args.derived, custom_fields=_fields(args.field)
    )
    print(item.id)
    return EXIT_OK


def cmd_update(args: argparse.Namespace) -> int:
    project = _project(args)
    changes: dict[str, object] = {}
    if args.title is not None:
        changes["title"] = args.title
    if args.body_file:
        changes["body"] = Path(args.body_file).read_text(encoding="utf-8")
    elif args.body is not None:
        changes["body"] = args.body
    if args.level is not None:
        changes["level"] = args.level
    if args.derived is not None:
        changes["derived"] = args.derived
    if args.field or args.unset_field:
        fields = dict(project.get_item(args.id).custom_fields)
        fields.update(_fields(args.field))
        for key in args.unset_field or ():
            fields.pop(key, None)
        changes["custom_fields"] = fields
    item = project.update_item(args.id, changes)
    print(f"{item.id} rev {item.revision}")
    return EXIT_OK


def cmd_show(args: argparse.Namespace) -> int:
    project = _project(args)
    sys.stdout.write(project.item_path(project.get_item(args.id).id).read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_delete(args: argparse.Namespace) -> int:
    _project(args).delete_item(args.id)
    return EXIT_OK


def cmd_link(args: argparse.Namespace) -> int:
    print(add_link(_project(args), args.source, args.role, args.target))
    return EXIT_OK


def cmd_unlink(args: argparse.Namespace) -> int:
    remove_link(_project(args), args.source, args.role, args.target)
    return EXIT_OK


def cmd_review(args: argparse.Namespace) -> int:
    link = mark_link_reviewed(_project(args), (args.source, args.role, args.target))
    print(f"reviewed {link}")
    return EXIT_OK


def cmd_suspects(args: argparse.Namespace) -> int:
    links = suspect_links(_project(args))
    for link in links:
        print(link)
    print(f"suspect links: {len(links)}")
    return EXIT_OK


def cmd_impact(args: argparse.Namespace) -> int:
    for item_id in sorted(impact_set(_project(args), args.id)):
        print(item_id)
    return EXIT_OK


def cmd_lint(args: argparse.Namespace) -> int:
    if args.all:
        texts = [(str(i.id), i.body or i.title) for i in _project(args).items(ItemKind.REQUIREMENT)]
    elif args.text:
        texts = [("-", args.text)]
    else:
        raise UsageError("give a statement or --all")
    bad = 0
    for name, text in texts:
        result = lint_requirement(text)
        bad += not result.ok
        detail = "; ".join(result.diagnostics)
        print(f"{name}\t{result.verdict}" + (f"\t{detail}" if detail else ""))
    return EXIT_POLICY if bad else EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    bl = _project(args).baseline(args.label)
    print(f"baseline {bl.label}: {len(bl.item_digests)} items")
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    change = _project(args).diff(args.label_a, args.label_b)
    for name in ("added", "removed", "modified"):
        for item_id in getattr(change, name):
            print(f"{name}\t{item_id}")
    return EXIT_OK


def cmd_jobs_run(args: argparse.Namespace) -> int:
    project = _project(args)
    with project.write_lock():
        graph = JobGraph.load(project.root)
        plan = graph.plan()
        if args.dry_run:
            for job in plan:
                print(job.name)
            return EXIT_OK
        report = graph.run(plan)
    for r in report.results:
        line = f"{r.outcome}\t{r.job}\t{r.duration_s:.3f}s"
        print(line + (f"\t{r.message}" if r.message else ""))
    print(f"executed {len(report.executed)}, failed {len(report.failed)}, blocked {len(report.blocked)}")
    return EXIT_OK if report.ok else EXIT_POLICY


def cmd_jobs_status(args: argparse.Namespace) -> int:
    states = JobGraph.load(_project(args).root).status()
    for artifact, state in states.items():
        print(f"{state}\t{artifact}")
    return EXIT_OK if all(s == VALID for s in states.values()) else EXIT_POLICY


def cmd_jobs_impact(args: argparse.Namespace) -> int:
    impact = JobGraph.load(_project(args).root).impact_analysis(args.paths)
    for name in impact.jobs:
        print(f"job\t{name}")
    for artifact in impact.artifacts:
        print(f"artifact\t{artifact}")
    return EXIT_OK


def cmd_jobs_add(args: argparse.Namespace) -> int:
    project = _project(args)
    with project.write_lock():
        job = register_job(project.root, args.name, args.input or [], args.output, args.action, _fields(args.param))
    print(f"registered {job.name}")
    return EXIT_OK


def _model(args: argparse.Namespace):
    return make_model(args.model, delay_samples=args.delay_samples, stuck_channel=args.stuck_channel)


def _finish_runs(records, out: str | None, stamp: bool) -> int:
    for rec in records:
        if stamp:
            rec.time = utc_now()
        latency = ", ".join(
            f"{s.signal}@{s.step_time_ms}:{'-' if s.achieved_ms is None else s.achieved_ms}ms"
            for s in rec.latencies
        )
        print(f"{rec.verdict}\t{rec.run_id}\t{rec.environment}\t{latency or rec.message}")
    if out:
        atomic_write(Path(out), records_to_xml(records))
    if any(r.verdict == "error" for r in records):
        return EXIT_IO
    return EXIT_OK if all(r.verdict == "pass" for r in records) else EXIT_POLICY


def cmd_test_mil(args: argparse.Namespace) -> int:
    model = _model(args)
    records = [run_mil(model, load_testcase(path)) for path in args.cases]
    return _finish_runs(records, args.out, stamp=True)


def cmd_test_hil(args: argparse.Namespace) -> int:
    cases = [load_testcase(path) for path in args.cases]
    interface = make_model(args.model).interface
    with HilClient(args.host, args.port, args.timeout_ms) as client:
        records = [
            run_hil((args.host, args.port), case, args.timeout_ms, interface, client=client) for case in cases
        ]
    return _finish_runs(records, args.out, stamp=True)


def cmd_target_serve(args: argparse.Namespace) -> int:
    print(f"serving model {args.model} on udp://{args.host}:{args.port} (Ctrl-C to stop)", flush=True)
    serve_target(_model(args), args.port, args.host)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    a = {r.case_id: r for r in records_from_xml(Path(args.a).read_bytes(), args.a)}
    b = {r.case_id: r for r in records_from_xml(Path(args.b).read_bytes(), args.b)}
    common = sorted(set(a) & set(b))
    if not common:
        raise UsageError("the two record files share no test case")
    ok = True
    for case_id in common:
        verdict = compare_runs(a[case_id], b[case_id], args.tolerance)
        ok = ok and verdict.equivalent
        if verdict.equivalent:
            print(f"equivalent\t{case_id}")
        else:
            d = verdict.first
            print(f"divergent\t{case_id}\t{len(verdict.divergences)} samples, first at {d.time_ms} ms {d.signal}: {d.a} vs {d.b}")
    for case_id in sorted(set(a) ^ set(b)):
        ok = False
        print(f"missing\t{case_id}")
    return EXIT_OK if ok else EXIT_POLICY


def cmd_ingest(args: argparse.Namespace) -> int:
    result = ingest_records(_project(args), args.xml)
    for item in result.created:
        print(f"created\t{item.id}\t{item.custom_fields['run_id']}")
    for run_id in result.skipped:
        print(f"skipped\t{run_id}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    project = _project(args)
    if args.kind == "trace":
        levels = tuple(x.strip() for lv in args.level for x in lv.split(",")) if args.level else None
        kind = ItemKind.parse(args.item_kind) if args.item_kind else None
        report = coverage(project, ItemFilter(kind, levels), LinkRole.parse(args.role), Direction(args.direction))
        base = args.name or f"trace_{report.role.value}_{report.direction.value}"
        written = _write_reports(project.root, base, args.format, trace_report_csv(report), trace_report_html(report))
        print(" ".join(f"{k}={v}" for k, v in report.distribution.items()))
    elif args.kind == "status":
        csv_text, html_text = status_report(JobGraph.load(project.root))
        written = _write_reports(project.root, "status", args.format, csv_text, html_text)
    else:
        if args.level is None or len(args.level) != 1:
            raise UsageError("report compliance needs exactly one --level (A-D)")
        level = args.level[0]
        catalog = compliance.select_subset(compliance.load_catalog(_catalog_path(args)), args.threshold)
        summary = compliance.matrix_report(catalog, level)
        written = _write_reports(
            project.root,
            compliance.report_basename(catalog.standard, level),
            args.format,
            compliance.matrix_csv(summary),
            compliance.matrix_html(catalog, level, summary),
        )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_compliance_status(args: argparse.Namespace) -> int:
    path = _catalog_path(args)
    catalog, obj = compliance.set_status(compliance.load_catalog(path), args.objective, args.status, args.rationale)
    compliance.save_catalog(catalog, path)
    print(f"{obj.objective_id}\t{obj.status}")
    return EXIT_OK


def cmd_compliance_select(args: argparse.Namespace) -> int:
    catalog = compliance.select_subset(compliance.load_catalog(_catalog_path(args)), args.threshold)
    for obj in catalog.objectives:
        print(f"{'selected' if obj.selected else 'skipped'}\t{obj.objective_id}\tscore {obj.score}")
    return EXIT_OK


def cmd_gate(args: argparse.Namespace) -> int:
    result = evaluate_gate(_project(args), trace_gate=not args.no_trace_gate, stale_gate=not args.no_stale_gate)
    for line in result.summary_lines():
        print(line)
    return EXIT_OK if result.passed else EXIT_POLICY


# -- parser -----------------------------------------------------------------------


def _add_model_args(p: argparse.ArgumentParser, faults: bool = True) -> None:
    p.add_argument("--model", default="amds", help="model name (default: amds)")
    if faults:
        p.add_argument("--delay-samples", type=int, default=None, help="fault: delay button path by N samples")
        p.add_argument("--stuck-channel", type=int, choices=(1, 2), default=None, help="fault: channel never disconnects")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--project", default=argparse.SUPPRESS, help="project directory (default: .)")
    common.add_argument("--format", choices=("csv", "html", "both"), default=argparse.SUPPRESS, help="report format")

    parser = argparse.ArgumentParser(prog="certflow", description="Plain-text certification workflow: trace, jobs, tests, compliance, gate.", parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name: str, func, help: str, parent=sub) -> argparse.ArgumentParser:
        p = parent.add_parser(name, help=help, parents=[common])
        p.set_defaults(func=func)
        return p

    p = cmd("init", cmd_init, "create a project skeleton")
    p.add_argument("path", nargs="?")
    p.add_argument("--levels", help="comma-separated requirement levels, highest first")
    p.add_argument("--example", help="copy a bundled example project (amds)")

    p = cmd("add", cmd_add, "create a work item")
    p.add_argument("kind", help="Requirement|ModelSurrogate|TestCaseSurrogate|TestRun|ReviewChecklist (or REQ, MDL, ...)")
    p.add_argument("--title", required=True)
    p.add_argument("--body")
    p.add_argument("--body-file")
    p.add_argument("--level")
    p.add_argument("--derived", action="store_true")
    p.add_argument("--field", action="append", metavar="KEY=VALUE")

    p = cmd("update", cmd_update, "modify a work item (bumps its revision)")
    p.add_argument("id")
    p.add_argument("--title")
    p.add_argument("--body")
    p.add_argument("--body-file")
    p.add_argument("--level")
    p.add_argument("--derived", dest="derived", action="store_true", default=None)
    p.add_argument("--not-derived", dest="derived", action="store_false")
    p.add_argument("--field", action="append", metavar="KEY=VALUE")
    p.add_argument("--unset-field", action="append", metavar="KEY")

    p = cmd("show", cmd_show, "print a work item")
    p.add_argument("id")
    p = cmd("delete", cmd_delete, "delete a work item and its links")
    p.add_argument("id")

    for name, func, help in (
        ("link", cmd_link, "add a trace link"),
        ("unlink", cmd_unlink, "remove a trace link"),
        ("review", cmd_review, "mark a suspect link as reviewed"),
    ):
        p = cmd(name, func, help)
        p.add_argument("source")
        p.add_argument("role", choices=[r.value for r in LinkRole])
        p.add_argument("target")
    cmd("suspects", cmd_suspects, "list suspect links")
    p = cmd("impact", cmd_impact, "work items affected by a change to ID")
    p.add_argument("id")

    p = cmd("lint", cmd_lint, "check requirement statement structure")
    p.add_argument("text", nargs="?")
    p.add_argument("--all", action="store_true", help="lint every requirement in the project")

    p = cmd("baseline", cmd_baseline, "snapshot item digests under a label")
    p.add_argument("label")
    p = cmd("diff", cmd_diff, "compare two baselines")
    p.add_argument("label_a")
    p.add_argument("label_b")

    jobs = sub.add_parser("jobs", help="verification jobs").add_subparsers(dest="jobs_command", required=True)
    p = cmd("run", cmd_jobs_run, "run missing/outdated jobs", jobs)
    p.add_argument("--dry-run", action="store_true", help="only print the plan")
    cmd("status", cmd_jobs_status, "artifact states", jobs)
    p = cmd("impact", cmd_jobs_impact, "jobs and artifacts affected by changed paths", jobs)
    p.add_argument("paths", nargs="+")
    p = cmd("add", cmd_jobs_add, "register a job", jobs)
    p.add_argument("name")
    p.add_argument("--action", required=True)
    p.add_argument("--input", action="append")
    p.add_argument("--output", action="append", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")

    test = sub.add_parser("test", help="run test cases").add_subparsers(dest="test_command", required=True)
    p = cmd("mil", cmd_test_mil, "run test cases against the in-process model", test)
    p.add_argument("cases", nargs="+")
    p.add_argument("--out", help="write run records as XML")
    _add_model_args(p)
    p = cmd("hil", cmd_test_hil, "replay test cases against a UDP target", test)
    p.add_argument("cases", nargs="+")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=wire.DEFAULT_PORT)
    p.add_argument("--timeout-ms", type=int, default=500)
    p.add_argument("--out", help="write run records as XML")
    _add_model_args(p, faults=False)

    target = sub.add_parser("target", help="HIL target").add_subparsers(dest="target_command", required=True)
    p = cmd("serve", cmd_target_serve, "serve a model over the UDP bridge", target)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=wire.DEFAULT_PORT)
    _add_model_args(p)

    p = cmd("compare", cmd_compare, "compare two run record files sample by sample")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tolerance", type=float, default=0.0)

    p = cmd("ingest", cmd_ingest, "create test run items from record XML")
    p.add_argument("xml")

    p = cmd("report", cmd_report, "write trace, status or compliance reports")
    p.add_argument("kind", choices=("trace", "status", "compliance"))
    p.add_argument("--role", default="verifies", choices=[r.value for r in LinkRole])
    p.add_argument("--direction", default="incoming", choices=[d.value for d in Direction])
    p.add_argument("--kind", dest="item_kind", default="Requirement", help="item kind filter (trace)")
    p.add_argument("--level", action="append", help="requirement level (trace) or software level A-D (compliance)")
    p.add_argument("--name", help="report base name (trace)")
    p.add_argument("--catalog")
    p.add_argument("--threshold", type=int, default=compliance.DEFAULT_THRESHOLD)

    comp = sub.add_parser("compliance", help="objective catalog").add_subparsers(dest="compliance_command", required=True)
    p = cmd("select", cmd_compliance_select, "show which objectives the threshold selects", comp)
    p.add_argument("--catalog")
    p.add_argument("--threshold", type=int, default=compliance.DEFAULT_THRESHOLD)
    p = cmd("status", cmd_compliance_status, "record an objective's compliance level", comp)
    p.add_argument("objective")
    p.add_argument("status", choices=compliance.STATUSES)
    p.add_argument("--rationale", default="")
    p.add_argument("--catalog")

    p = cmd("gate", cmd_gate, "CI merge gate")
    p.add_argument("--no-trace-gate", action="store_true", help="do not fail on unverified requirements")
    p.add_argument("--no-stale-gate", action="store_true", help="do not fail on outdated/missing artifacts")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.project = getattr(args, "project", ".")
    args.format = getattr(args, "format", "both")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CertflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
