"""Regenerate the bundled AMDS example project under src/certflow/data/amds.

Everything is created through the public API, and the HIL record file comes
from a real loopback run against the reference model.  Run from the repo
root:  python3 tools/build_amds_example.py
"""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path

from certflow import compliance
from certflow._fs import atomic_write
from certflow.jobs import register_job
from certflow.store import ItemKind, Project
from certflow.testkit import HilClient, TargetServer, load_testcase, make_model, records_to_xml, run_hil
from certflow.testkit.ingest import ingest_records
from certflow.trace import add_link

REPO = Path(__file__).resolve().parents[1]
DEST = REPO / "src" / "certflow" / "data" / "amds"
CATALOGS = REPO / "src" / "certflow" / "data" / "catalogs"

# (level, derived, title, statement)
REQUIREMENTS = [
    ("aircraft", False, "Manual disconnect", "The autopilot system shall let the pilot disconnect the autopilot at any time."),
    ("aircraft", False, "Disconnect timing", "When either pushbutton is pressed, the AMDS shall within 100 ms release the clutch."),
    ("system", False, "Channel 1 disconnect", "When pushbutton 1 is pressed, the channel 1 monitor shall within 100 ms command disconnect."),
    ("system", False, "Channel 2 disconnect", "When pushbutton 2 is pressed, the channel 2 monitor shall within 100 ms command disconnect."),
    ("system", False, "Clutch follows channels", "While either channel commands disconnect, the AMDS shall keep the clutch released."),
    ("software", True, "Latch reset", "When engage is commanded with both pushbuttons released, the latch logic shall clear both disconnect latches."),
    ("software", False, "Latch hold", "The latch logic shall hold each disconnect command until engage is commanded."),
    ("software", True, "Idle engagement", "When no pushbutton has been pressed, the latch logic shall keep the clutch engaged."),
    ("software", False, "Latch latency", "When either pushbutton is pressed, the latch logic shall within 10 ms latch disconnect."),
]

REFINES = [(3, 2), (4, 2), (5, 1), (7, 5), (9, 3), (9, 4)]

TESTS = {
    "TC_AMDS_BTN1": (
        "Pushbutton 1 disconnect",
        "btn1.tc",
        "0,0,0,1,clutch_engaged == 1\n"
        "10,,,0,\n"
        "50,1,0,0,clutch_engaged == 0 @ 100; ch1_disconnect == 1 @ 100\n"
        "60,0,,,\n"
        "200,,,,clutch_engaged == 0; ch2_disconnect == 1\n",
        [1, 2, 3, 9],
    ),
    "TC_AMDS_BTN2": (
        "Pushbutton 2 disconnect",
        "btn2.tc",
        "0,0,0,1,clutch_engaged == 1\n"
        "10,,,0,\n"
        "50,0,1,0,clutch_engaged == 0 @ 100; ch2_disconnect == 1 @ 100\n"
        "60,,0,,\n"
        "200,,,,clutch_engaged == 0; ch1_disconnect == 1\n",
        [1, 2, 4, 9],
    ),
    "TC_AMDS_IDLE": (
        "No press keeps the clutch engaged",
        "idle.tc",
        "0,0,0,1,clutch_engaged == 1\n"
        "10,,,0,clutch_engaged == 1\n"
        "100,,,,clutch_engaged == 1; ch1_disconnect == 0; ch2_disconnect == 0\n"
        "300,,,,clutch_engaged == 1\n",
        [8],
    ),
    "TC_AMDS_REENGAGE": (
        "Latch holds until engage",
        "reengage.tc",
        "0,0,0,1,clutch_engaged == 1\n"
        "10,,,0,\n"
        "50,1,1,0,clutch_engaged == 0 @ 100\n"
        "80,0,0,0,clutch_engaged == 0\n"
        "150,,,,clutch_engaged == 0\n"
        "200,,,1,clutch_engaged == 1 @ 30\n"
        "250,,,0,clutch_engaged == 1\n",
        [5, 6, 7],
    ),
}

JOBS = [
    ("lint", "lint-all-requirements", ["items/*.wi"], ["reports/lint.csv", "reports/lint.html"], {}),
    (
        "trace-upstream",
        "emit-trace-report",
        ["items/*.wi", "links.tsv"],
        ["reports/trace_upstream.csv", "reports/trace_upstream.html"],
        {"kind": "Requirement", "levels": "system,software", "role": "refines", "direction": "outgoing"},
    ),
    (
        "trace-verification",
        "emit-trace-report",
        ["items/*.wi", "links.tsv"],
        ["reports/trace_verification.csv", "reports/trace_verification.html"],
        {"kind": "Requirement", "role": "verifies", "direction": "incoming", "justify_derived": "true"},
    ),
    ("mil-tests", "run-testcases-mil", ["tests/*.tc"], ["reports/mil.xml", "reports/mil.csv"], {"model": "amds"}),
    (
        "compare",
        "compare-mil-hil",
        ["reports/mil.xml", "records/hil.xml"],
        ["reports/mil_hil.csv", "reports/mil_hil.html"],
        {"tolerance": "0"},
    ),
    (
        "compliance",
        "emit-compliance-matrix",
        ["compliance/do331.csv"],
        ["reports/compliance_DO-331_C.csv", "reports/compliance_DO-331_C.html"],
        {"level": "C"},
    ),
]

HEADER = "time_ms,btn1,btn2,engage_cmd,expect\n"


def build(root: Path) -> None:
    project = Project.init(root, name="amds")
    reqs = [
        project.create_item(ItemKind.REQUIREMENT, title, body, level=level, derived=derived)
        for level, derived, title, body in REQUIREMENTS
    ]
    for src, tgt in REFINES:
        add_link(project, reqs[src - 1].id, "refines", reqs[tgt - 1].id)

    model = project.create_item(
        ItemKind.MODEL_SURROGATE,
        "AMDS design model",
        "Dual-channel disconnect latch. Reference implementation: certflow.testkit.model.AMDSModel.",
        custom_fields={"model": "amds"},
    )
    for n in (6, 7, 8, 9):
        add_link(project, model.id, "implements", reqs[n - 1].id)

    (root / "tests").mkdir()
    for case_id, (title, filename, rows, verified) in TESTS.items():
        text = f"# case_id: {case_id}\n# period_ms: 10\n{HEADER}{rows}"
        atomic_write(root / "tests" / filename, text)
        load_testcase(root / "tests" / filename)
        tc = project.create_item(
            ItemKind.TEST_CASE_SURROGATE,
            title,
            f"Procedure in tests/{filename}.",
            custom_fields={"case_id": case_id, "file": f"tests/{filename}"},
        )
        for n in verified:
            add_link(project, tc.id, "verifies", reqs[n - 1].id)

    checklist = project.create_item(
        ItemKind.REVIEW_CHECKLIST,
        "Derived requirement review",
        "- [x] latch reset behaviour agreed with the system team\n- [x] idle engagement reviewed\n",
    )
    for n in (6, 8):
        add_link(project, checklist.id, "justifies", reqs[n - 1].id)

    (root / "compliance").mkdir()
    catalog = compliance.load_catalog(CATALOGS / "do331.csv")
    catalog, _ = compliance.set_status(catalog, "MB.A-3.6", "Full", "trace reports generated on every merge")
    catalog, _ = compliance.set_status(catalog, "MB.A-7.3", "Full", "verifies coverage checked by the merge gate")
    catalog, _ = compliance.set_status(catalog, "MB.A-6.5", "Partial", "HIL bridge covers the AMDS target only")
    compliance.save_catalog(catalog, root / "compliance" / "do331.csv")

    with TargetServer(make_model("amds"), port=0) as server:
        cases = [load_testcase(p) for p in sorted((root / "tests").glob("*.tc"))]
        with HilClient(*server.address) as client:
            records = [run_hil(server.address, case, client=client) for case in cases]
    bad = [r.run_id for r in records if r.verdict != "pass"]
    if bad:
        raise SystemExit(f"HIL runs did not pass: {bad}")
    atomic_write(root / "records" / "hil.xml", records_to_xml(records))
    ingest_records(project, root / "records" / "hil.xml")

    for name, action, inputs, outputs, params in JOBS:
        register_job(root, name, inputs, outputs, action, params)
    project.baseline("initial")


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "amds"
        build(root)
        if DEST.exists():
            shutil.rmtree(DEST)
        shutil.copytree(root, DEST, ignore=shutil.ignore_patterns(".lock"))
    print(f"wrote {DEST}")


if __name__ == "__main__":
    main()
