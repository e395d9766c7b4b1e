from __future__ import annotations

from certflow.gate import GateResult, evaluate_gate
from certflow.jobs import JobGraph
from certflow.store import ItemKind
from certflow.testkit import records_to_xml
from certflow.testkit.cases import TestRunRecord
from certflow.testkit.ingest import ingest_records


def built(amds):
    assert JobGraph.load(amds.root).run().ok
    return amds


def test_bundled_example_passes_once_built(amds):
    assert not evaluate_gate(amds).passed  # nothing built yet
    result = evaluate_gate(built(amds))
    assert result.passed and result.reasons == []
    assert result.summary_lines()[0] == "gate: pass"


def test_failing_ingested_run(amds, tmp_path):
    xml = tmp_path / "fail.xml"
    xml.write_bytes(records_to_xml([TestRunRecord("HIL-bad", "TC_AMDS_IDLE", "HIL", "fail")]))
    ingest_records(amds, xml)
    result = evaluate_gate(built(amds))
    assert len(result.failing_runs) == 1 and "fail" in result.failing_runs[0]
    assert result.reasons == ["failing runs: 1"]


def test_derived_requirement_without_verification_is_justified(amds):
    amds.create_item(ItemKind.REQUIREMENT, "extra", level="software", derived=True,
                     body="the AMDS shall log each disconnect.")
    assert evaluate_gate(built(amds)).passed


def test_uncovered_requirement_and_switch(amds):
    req = amds.create_item(ItemKind.REQUIREMENT, "extra", level="software", body="the AMDS shall log each disconnect.")
    result = evaluate_gate(built(amds))
    assert result.uncovered == [str(req.id)]
    assert not result.passed
    assert evaluate_gate(amds, trace_gate=False).passed
    assert "(not enforced)" in "\n".join(evaluate_gate(amds, trace_gate=False).summary_lines())


def test_stale_artifact_and_switch(amds):
    built(amds)
    amds.update_item("REQ-0001", body="the aircraft shall allow the pilot to disconnect the autopilot at once.")
    result = evaluate_gate(amds)
    assert result.stale and all("outdated" in s for s in result.stale)
    assert evaluate_gate(amds, stale_gate=False).passed


def test_failing_mil_output_is_caught(amds):
    built(amds)
    case = amds.root / "tests/btn1.tc"
    case.write_text(case.read_text().replace("@ 100", "@ 0"))
    JobGraph.load(amds.root).run()
    result = evaluate_gate(amds)
    assert any("MIL-TC_AMDS_BTN1" in f for f in result.failing_runs)
    assert any("MIL/HIL TC_AMDS_BTN1" not in f for f in result.failing_runs)


def test_divergent_compare_is_caught(amds):
    built(amds)
    hil = amds.root / "records/hil.xml"
    text = hil.read_text()
    # flip one HIL sample so MIL and HIL disagree
    hil.write_text(text.replace('signal="clutch_engaged" value="1"', 'signal="clutch_engaged" value="0"', 1))
    JobGraph.load(amds.root).run()
    result = evaluate_gate(amds)
    assert any(f.startswith("MIL/HIL") and "divergent" in f for f in result.failing_runs)


def test_result_defaults():
    assert GateResult().passed
    assert GateResult(stale=["x"], stale_gate=False).passed
