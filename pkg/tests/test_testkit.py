from __future__ import annotations

import random
import socket
import struct
import threading
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amds_cases import random_case, reference_outputs
from certflow.errors import IngestError, TestCaseError, TransportError, UsageError
from certflow.store import ItemKind
from certflow.testkit import (
    AMDSModel,
    Expectation,
    HilClient,
    Step,
    TargetServer,
    TestCase,
    TestRunRecord,
    compare_runs,
    ingest_records,
    load_testcase,
    make_model,
    parse_testcase,
    records_from_xml,
    records_to_xml,
    run_hil,
    run_mil,
)
from certflow.testkit import wire
from certflow.testkit.wire import Frame

DISCONNECT = """\
# case_id: TC_DISC
# period_ms: 10
time_ms,btn1,btn2,engage_cmd,expect
0,0,0,1,clutch_engaged == 1
10,,,0,
50,1,,,clutch_engaged == 0 @ 100
"""

rows_strategy = st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=80)


def drive(model, rows):
    model.reset()
    return [model.step(tuple(float(x) for x in r)) for r in rows]


# -- model ----------------------------------------------------------------------------


@settings(max_examples=200)
@given(rows_strategy, st.integers(0, 5), st.sampled_from([None, 1, 2]))
def test_model_matches_reference(rows, delay, stuck):
    assert drive(AMDSModel(delay, stuck), rows) == reference_outputs(rows, delay, stuck)


@settings(max_examples=200)
@given(rows_strategy, st.sampled_from([None, 1, 2]))
def test_latch_property(rows, stuck):
    """After a press the clutch stays released until engage with both buttons up."""
    out = drive(AMDSModel(stuck_channel=stuck), rows)
    latched = False
    for k, (b1, b2, engage) in enumerate(rows):
        if latched:
            assert out[k][2] == 0.0
        if b1 or b2:
            latched = True
        elif engage:
            latched = False


def test_model_hand_steps():
    m = AMDSModel()
    assert m.step((0, 0, 0)) == (0.0, 0.0, 1.0)
    assert m.step((1, 0, 0)) == (0.0, 0.0, 1.0)  # press visible next sample
    assert m.step((0, 0, 1)) == (1.0, 1.0, 0.0)  # engage clears after this sample
    assert m.step((0, 0, 0)) == (0.0, 0.0, 1.0)
    m.step((0, 1, 1))  # engage while pressed does not clear
    assert m.step((0, 0, 0)) == (1.0, 1.0, 0.0)
    m.reset()
    assert m.step((0, 0, 0)) == (0.0, 0.0, 1.0)


def test_make_model_errors():
    with pytest.raises(UsageError):
        make_model("nope")
    with pytest.raises(UsageError):
        make_model("amds", stuck_channel=3)
    with pytest.raises(UsageError):
        make_model("amds", delay_samples=-1)


# -- test cases ---------------------------------------------------------------------------


def test_parse_testcase():
    case = parse_testcase(DISCONNECT)
    assert case.case_id == "TC_DISC" and case.sample_period_ms == 10
    assert case.input_signals == ("btn1", "btn2", "engage_cmd")
    assert case.steps[1] == Step(10, {"engage_cmd": 0.0})
    assert case.steps[2].expects == (Expectation("clutch_engaged", 0.0, deadline_ms=100),)
    assert case.end_time_ms == 150
    assert parse_testcase(case.render()) == case


def test_expectation_syntax():
    exp = Expectation.parse("clutch_engaged ~ 0.5 +/- 0.25 @ 20")
    assert exp == Expectation("clutch_engaged", 0.5, "within", 0.25, 20)
    assert exp.holds(0.75) and not exp.holds(0.76)
    assert Expectation.parse(exp.render()) == exp
    for bad in ("x = 1", "x == 1 +/- 2", "x ~ 1", "x ~ 1 +/- -1", "x == one"):
        with pytest.raises(TestCaseError):
            Expectation.parse(bad)


def test_case_validation():
    with pytest.raises(TestCaseError, match="increasing"):
        TestCase("c", (Step(10), Step(10)))
    with pytest.raises(TestCaseError, match="multiple"):
        TestCase("c", (Step(15),))
    with pytest.raises(TestCaseError, match="case_id"):
        parse_testcase("time_ms,btn1\n0,1\n")
    with pytest.raises(TestCaseError, match="unknown input"):
        run_mil(AMDSModel(), parse_testcase("# case_id: x\ntime_ms,btn9\n0,1\n"))
    with pytest.raises(TestCaseError, match="unknown output"):
        run_mil(AMDSModel(), parse_testcase("# case_id: x\ntime_ms,btn1,expect\n0,1,speed == 1\n"))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_random_case_render_round_trip(seed):
    case = random_case(random.Random(seed), "TC_R", max_steps=30)
    assert parse_testcase(case.render()) == case


# -- MIL ------------------------------------------------------------------------------------


def test_disconnect_within_deadline():
    rec = run_mil(AMDSModel(), parse_testcase(DISCONNECT))
    assert rec.verdict == "pass"
    assert rec.environment == "MIL" and rec.run_id == "MIL-TC_DISC"
    latency = [s for s in rec.latencies if s.step_time_ms == 50][0]
    # press at sample 5 latches during that step, visible at sample 6
    assert latency.achieved_ms == 10 <= 2 * 10


def test_zero_deadline_at_press_fails():
    case = parse_testcase(DISCONNECT.replace("@ 100", "@ 0"))
    rec = run_mil(AMDSModel(), case)
    assert rec.verdict == "fail"
    assert [s.achieved_ms for s in rec.latencies if s.step_time_ms == 50] == [None]


def test_idle_case_keeps_clutch_engaged():
    case = parse_testcase("# case_id: idle\ntime_ms,btn1,expect\n0,0,clutch_engaged == 1\n300,,clutch_engaged == 1\n")
    rec = run_mil(AMDSModel(), case)
    assert rec.verdict == "pass"
    assert all(values["clutch_engaged"] == 1.0 for _, values in rec.samples)
    assert len(rec.samples) == 31


def test_fault_delay_of_fifteen_samples_fails():
    case = parse_testcase(DISCONNECT + "300,,,,\n")
    rec = run_mil(AMDSModel(delay_samples=15), case)
    assert rec.verdict == "fail"
    t_release = next(t for t, v in rec.samples if v["clutch_engaged"] == 0.0)
    assert t_release - 50 == (15 + 1) * 10 > 100


def test_single_stuck_channel_still_disconnects():
    for stuck in (1, 2):
        assert run_mil(AMDSModel(stuck_channel=stuck), parse_testcase(DISCONNECT)).verdict == "pass"


def test_mil_deterministic():
    case = parse_testcase(DISCONNECT)
    assert records_to_xml([run_mil(AMDSModel(), case)]) == records_to_xml([run_mil(AMDSModel(), case)])


def test_bundled_cases_pass(amds):
    for path in sorted((amds.root / "tests").glob("*.tc")):
        assert run_mil(AMDSModel(), load_testcase(path)).verdict == "pass", path.name


# -- records XML ----------------------------------------------------------------------------


def test_record_xml_round_trip():
    rec = run_mil(AMDSModel(), parse_testcase(DISCONNECT))
    rec.time = "2026-01-01T00:00:00Z"
    weird = TestRunRecord("HIL-x", "TC_DISC", "HIL", "error", [(0, {"a": -0.0, "b": 1e-310})], [], "timeout <seq 3>")
    back = records_from_xml(records_to_xml([rec, weird]))
    assert back == [rec, weird]
    assert struct.pack(">d", back[1].samples[0][1]["a"]) == struct.pack(">d", -0.0)


def test_record_xml_errors():
    for data, needle in (
        (b"<oops", "malformed"),
        (b"<runs/>", "root"),
        (b'<testruns><run id="a" case="c" env="XIL" verdict="pass"/></testruns>', "env"),
        (b'<testruns><run id="a" case="c" env="MIL" verdict="meh"/></testruns>', "verdict"),
        (b'<testruns><run case="c" env="MIL" verdict="pass"/></testruns>', "'id'"),
    ):
        with pytest.raises(IngestError, match=needle):
            records_from_xml(data)


# -- wire --------------------------------------------------------------------------------------


def test_frame_layout():
    data = wire.encode(Frame(wire.STIMULUS, 7, 50, (1.0, 0.0, 0.5)))
    assert data[:16] == b"HILB" + bytes([1, 0, 0, 0]) + (7).to_bytes(4, "big") + (50).to_bytes(4, "big")
    assert data[16:18] == b"\x00\x03"
    assert data[18:] == struct.pack(">3d", 1.0, 0.0, 0.5)
    assert len(data) == 18 + 24


@settings(max_examples=200)
@given(
    st.sampled_from(wire.FRAME_TYPES),
    st.integers(0, 2**32 - 1),
    st.integers(0, 2**32 - 1),
    st.lists(st.floats(allow_nan=False), max_size=10),
)
def test_frame_round_trip(ftype, seq, t, values):
    frame = Frame(ftype, seq, t, tuple(values))
    back = wire.decode(wire.encode(frame))
    assert back == frame
    assert [struct.pack(">d", v) for v in back.values] == [struct.pack(">d", v) for v in values]


def test_decode_rejects_garbage():
    good = wire.encode(Frame(wire.STIMULUS, 3, 0, (1.0,)))
    for bad in (b"", b"XXXX" + good[4:], good[:4] + b"\x02" + good[5:], good[:-1], good[:5] + b"\x09" + good[6:]):
        with pytest.raises(wire.FrameError):
            wire.decode(bad)


# -- HIL server ------------------------------------------------------------------------------------


@pytest.fixture
def peer():
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    sock.settimeout(2)
    yield sock
    sock.close()


def exchange(server: TargetServer, peer: socket.socket, frame: Frame | bytes) -> Frame:
    data = frame if isinstance(frame, bytes) else wire.encode(frame)
    server.handle(data, peer.getsockname())
    return wire.decode(peer.recv(65535))


def test_server_protocol(peer):
    server = TargetServer(AMDSModel(), port=0)
    try:
        reply = exchange(server, peer, Frame(wire.STIMULUS, 1, 0, (1.0, 0.0, 0.0)))
        assert (reply.type, reply.seq, reply.values) == (wire.RESPONSE, 1, (0.0, 0.0, 1.0))
        reply = exchange(server, peer, Frame(wire.STIMULUS, 2, 10, (0.0, 0.0, 0.0)))
        assert reply.values == (1.0, 1.0, 0.0)
        # wrong magic: error frame, state untouched
        bad = b"NOPE" + wire.encode(Frame(wire.STIMULUS, 3, 20, (0.0, 0.0, 0.0)))[4:]
        assert exchange(server, peer, bad).type == wire.ERROR
        assert exchange(server, peer, Frame(wire.STIMULUS, 3, 20, (0.0, 0.0, 0.0))).values == (1.0, 1.0, 0.0)
        # retransmission gets the cached reply without stepping
        assert exchange(server, peer, Frame(wire.STIMULUS, 3, 20, (0.0, 0.0, 1.0))).values == (1.0, 1.0, 0.0)
        # wrong arity
        assert exchange(server, peer, Frame(wire.STIMULUS, 4, 30, (0.0,))).type == wire.ERROR
        reply = exchange(server, peer, Frame(wire.RESET, 5))
        assert (reply.type, reply.seq, reply.values) == (wire.RESPONSE, 5, ())
        assert exchange(server, peer, Frame(wire.STIMULUS, 6, 0, (0.0, 0.0, 0.0))).values == (0.0, 0.0, 1.0)
    finally:
        server.stop()


def test_server_single_session(peer):
    server = TargetServer(AMDSModel(), port=0, session_timeout=60)
    other = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    other.bind(("127.0.0.1", 0))
    other.settimeout(2)
    try:
        exchange(server, peer, Frame(wire.RESET, 1))
        assert exchange(server, other, Frame(wire.RESET, 1)).type == wire.ERROR
    finally:
        other.close()
        server.stop()


def test_loopback_equals_mil():
    case = parse_testcase(DISCONNECT)
    with TargetServer(AMDSModel(), port=0) as server:
        hil = run_hil(server.address, case)
    mil = run_mil(AMDSModel(), case)
    assert hil.verdict == "pass" and hil.environment == "HIL"
    assert compare_runs(mil, hil).equivalent
    assert hil.samples == mil.samples


def test_faulty_target_fails_same_case():
    case = parse_testcase(DISCONNECT)
    with TargetServer(AMDSModel(delay_samples=15), port=0) as server:
        hil = run_hil(server.address, case)
    assert hil.verdict == "fail"
    verdict = compare_runs(run_mil(AMDSModel(), case), hil)
    assert not verdict.equivalent
    assert verdict.first.time_ms == 50 + 10  # press sample + 1
    assert verdict.first.signal == "ch1_disconnect"


def test_no_target_is_error():
    silent = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    silent.bind(("127.0.0.1", 0))
    try:
        rec = run_hil(silent.getsockname(), parse_testcase(DISCONNECT), timeout_ms=100)
    finally:
        silent.close()
    assert rec.verdict == "error"
    assert "timeout" in rec.message


def fake_target(replies_for):
    """UDP peer answering each request with whatever ``replies_for(frame)`` returns."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    sock.settimeout(2)

    def loop():
        try:
            while True:
                data, addr = sock.recvfrom(65535)
                for reply in replies_for(wire.decode(data)):
                    sock.sendto(wire.encode(reply), addr)
        except OSError:
            pass

    threading.Thread(target=loop, daemon=True).start()
    return sock


def test_client_discards_stale_and_duplicate_frames():
    def replies(frame):
        stale = Frame(wire.RESPONSE, frame.seq - 1, 0, (9.0, 9.0, 9.0))
        good = Frame(wire.RESPONSE, frame.seq, frame.sim_time_ms, (0.0, 0.0, 1.0))
        return [stale, stale, good, good]

    sock = fake_target(replies)
    try:
        with HilClient(*sock.getsockname(), timeout_ms=500) as client:
            assert client.step(0, (0.0, 0.0, 0.0)) == (0.0, 0.0, 1.0)
            # the duplicate of seq 1 is still queued; it must not answer seq 2
            assert client.step(10, (0.0, 0.0, 0.0)) == (0.0, 0.0, 1.0)
    finally:
        sock.close()


def test_client_rejects_future_sequence():
    sock = fake_target(lambda f: [Frame(wire.RESPONSE, f.seq + 5, 0, (0.0, 0.0, 1.0))])
    try:
        with HilClient(*sock.getsockname(), timeout_ms=500) as client:
            with pytest.raises(TransportError, match="mismatch"):
                client.step(0, (0.0, 0.0, 0.0))
    finally:
        sock.close()


# -- compare -----------------------------------------------------------------------------------


def test_compare_reflexive_and_tolerance():
    rec = run_mil(AMDSModel(), parse_testcase(DISCONNECT))
    assert compare_runs(rec, rec).equivalent
    nudged = TestRunRecord("x", rec.case_id, "HIL", "pass", [(t, {k: v + 1e-9 for k, v in s.items()}) for t, s in rec.samples])
    assert not compare_runs(rec, nudged).equivalent
    assert compare_runs(rec, nudged, tolerance=1e-6).equivalent
    short = TestRunRecord("y", rec.case_id, "HIL", "pass", rec.samples[:-1])
    assert compare_runs(rec, short).first.time_ms == rec.samples[-1][0]
    with pytest.raises(UsageError):
        compare_runs(rec, TestRunRecord("z", "other", "MIL", "pass"))


def test_negative_zero_is_not_bit_equal():
    a = TestRunRecord("a", "c", "MIL", "pass", [(0, {"s": 0.0})])
    b = TestRunRecord("b", "c", "HIL", "pass", [(0, {"s": -0.0})])
    assert not compare_runs(a, b).equivalent
    assert compare_runs(a, b, tolerance=1e-12).equivalent


# -- ingest ---------------------------------------------------------------------------------------


def write_records(path: Path, *records: TestRunRecord) -> Path:
    path.write_bytes(records_to_xml(records))
    return path


def test_ingest_creates_runs_and_links(project, tmp_path):
    tc = project.create_item(ItemKind.TEST_CASE_SURROGATE, "disc", custom_fields={"case_id": "TC_DISC"})
    case = parse_testcase(DISCONNECT)
    xml = write_records(
        tmp_path / "runs.xml", run_mil(AMDSModel(), case, "R1"), run_mil(AMDSModel(delay_samples=15), case, "R2")
    )
    result = ingest_records(project, xml)
    assert [i.custom_fields["verdict"] for i in result.created] == ["pass", "fail"]
    assert all(link.target == tc.id and link.role.value == "records" for link in result.links)
    assert len(project.items(ItemKind.TEST_RUN)) == 2
    again = ingest_records(project, xml)
    assert again.created == [] and again.skipped == ["R1", "R2"]


def test_ingest_by_surrogate_id(project, tmp_path):
    project.create_item(ItemKind.TEST_CASE_SURROGATE, "disc")
    xml = write_records(tmp_path / "r.xml", TestRunRecord("R1", "TC-0001", "HIL", "pass"))
    assert len(ingest_records(project, xml).created) == 1


def test_ingest_rejects_without_writing(project, tmp_path):
    project.create_item(ItemKind.TEST_CASE_SURROGATE, "disc", custom_fields={"case_id": "TC_DISC"})
    xml = write_records(
        tmp_path / "r.xml", TestRunRecord("R1", "TC_DISC", "MIL", "pass"), TestRunRecord("R2", "TC-999", "MIL", "pass")
    )
    with pytest.raises(IngestError, match="TC-999"):
        ingest_records(project, xml)
    dup = write_records(tmp_path / "d.xml", TestRunRecord("R1", "TC_DISC", "MIL", "pass"), TestRunRecord("R1", "TC_DISC", "MIL", "fail"))
    with pytest.raises(IngestError, match="duplicate"):
        ingest_records(project, dup)
    with pytest.raises(IngestError):
        ingest_records(project, tmp_path / "missing.xml")
    assert project.items(ItemKind.TEST_RUN) == []
