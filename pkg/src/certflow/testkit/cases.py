"""Timed test cases, run records and the shared MIL/HIL execution loop.

Test case files (``*.tc``) look like::

    # case_id: TC_AMDS_BTN1
    # period_ms: 10
    time_ms,btn1,btn2,engage_cmd,expect
    0,0,0,1,clutch_engaged == 1
    50,1,0,0,clutch_engaged == 0 @ 100; ch1_disconnect == 1 @ 100

Columns after ``time_ms`` up to the first ``expect`` column are input
signals.  An empty input cell holds the previous value (0 before the first
step).  Expect cells hold ``;``-separated clauses::

    <signal> == <value> [@ <deadline_ms>]
    <signal> ~ <value> +/- <tolerance> [@ <deadline_ms>]

Without a deadline the expectation must hold at the step's own sample;
with one it must hold at some sample in ``[t, t + deadline]``.
"""

from __future__ import annotations

import csv
import io
import math
import re
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from certflow.errors import IngestError, TestCaseError, TransportError
from certflow.testkit.model import Model, ModelInterface

ENVIRONMENTS = ("MIL", "SIL", "HIL")
VERDICTS = ("pass", "fail", "error")
PASS, FAIL, ERROR = VERDICTS

_CLAUSE_RE = re.compile(
    r"^\s*(?P<signal>[A-Za-z_]\w*)\s*(?P<op>==|~)\s*(?P<value>\S+?)"
    r"(?:\s*\+/-\s*(?P<tol>\S+?))?(?:\s*@\s*(?P<deadline>\d+))?\s*$"
)


def format_real(value: float) -> str:
    """Shortest text that parses back to the identical float."""
    if value.is_integer() and abs(value) < 1e15 and math.copysign(1.0, value) > 0:
        return str(int(value))
    return repr(value)


def _real(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise TestCaseError(f"{what}: not a number: {text!r}") from None


@dataclass(frozen=True)
class Expectation:
    signal: str
    value: float
    comparison: str = "equals"
    tolerance: float = 0.0
    deadline_ms: int | None = None

    def holds(self, actual: float) -> bool:
        if self.comparison == "equals":
            return actual == self.value
        return abs(actual - self.value) <= self.tolerance

    def render(self) -> str:
        if self.comparison == "equals":
            text = f"{self.signal} == {format_real(self.value)}"
        else:
            text = f"{self.signal} ~ {format_real(self.value)} +/- {format_real(self.tolerance)}"
        if self.deadline_ms is not None:
            text += f" @ {self.deadline_ms}"
        return text

    @classmethod
    def parse(cls, text: str, where: str = "") -> "Expectation":
        m = _CLAUSE_RE.match(text)
        if not m:
            raise TestCaseError(f"{where}: malformed expectation {text.strip()!r}")
        value = _real(m["value"], where)
        deadline = int(m["deadline"]) if m["deadline"] else None
        if m["op"] == "==":
            if m["tol"] is not None:
                raise TestCaseError(f"{where}: '==' takes no tolerance; use '~'")
            return cls(m["signal"], value, "equals", 0.0, deadline)
        if m["tol"] is None:
            raise TestCaseError(f"{where}: '~' needs '+/- <tolerance>'")
        tol = _real(m["tol"], where)
        if not tol >= 0:
            raise TestCaseError(f"{where}: tolerance must be >= 0")
        return cls(m["signal"], value, "within", tol, deadline)


@dataclass(frozen=True)
class Step:
    time_ms: int
    inputs: Mapping[str, float] = field(default_factory=dict)
    expects: tuple[Expectation, ...] = ()


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    case_id: str
    steps: tuple[Step, ...]
    sample_period_ms: int = 10
    signals: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.sample_period_ms <= 0:
            raise TestCaseError(f"{self.case_id}: sample period must be positive")
        last = -1
        for step in self.steps:
            if step.time_ms <= last:
                raise TestCaseError(f"{self.case_id}: step times must be strictly increasing ({step.time_ms} ms)")
            if step.time_ms % self.sample_period_ms:
                raise TestCaseError(
                    f"{self.case_id}: step time {step.time_ms} ms is not a multiple of {self.sample_period_ms} ms"
                )
            last = step.time_ms

    @property
    def input_signals(self) -> tuple[str, ...]:
        if self.signals:
            return self.signals
        seen: dict[str, None] = {}
        for step in self.steps:
            seen.update(dict.fromkeys(step.inputs))
        return tuple(seen)

    @property
    def end_time_ms(self) -> int:
        end = 0
        for step in self.steps:
            end = max(end, step.time_ms)
            for exp in step.expects:
                end = max(end, step.time_ms + (exp.deadline_ms or 0))
        return end

    def sample_times(self) -> range:
        return range(0, self.end_time_ms + 1, self.sample_period_ms)

    def check_interface(self, interface: ModelInterface) -> None:
        unknown = [s for s in self.input_signals if s not in interface.inputs]
        if unknown:
            raise TestCaseError(f"{self.case_id}: unknown input signal(s): {', '.join(unknown)}")
        for step in self.steps:
            for exp in step.expects:
                if exp.signal not in interface.outputs:
                    raise TestCaseError(f"{self.case_id}: unknown output signal: {exp.signal}")

    def render(self) -> str:
        signals = self.input_signals
        buf = io.StringIO()
        buf.write(f"# case_id: {self.case_id}\n# period_ms: {self.sample_period_ms}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time_ms", *signals, "expect"])
        for step in self.steps:
            cells = [format_real(step.inputs[s]) if s in step.inputs else "" for s in signals]
            writer.writerow([step.time_ms, *cells, "; ".join(e.render() for e in step.expects)])
        return buf.getvalue()


def parse_testcase(text: str, source: str = "<testcase>") -> TestCase:
    meta: dict[str, str] = {}
    body = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            key, colon, value = stripped[1:].partition(":")
            if colon and not body:
                meta[key.strip()] = value.strip()
            continue
        if stripped:
            body.append((lineno, line))
    if "case_id" not in meta:
        raise TestCaseError(f"{source}: missing '# case_id:' header")
    if not body:
        raise TestCaseError(f"{source}: missing column header row")
    rows = list(csv.reader([line for _, line in body], skipinitialspace=True))
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "time_ms":
        raise TestCaseError(f"{source}:{body[0][0]}: first column must be time_ms")
    n_inputs = next((i for i, h in enumerate(header) if h == "expect"), len(header)) - 1
    signals = tuple(header[1 : 1 + n_inputs])
    if len(set(signals)) != len(signals) or any(not s for s in signals):
        raise TestCaseError(f"{source}: duplicate or empty signal names in header")
    if any(h not in ("expect", "") for h in header[1 + n_inputs:]):
        raise TestCaseError(f"{source}: input columns must precede expect columns")
    steps = []
    for (lineno, _), row in zip(body[1:], rows[1:]):
        where = f"{source}:{lineno}"
        cells = [c.strip() for c in row]
        if len(cells) > len(header):
            raise TestCaseError(f"{where}: more cells than header columns")
        cells += [""] * (len(header) - len(cells))
        try:
            time_ms = int(cells[0])
        except ValueError:
            raise TestCaseError(f"{where}: time_ms must be an integer") from None
        if time_ms < 0:
            raise TestCaseError(f"{where}: time_ms must be >= 0")
        inputs = {s: _real(c, where) for s, c in zip(signals, cells[1 : 1 + n_inputs]) if c}
        expects = tuple(
            Expectation.parse(clause, where)
            for cell in cells[1 + n_inputs:]
            for clause in cell.split(";")
            if clause.strip()
        )
        steps.append(Step(time_ms, inputs, expects))
    try:
        period = int(meta.get("period_ms", "10"))
    except ValueError:
        raise TestCaseError(f"{source}: period_ms must be an integer") from None
    return TestCase(meta["case_id"], tuple(steps), period, signals)


def load_testcase(path: str | Path) -> TestCase:
    path = Path(path)
    try:
        return parse_testcase(path.read_text(encoding="utf-8"), source=str(path))
    except FileNotFoundError:
        raise TestCaseError(f"test case file not found: {path}") from None


# -- records ---------------------------------------------------------------


@dataclass(frozen=True)
class LatencyStat:
    step_time_ms: int
    signal: str
    deadline_ms: int | None
    achieved_ms: int | None  # None: expectation never held


@dataclass
class TestRunRecord:
    __test__ = False

    run_id: str
    case_id: str
    environment: str
    verdict: str
    samples: list[tuple[int, dict[str, float]]] = field(default_factory=list)
    latencies: list[LatencyStat] = field(default_factory=list)
    message: str = ""
    time: str | None = None


def evaluate(case: TestCase, samples: Sequence[tuple[int, Mapping[str, float]]]) -> tuple[str, list[LatencyStat]]:
    index = {t: values for t, values in samples}
    stats = []
    ok = True
    for step in case.steps:
        for exp in step.expects:
            achieved = None
            for t in range(step.time_ms, step.time_ms + (exp.deadline_ms or 0) + 1, case.sample_period_ms):
                if t in index and exp.holds(index[t][exp.signal]):
                    achieved = t - step.time_ms
                    break
            ok = ok and achieved is not None
            stats.append(LatencyStat(step.time_ms, exp.signal, exp.deadline_ms, achieved))
    return (PASS if ok else FAIL), stats


StepFn = Callable[[int, tuple[float, ...]], Sequence[float]]


def execute(
    case: TestCase,
    interface: ModelInterface,
    step_fn: StepFn,
    run_id: str,
    environment: str,
) -> TestRunRecord:
    """Drive ``step_fn`` once per sample and judge the outputs.

    ``step_fn(time_ms, input_vector)`` returns the output vector; a
    :class:`TransportError` ends the run with verdict ``error``.
    """
    case.check_interface(interface)
    held = dict.fromkeys(interface.inputs, 0.0)
    steps = {s.time_ms: s for s in case.steps}
    samples: list[tuple[int, dict[str, float]]] = []
    try:
        for t in case.sample_times():
            if t in steps:
                held.update(steps[t].inputs)
            out = step_fn(t, tuple(held[name] for name in interface.inputs))
            if len(out) != len(interface.outputs):
                raise TransportError(f"expected {len(interface.outputs)} outputs at t={t} ms, got {len(out)}")
            samples.append((t, dict(zip(interface.outputs, out))))
    except TransportError as exc:
        return TestRunRecord(run_id, case.case_id, environment, ERROR, samples, [], str(exc))
    verdict, stats = evaluate(case, samples)
    return TestRunRecord(run_id, case.case_id, environment, verdict, samples, stats)


def run_mil(model: Model, case: TestCase, run_id: str | None = None) -> TestRunRecord:
    model.reset()
    return execute(
        case,
        model.interface,
        lambda t, values: model.step(values),
        run_id or f"MIL-{case.case_id}",
        "MIL",
    )


# -- record XML --------------------------------------------------------------


def records_to_xml(records: Sequence[TestRunRecord]) -> bytes:
    root = ET.Element("testruns")
    for rec in records:
        attrs = {"id": rec.run_id, "case": rec.case_id, "env": rec.environment, "verdict": rec.verdict}
        if rec.time:
            attrs["time"] = rec.time
        run = ET.SubElement(root, "run", attrs)
        if rec.message:
            ET.SubElement(run, "message").text = rec.message
        for stat in rec.latencies:
            lat = {"t": str(stat.step_time_ms), "signal": stat.signal}
            if stat.deadline_ms is not None:
                lat["deadline"] = str(stat.deadline_ms)
            if stat.achieved_ms is not None:
                lat["achieved"] = str(stat.achieved_ms)
            ET.SubElement(run, "latency", lat)
        for t, values in rec.samples:
            for signal, value in values.items():
                ET.SubElement(run, "sample", {"t": str(t), "signal": signal, "value": format_real(value)})
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def _attr(el: ET.Element, name: str, where: str) -> str:
    value = el.get(name)
    if value is None:
        raise IngestError(f"{where}: <{el.tag}> lacks attribute {name!r}")
    return value


def _int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise IngestError(f"{where}: expected an integer, got {text!r}") from None


def records_from_xml(data: bytes, source: str = "<xml>") -> list[TestRunRecord]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise IngestError(f"{source}: malformed XML: {exc}") from None
    if root.tag != "testruns":
        raise IngestError(f"{source}: root element must be <testruns>, got <{root.tag}>")
    records = []
    for n, run in enumerate(root, 1):
        where = f"{source}: run #{n}"
        if run.tag != "run":
            raise IngestError(f"{where}: unexpected element <{run.tag}>")
        rec = TestRunRecord(
            run_id=_attr(run, "id", where),
            case_id=_attr(run, "case", where),
            environment=_attr(run, "env", where),
            verdict=_attr(run, "verdict", where),
            time=run.get("time"),
        )
        if rec.environment not in ENVIRONMENTS:
            raise IngestError(f"{where}: env must be one of {'|'.join(ENVIRONMENTS)}")
        if rec.verdict not in VERDICTS:
            raise IngestError(f"{where}: verdict must be one of {'|'.join(VERDICTS)}")
        by_time: dict[int, dict[str, float]] = {}
        for child in run:
            if child.tag == "sample":
                t = _int(_attr(child, "t", where), where)
                raw = _attr(child, "value", where)
                try:
                    value = float(raw)
                except ValueError:
                    raise IngestError(f"{where}: sample value is not a number: {raw!r}") from None
                by_time.setdefault(t, {})[_attr(child, "signal", where)] = value
            elif child.tag == "latency":
                rec.latencies.append(
                    LatencyStat(
                        _int(_attr(child, "t", where), where),
                        _attr(child, "signal", where),
                        _int(child.get("deadline"), where) if child.get("deadline") is not None else None,
                        _int(child.get("achieved"), where) if child.get("achieved") is not None else None,
                    )
                )
            elif child.tag == "message":
                rec.message = child.text or ""
            else:
                raise IngestError(f"{where}: unexpected element <{child.tag}>")
        rec.samples = sorted(by_time.items())
        records.append(rec)
    return records


def bits(value: float) -> bytes:
    return struct.pack(">d", value)
