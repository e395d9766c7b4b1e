from __future__ import annotations

from dataclasses import dataclass, field

from certflow.errors import UsageError
from certflow.testkit.cases import TestRunRecord, bits


@dataclass(frozen=True)
class Divergence:
    time_ms: int
    signal: str
    a: float | None
    b: float | None


@dataclass(frozen=True)
class EquivalenceVerdict:
    divergences: list[Divergence] = field(default_factory=list)

    @property
    def equivalent(self) -> bool:
        return not self.divergences

    @property
    def first(self) -> Divergence | None:
        return self.divergences[0] if self.divergences else None


def _same(a: float, b: float, tolerance: float) -> bool:
    if tolerance == 0:
        return bits(a) == bits(b)
    return abs(a - b) <= tolerance


def compare_runs(a: TestRunRecord, b: TestRunRecord, tolerance: float = 0.0) -> EquivalenceVerdict:
    """Compare recorded outputs sample by sample.

    Tolerance 0 means bit-equal.  Verdicts, run ids and latency stats are
    not compared.  Samples or signals present on one side only diverge.
    """
    if a.case_id != b.case_id:
        raise UsageError(f"cannot compare runs of different cases: {a.case_id} vs {b.case_id}")
    if tolerance < 0:
        raise UsageError("tolerance must be >= 0")
    sa, sb = dict(a.samples), dict(b.samples)
    divergences = []
    for t in sorted(set(sa) | set(sb)):
        va, vb = sa.get(t, {}), sb.get(t, {})
        signals = list(va) + [s for s in vb if s not in va]
        for signal in signals:
            x, y = va.get(signal), vb.get(signal)
            if x is None or y is None or not _same(x, y, tolerance):
                divergences.append(Divergence(t, signal, x, y))
    return EquivalenceVerdict(divergences)
