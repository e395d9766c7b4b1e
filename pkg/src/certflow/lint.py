"""Linter for structured "shall" requirement statements.

Accepted shape (keywords case-insensitive)::

    [<scope>,] [when <condition>,] the <component> shall [within <n> ms|s] <response>.

Component and response are mandatory.  Linting is advisory: a bad statement
yields a ``nonconformant`` result with diagnostics, never an exception.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

CONFORMANT = "conformant"
NONCONFORMANT = "nonconformant"
TIMING_UNITS = ("ms", "s")

_SHALL_RE = re.compile(r"\bshall\b", re.IGNORECASE)
_WITHIN_RE = re.compile(r"^within\s+(\d+(?:\.\d+)?)\s+(\S+)\s+(.*)$", re.IGNORECASE | re.DOTALL)


@dataclass(frozen=True)
class RequirementParts:
    component: str
    response: str
    scope: str | None = None
    condition: str | None = None
    timing: tuple[int | float, str] | None = None

    def render(self) -> str:
        out = []
        if self.scope:
            out.append(f"{self.scope}, ")
        if self.condition:
            out.append(f"{'When' if not out else 'when'} {self.condition}, ")
        out.append(f"{'The' if not out else 'the'} {self.component} shall ")
        if self.timing:
            out.append(f"within {self.timing[0]} {self.timing[1]} ")
        out.append(f"{self.response}.")
        return "".join(out)


@dataclass(frozen=True)
class LintResult:
    verdict: str
    parts: RequirementParts | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict == CONFORMANT


def _number(text: str) -> int | float:
    return float(text) if "." in text else int(text)


def lint_requirement(text: str) -> LintResult:
    diags: list[str] = []
    stmt = " ".join(text.split())
    if not stmt:
        return LintResult(NONCONFORMANT, None, ["empty statement"])
    if stmt.endswith("."):
        stmt = stmt[:-1].rstrip()
    else:
        diags.append("statement must end with a period")

    m = _SHALL_RE.search(stmt)
    if not m:
        return LintResult(NONCONFORMANT, None, diags + ["missing 'shall'"])
    head, tail = stmt[: m.start()].rstrip(), stmt[m.end():].strip()

    # head: [scope,] [when condition,] the component
    clauses = [c.strip() for c in head.split(",")]
    main = clauses.pop()
    scope = condition = None
    component = ""
    if re.match(r"^the\s", main + " ", re.IGNORECASE):
        component = main[3:].strip()
        if not component:
            diags.append("missing component between 'the' and 'shall'")
    else:
        diags.append("expected 'the <component>' before 'shall'")
    for i, clause in enumerate(clauses):
        if re.match(r"^when\s", clause, re.IGNORECASE):
            if condition is not None:
                diags.append("more than one 'when' clause")
            elif not clause[4:].strip():
                diags.append("empty 'when' condition")
            condition = clause[4:].strip() or condition
        elif i == 0 and clause:
            scope = clause
        else:
            diags.append(f"unexpected clause {clause!r}; conditions start with 'when'")

    # tail: [within n unit] response
    timing = None
    response: str | None = tail
    if re.match(r"^within\b", tail, re.IGNORECASE):
        wm = _WITHIN_RE.match(tail)
        if not wm:
            diags.append("'within' must be followed by '<number> <unit> <response>'")
            response = None
        else:
            unit = wm.group(2).lower()
            if unit not in TIMING_UNITS:
                diags.append(f"timing unit must be one of {', '.join(TIMING_UNITS)}, got {wm.group(2)!r}")
            timing = (_number(wm.group(1)), unit)
            response = wm.group(3).strip()
    if response == "":
        diags.append("missing response after 'shall'")

    if diags:
        return LintResult(NONCONFORMANT, None, diags)
    return LintResult(
        CONFORMANT,
        RequirementParts(component=component, response=response or "", scope=scope, condition=condition, timing=timing),
    )
