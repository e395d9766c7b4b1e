from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from certflow.lint import CONFORMANT, NONCONFORMANT, RequirementParts, lint_requirement


def test_timed_statement():
    result = lint_requirement("When either pushbutton is pressed, the AMDS shall within 100 ms release the clutch.")
    assert result.verdict == CONFORMANT
    assert result.parts == RequirementParts(
        component="AMDS", response="release the clutch", condition="either pushbutton is pressed", timing=(100, "ms")
    )


def test_missing_shall():
    result = lint_requirement("The system works fine.")
    assert result.verdict == NONCONFORMANT
    assert any("shall" in d for d in result.diagnostics)


def test_optional_parts_absent():
    result = lint_requirement("the controller shall latch the disconnect state.")
    assert result.ok
    assert result.parts.condition is None and result.parts.timing is None and result.parts.scope is None
    assert result.parts.component == "controller"


def test_scope_clause():
    result = lint_requirement("In flight, when AP is engaged, the monitor shall within 2 s raise a caution.")
    assert result.ok
    assert result.parts.scope == "In flight"
    assert result.parts.timing == (2, "s")


def test_diagnostics():
    cases = {
        "": "empty",
        "The AMDS shall release the clutch": "period",
        "The AMDS shall within 100 min release the clutch.": "unit",
        "The AMDS shall within soon release.": "within",
        "The AMDS shall.": "response",
        "AMDS shall release.": "component",
        "The shall release.": "component",
        "Later, never, the AMDS shall release.": "unexpected clause",
    }
    for text, needle in cases.items():
        result = lint_requirement(text)
        assert result.verdict == NONCONFORMANT, text
        assert result.parts is None
        assert any(needle in d for d in result.diagnostics), (text, result.diagnostics)


def test_whitespace_insensitive():
    a = lint_requirement("the  AMDS\nshall   release the clutch.")
    assert a == lint_requirement("the AMDS shall release the clutch.")


KEYWORDS = {"the", "shall", "when", "within"}
word = st.from_regex(r"[a-z][a-z0-9]{0,7}", fullmatch=True).filter(lambda w: w not in KEYWORDS)
phrase = st.lists(word, min_size=1, max_size=5).map(" ".join)


@st.composite
def parts(draw):
    return RequirementParts(
        component=draw(phrase),
        response=draw(phrase),
        scope=draw(st.none() | phrase.map(str.capitalize)),
        condition=draw(st.none() | phrase),
        timing=draw(st.none() | st.tuples(st.integers(0, 10_000), st.sampled_from(["ms", "s"]))),
    )


@settings(max_examples=200)
@given(parts())
def test_render_round_trip(p):
    result = lint_requirement(p.render())
    assert result.ok, result.diagnostics
    assert result.parts == p


@settings(max_examples=200)
@given(st.text(max_size=120))
def test_lint_is_total_and_pure(text):
    a = lint_requirement(text)
    assert a == lint_requirement(text)
    assert (a.verdict == CONFORMANT) == (a.parts is not None and bool(a.parts.component) and bool(a.parts.response))
