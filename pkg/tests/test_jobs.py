from __future__ import annotations

import sys
from pathlib import Path

import pytest

from certflow.errors import ActionError, JobGraphError
from certflow.jobs import (
    BLOCKED,
    FAILED,
    MISSING,
    OUTDATED,
    PASSED,
    VALID,
    Job,
    JobGraph,
    Manifest,
    parse_jobs,
    path_matches,
    register_job,
    status_report,
)


def write(root: Path, rel: str, text: str) -> None:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


@pytest.fixture
def diamond(tmp_path) -> JobGraph:
    """src/a -> A -> {B, C} -> D, plus an independent job E."""
    write(tmp_path, "src/a.txt", "a\n")
    write(tmp_path, "src/e.txt", "e\n")
    register_job(tmp_path, "A", ["src/a.txt"], ["out/a"], "copy")
    register_job(tmp_path, "B", ["out/a"], ["out/b"], "copy")
    register_job(tmp_path, "C", ["out/a"], ["out/c"], "copy")
    register_job(tmp_path, "D", ["out/b", "out/c"], ["out/d"], "copy")
    register_job(tmp_path, "E", ["src/*.txt"], ["out/e"], "copy")
    return JobGraph.load(tmp_path)


def names(jobs) -> list[str]:
    return [j.name for j in jobs]


def test_path_matching():
    assert path_matches("items/*.wi", "items/REQ-0001.wi")
    assert not path_matches("items/*.wi", "items/sub/REQ-0001.wi")
    assert not path_matches("*.wi", "items/REQ-0001.wi")
    assert path_matches("reports/x.csv", "reports/x.csv")
    assert path_matches("t?sts/[ab].tc", "tests/a.tc")


def test_register_errors(tmp_path):
    register_job(tmp_path, "lint-reqs", ["items/*.wi"], ["reports/lint.csv"], "lint-all-requirements")
    with pytest.raises(JobGraphError, match="own output"):
        register_job(tmp_path, "loop", ["reports/x.html"], ["reports/x.html"], "copy")
    register_job(tmp_path, "one", ["a"], ["reports/x.html"], "copy")
    with pytest.raises(JobGraphError, match="collision"):
        register_job(tmp_path, "two", ["b"], ["reports/x.html"], "copy")
    register_job(tmp_path, "p", ["reports/x.html"], ["reports/y.html"], "copy")
    with pytest.raises(JobGraphError, match="cycle"):
        register_job(tmp_path, "q", ["reports/y.html"], ["a"], "copy")
    with pytest.raises(JobGraphError, match="duplicate"):
        register_job(tmp_path, "p", ["a"], ["z"], "copy")
    for bad in ("/abs", "../up", "reports/*.csv"):
        with pytest.raises(JobGraphError):
            register_job(tmp_path, "bad", ["a"], [bad], "copy")
    # failed registrations leave the file untouched
    assert names(JobGraph.load(tmp_path).ordered()) == ["lint-reqs", "one", "p"]


def test_jobs_file_round_trip(diamond):
    text = (diamond.root / "jobs.cfg").read_text()
    assert parse_jobs(text) == list(diamond.ordered())
    assert "job: A\naction: copy\ninput: src/a.txt\noutput: out/a\n" in text
    with pytest.raises(JobGraphError, match=":2"):
        parse_jobs("job: x\nnonsense\n")
    with pytest.raises(JobGraphError):
        parse_jobs("input: a\noutput: b\n")


def test_topological_order_breaks_ties_by_name(diamond):
    assert names(diamond.ordered()) == ["A", "B", "C", "D", "E"]
    assert diamond.upstream(diamond.jobs["D"]) == ["B", "C"]


def test_fresh_plan_is_everything(diamond):
    assert set(diamond.status().values()) == {MISSING}
    assert names(diamond.plan()) == ["A", "B", "C", "D", "E"]


def test_second_run_executes_nothing(diamond):
    first = diamond.run()
    assert first.passed == ["A", "B", "C", "D", "E"]
    assert set(diamond.status().values()) == {VALID}
    assert diamond.plan() == []
    assert diamond.run().executed == []
    assert (diamond.root / "out/d").read_text() == "a\na\n"


def test_status_examples(diamond):
    diamond.run()
    (diamond.root / "out/b").unlink()
    st = diamond.status()
    assert st["out/b"] == MISSING and st["out/d"] == OUTDATED
    assert st["out/a"] == st["out/c"] == st["out/e"] == VALID
    diamond.run()
    write(diamond.root, "src/a.txt", "edited\n")
    st = diamond.status()
    assert {k for k, v in st.items() if v != VALID} == {"out/a", "out/b", "out/c", "out/d", "out/e"}
    diamond.run()
    write(diamond.root, "src/e.txt", "edited\n")
    assert {k for k, v in diamond.status().items() if v != VALID} == {"out/e"}


def test_tampered_artifact_is_outdated(diamond):
    diamond.run()
    write(diamond.root, "out/c", "hand edit\n")
    assert diamond.status()["out/c"] == OUTDATED
    assert names(diamond.plan()) == ["C", "D"]


def test_new_glob_match_invalidates(diamond):
    diamond.run()
    write(diamond.root, "src/new.txt", "n\n")
    assert names(diamond.plan()) == ["E"]


def test_job_definition_change_invalidates(diamond):
    diamond.run()
    jobs = [j if j.name != "C" else Job("C", "copy", ("out/a", "src/e.txt"), ("out/c",)) for j in diamond.ordered()]
    changed = JobGraph(diamond.root, jobs)
    assert names(changed.plan()) == ["C", "D"]


def test_impact_analysis(diamond):
    imp = diamond.impact_analysis(["src/a.txt"])
    assert imp.jobs == ["A", "B", "C", "D", "E"]
    assert diamond.impact_analysis(["out/a"]).jobs == ["B", "C", "D"]
    assert diamond.impact_analysis(["out/a"]).artifacts == ["out/b", "out/c", "out/d"]
    assert diamond.impact_analysis(["out/c"]).jobs == ["D"]
    with pytest.raises(JobGraphError):
        diamond.impact_analysis(["nowhere.txt"])


def test_failure_blocks_only_dependents(diamond):
    def boom(ctx):
        raise ActionError("boom")

    jobs = [j if j.name != "B" else Job("B", "boom", j.inputs, j.outputs) for j in diamond.ordered()]
    graph = JobGraph(diamond.root, jobs)
    report = graph.run(actions={"boom": boom})
    outcome = {r.job: r.outcome for r in report.results}
    assert outcome == {"A": PASSED, "B": FAILED, "C": PASSED, "D": BLOCKED, "E": PASSED}
    assert not report.ok
    assert "boom" in next(r.message for r in report.results if r.job == "B")
    st = graph.status()
    assert st["out/b"] == MISSING and st["out/d"] == MISSING and st["out/c"] == VALID


def test_action_producing_wrong_outputs_fails(tmp_path):
    write(tmp_path, "in", "x")
    graph = JobGraph(tmp_path, [Job("j", "odd", ("in",), ("out",))])
    report = graph.run(actions={"odd": lambda ctx: {"other": b""}})
    assert report.failed == ["j"]
    assert graph.run(actions={}).failed == ["j"]  # unknown action "odd"


def test_manifest_contents(diamond):
    diamond.run()
    mf = diamond.read_manifest("out/d")
    assert mf.job == "D"
    assert set(mf.inputs) == {"out/b", "out/c"}
    assert mf.job_digest == diamond.jobs["D"].signature()
    assert Manifest.parse(mf.render()) == mf
    assert diamond.manifest_path("out/d").name == "out%2Fd.mf"


def test_status_report_deterministic(diamond):
    diamond.run()
    csv_text, html_text = status_report(diamond)
    assert csv_text.splitlines()[0] == "artifact,state"
    assert "out/d,valid" in csv_text.splitlines()
    assert status_report(diamond) == (csv_text, html_text)


def test_exec_action(tmp_path):
    write(tmp_path, "in.txt", "hi")
    cmd = f"{sys.executable} -c \"import sys; sys.stdout.write(open('in.txt').read().upper())\""
    register_job(tmp_path, "shout", ["in.txt"], ["out.txt"], "exec", {"cmd": cmd})
    report = JobGraph.load(tmp_path).run()
    assert report.ok
    assert (tmp_path / "out.txt").read_text() == "HI"
    register_job(tmp_path, "fail", ["in.txt"], ["bad.txt"], "exec", {"cmd": f"{sys.executable} -c \"raise SystemExit(3)\""})
    assert JobGraph.load(tmp_path).run().failed == ["fail"]


def test_no_temp_files_left(diamond):
    diamond.run()
    leftovers = [p for p in diamond.root.rglob(".*") if p.is_file()]
    assert leftovers == []
