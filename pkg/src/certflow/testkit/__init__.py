"""Test cases that run unchanged in model-in-the-loop and over the UDP HIL bridge."""

from certflow.testkit.cases import (
    Expectation,
    LatencyStat,
    Step,
    TestCase,
    TestRunRecord,
    load_testcase,
    parse_testcase,
    records_from_xml,
    records_to_xml,
    run_mil,
)
from certflow.testkit.compare import Divergence, EquivalenceVerdict, compare_runs
from certflow.testkit.hil import HilClient, TargetServer, run_hil, serve_target
from certflow.testkit.ingest import IngestResult, ingest_records
from certflow.testkit.model import AMDS_INTERFACE, AMDSModel, ModelInterface, make_model

__all__ = [
    "AMDS_INTERFACE",
    "AMDSModel",
    "Divergence",
    "EquivalenceVerdict",
    "Expectation",
    "HilClient",
    "IngestResult",
    "LatencyStat",
    "ModelInterface",
    "Step",
    "TargetServer",
    "TestCase",
    "TestRunRecord",
    "compare_runs",
    "ingest_records",
    "load_testcase",
    "make_model",
    "parse_testcase",
    "records_from_xml",
    "records_to_xml",
    "run_hil",
    "run_mil",
    "serve_target",
]
