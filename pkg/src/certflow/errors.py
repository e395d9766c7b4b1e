"""Exception hierarchy.

Every error raised on purpose by certflow derives from :class:`CertflowError`.
The CLI maps :class:`UsageError` subclasses to exit code 2 and
:class:`TransportError` to exit code 3.
"""


class CertflowError(Exception):
    """Base class for all certflow errors."""


class UsageError(CertflowError):
    """Invalid input, configuration or request (CLI exit code 2)."""


class ProjectError(UsageError):
    """Project directory missing, malformed or locked."""


class ProjectLockedError(ProjectError):
    pass


class ItemError(UsageError):
    """Invalid work item operation (unknown id, bad level, ...)."""


class BaselineError(UsageError):
    pass


class LinkError(UsageError):
    """Illegal, duplicate or unknown trace link."""


class JobGraphError(UsageError):
    """Job registration would break acyclicity or output disjointness."""


class CatalogError(UsageError):
    """Objective catalog could not be parsed or validated."""


class TestCaseError(UsageError):
    """Malformed test case file or signal mismatch with the model."""

    __test__ = False  # not a pytest class


class IngestError(UsageError):
    """Test-record XML is malformed or references unknown test cases."""


class TransportError(CertflowError):
    """UDP bridge failure: bind error, timeout, protocol violation (exit 3)."""


class ActionError(CertflowError):
    """A job action failed; recorded as a job failure, never propagated."""
