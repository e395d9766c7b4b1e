"""certflow: plain-text certification workflow toolkit.

Work items and trace links live as text files next to the code, verification
jobs rebuild only what changed, and the same timed test cases run against an
in-process model or a UDP target.
"""

__version__ = "0.1.0"
