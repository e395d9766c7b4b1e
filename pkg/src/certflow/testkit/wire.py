"""HIL bridge frame codec.

Layout (all big-endian)::

    0   4s  magic "HILB"
    4   B   version (1)
    5   B   type: 0 stimulus, 1 response, 2 reset, 3 error
    6   H   reserved, 0
    8   I   sequence number
    12  I   simulation time, ms
    16  H   signal count n
    18  n*d IEEE-754 binary64 values, declared signal order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from certflow.errors import TransportError

MAGIC = b"HILB"
VERSION = 1
STIMULUS, RESPONSE, RESET, ERROR = 0, 1, 2, 3
FRAME_TYPES = (STIMULUS, RESPONSE, RESET, ERROR)
DEFAULT_PORT = 47811

HEADER = struct.Struct(">4sBBHII")
COUNT = struct.Struct(">H")
MAX_SIGNALS = (65507 - HEADER.size - COUNT.size) // 8


class FrameError(TransportError):
    """Undecodable frame.  ``seq`` is set when the header was readable."""

    def __init__(self, message: str, seq: int = 0):
        super().__init__(message)
        self.seq = seq


@dataclass(frozen=True)
class Frame:
    type: int
    seq: int
    sim_time_ms: int = 0
    values: tuple[float, ...] = ()


def encode(frame: Frame) -> bytes:
    if frame.type not in FRAME_TYPES:
        raise ValueError(f"bad frame type {frame.type}")
    if len(frame.values) > MAX_SIGNALS:
        raise ValueError("too many signals for one datagram")
    return (
        HEADER.pack(MAGIC, VERSION, frame.type, 0, frame.seq & 0xFFFFFFFF, frame.sim_time_ms & 0xFFFFFFFF)
        + COUNT.pack(len(frame.values))
        + struct.pack(f">{len(frame.values)}d", *frame.values)
    )


def decode(data: bytes) -> Frame:
    if len(data) < HEADER.size + COUNT.size:
        raise FrameError(f"short frame ({len(data)} bytes)")
    magic, version, ftype, reserved, seq, sim_time = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version}", seq)
    if ftype not in FRAME_TYPES:
        raise FrameError(f"unknown frame type {ftype}", seq)
    if reserved != 0:
        raise FrameError("reserved bytes must be zero", seq)
    (count,) = COUNT.unpack_from(data, HEADER.size)
    expected = HEADER.size + COUNT.size + 8 * count
    if len(data) != expected:
        raise FrameError(f"frame length {len(data)} does not match {count} signals", seq)
    values = struct.unpack_from(f">{count}d", data, HEADER.size + COUNT.size)
    return Frame(ftype, seq, sim_time, values)
