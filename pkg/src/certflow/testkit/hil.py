"""UDP lockstep bridge: a target that steps a model per stimulus, and the client.

The client sends one stimulus per sample and waits for the response carrying
the same sequence number before sending the next.  No real-time pacing.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Sequence

from certflow.errors import TransportError
from certflow.testkit import wire
from certflow.testkit.cases import TestCase, TestRunRecord, execute
from certflow.testkit.model import AMDS_INTERFACE, Model, ModelInterface
from certflow.testkit.wire import Frame

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 500


class TargetServer:
    """Serve ``model`` over UDP, one client session at a time.

    The first client to send a frame owns the session.  Frames from other
    addresses get an error frame until the owner has been silent for
    ``session_timeout`` seconds.  A new owner starts from a reset model.
    """

    def __init__(
        self,
        model: Model,
        port: int = wire.DEFAULT_PORT,
        host: str = "127.0.0.1",
        session_timeout: float = 0.25,
    ):
        self.model = model
        self.session_timeout = session_timeout
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind((host, port))
        except OSError as exc:
            raise TransportError(f"cannot bind UDP {host}:{port}: {exc}") from None
        self.sock.settimeout(0.05)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._client: tuple | None = None
        self._last_seen = 0.0
        self._last_seq: int | None = None
        self._last_reply = b""
        self.frames_handled = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def _reply(self, frame: Frame, addr: tuple) -> bytes:
        data = wire.encode(frame)
        self.sock.sendto(data, addr)
        return data

    def handle(self, data: bytes, addr: tuple) -> None:
        self.frames_handled += 1
        try:
            frame = wire.decode(data)
        except wire.FrameError as exc:
            log.debug("malformed frame from %s: %s", addr, exc)
            self._reply(Frame(wire.ERROR, exc.seq), addr)
            return
        now = time.monotonic()
        if addr != self._client:
            if self._client is not None and now - self._last_seen < self.session_timeout:
                self._reply(Frame(wire.ERROR, frame.seq, frame.sim_time_ms), addr)
                return
            self._client = addr
            self.model.reset()
            self._last_seq = None
        self._last_seen = now
        if frame.type == wire.RESET:
            self.model.reset()
            self._last_seq = None
            self._reply(Frame(wire.RESPONSE, frame.seq, frame.sim_time_ms), addr)
        elif frame.type == wire.STIMULUS:
            if len(frame.values) != len(self.model.interface.inputs):
                self._reply(Frame(wire.ERROR, frame.seq, frame.sim_time_ms), addr)
            elif frame.seq == self._last_seq:
                # retransmitted stimulus: repeat the answer, do not step again
                self.sock.sendto(self._last_reply, addr)
            else:
                outputs = self.model.step(frame.values)
                self._last_reply = self._reply(Frame(wire.RESPONSE, frame.seq, frame.sim_time_ms, tuple(outputs)), addr)
                self._last_seq = frame.seq
        else:
            self._reply(Frame(wire.ERROR, frame.seq, frame.sim_time_ms), addr)

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                continue
            self.handle(data, addr)

    def start(self) -> "TargetServer":
        self._thread = threading.Thread(target=self.serve_forever, name="hil-target", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self.sock.close()

    def __enter__(self) -> "TargetServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def serve_target(model: Model, port: int = wire.DEFAULT_PORT, host: str = "127.0.0.1") -> None:
    """Serve until interrupted (Ctrl-C)."""
    server = TargetServer(model, port, host)
    log.info("serving %s on %s:%d", type(model).__name__, *server.address)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.sock.close()


class TargetRefused(TransportError):
    """The target answered with an error frame (busy or rejected frame)."""


class HilClient:
    """Strict lockstep client bound to one target endpoint."""

    def __init__(self, host: str, port: int, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        self.endpoint = (host, port)
        self.timeout = timeout_ms / 1000.0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.connect(self.endpoint)
        self._seq = 0

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> "HilClient":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def exchange(self, ftype: int, sim_time_ms: int = 0, values: Sequence[float] = ()) -> Frame:
        self._seq += 1
        seq = self._seq
        self.sock.send(wire.encode(Frame(ftype, seq, sim_time_ms, tuple(values))))
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"timeout waiting for response to seq {seq} from {self.endpoint[0]}:{self.endpoint[1]}")
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65535)
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                # nothing listening yet; keep waiting until the frame times out
                time.sleep(min(remaining, 0.01))
                continue
            try:
                reply = wire.decode(data)
            except wire.FrameError as exc:
                raise TransportError(f"undecodable reply: {exc}") from None
            if reply.seq < seq and not (reply.type == wire.ERROR and reply.seq == 0):
                continue  # stale duplicate of an earlier exchange
            if reply.type == wire.ERROR:
                raise TargetRefused(f"target answered seq {seq} with an error frame")
            if reply.seq != seq:
                raise TransportError(f"sequence mismatch: sent {seq}, got {reply.seq}")
            if reply.type != wire.RESPONSE:
                raise TransportError(f"unexpected frame type {reply.type}")
            return reply

    def reset(self) -> None:
        """Reset the target model, waiting out another client's session if needed."""
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                self.exchange(wire.RESET)
                return
            except TargetRefused:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(0.02)

    def step(self, sim_time_ms: int, values: Sequence[float]) -> tuple[float, ...]:
        return self.exchange(wire.STIMULUS, sim_time_ms, values).values


def run_hil(
    endpoint: tuple[str, int],
    case: TestCase,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    interface: ModelInterface = AMDS_INTERFACE,
    run_id: str | None = None,
    client: HilClient | None = None,
) -> TestRunRecord:
    """Replay ``case`` against a remote target, one stimulus per sample."""
    case.check_interface(interface)
    own = client is None
    if client is None:
        client = HilClient(endpoint[0], endpoint[1], timeout_ms)
    run_id = run_id or f"HIL-{case.case_id}"
    try:
        try:
            client.reset()
        except TransportError as exc:
            return TestRunRecord(run_id, case.case_id, "HIL", "error", message=str(exc))
        return execute(case, interface, client.step, run_id, "HIL")
    finally:
        if own:
            client.close()
