"""Sampled models runnable in the loop, and the AMDS reference model.

A model exposes its signal interface and a ``step`` that takes one input
vector (declared input order) and returns the output vector for the current
sample before advancing its state.  Outputs therefore react to inputs one
sample later, like a registered controller output.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from certflow.errors import UsageError


@dataclass(frozen=True)
class ModelInterface:
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


class Model(Protocol):
    interface: ModelInterface

    def reset(self) -> None: ...

    def step(self, inputs: Sequence[float]) -> tuple[float, ...]: ...


AMDS_INTERFACE = ModelInterface(
    inputs=("btn1", "btn2", "engage_cmd"),
    outputs=("ch1_disconnect", "ch2_disconnect", "clutch_engaged"),
)


def _on(value: float) -> bool:
    return value >= 0.5


class _Channel:
    def __init__(self, delay_samples: int, stuck: bool):
        self.delay = delay_samples
        self.stuck = stuck
        self.reset()

    def reset(self) -> None:
        self.latched = False
        self._line = deque([False] * self.delay)

    def output(self) -> float:
        return 1.0 if self.latched and not self.stuck else 0.0

    def update(self, pressed: bool, clear: bool) -> None:
        self._line.append(pressed)
        if self._line.popleft():
            self.latched = True
        elif clear:
            self.latched = False


class AMDSModel:
    """Autopilot manual disconnect: two independent latching channels.

    Either pushbutton latches a disconnect in both channels on the next
    sample; ``engage_cmd`` with both buttons released clears the latch.  The
    clutch stays engaged only while neither channel is disconnecting.

    Fault injection: ``delay_samples`` delays the pushbutton path of both
    channels; ``stuck_channel`` (1 or 2) pins that channel's output to
    "no disconnect".
    """

    interface = AMDS_INTERFACE

    def __init__(self, delay_samples: int = 0, stuck_channel: int | None = None):
        if delay_samples < 0:
            raise UsageError("delay_samples must be >= 0")
        if stuck_channel not in (None, 1, 2):
            raise UsageError("stuck_channel must be 1 or 2")
        self.delay_samples = delay_samples
        self.stuck_channel = stuck_channel
        self.channels = [_Channel(delay_samples, stuck_channel == n) for n in (1, 2)]

    def reset(self) -> None:
        for ch in self.channels:
            ch.reset()

    def outputs(self) -> tuple[float, ...]:
        ch1, ch2 = (ch.output() for ch in self.channels)
        clutch = 0.0 if (ch1 or ch2) else 1.0
        return (ch1, ch2, clutch)

    def step(self, inputs: Sequence[float]) -> tuple[float, ...]:
        btn1, btn2, engage = (_on(v) for v in inputs)
        out = self.outputs()
        pressed = btn1 or btn2
        clear = engage and not pressed
        for ch in self.channels:
            ch.update(pressed, clear)
        return out


MODELS: dict[str, Callable[..., Model]] = {"amds": AMDSModel}


def make_model(name: str = "amds", **faults: int | None) -> Model:
    try:
        factory = MODELS[name]
    except KeyError:
        raise UsageError(f"unknown model {name!r} (known: {', '.join(sorted(MODELS))})") from None
    return factory(**{k: v for k, v in faults.items() if v is not None})
