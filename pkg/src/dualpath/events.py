"""Scripted event types applied to a running scenario.

Network-level events (load/breaker/source) are handled by
:func:`dualpath.network.apply_event`; inverter-level events (setpoints, mode
commands, plug-in) are dispatched by the scenario runner.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True, slots=True)
class LoadStep:
    target: str
    dp: float = 0.0
    dq: float = 0.0


@dataclass(frozen=True, slots=True)
class BreakerSet:
    target: str
    closed: bool = False


@dataclass(frozen=True, slots=True)
class SourceFreq:
    target: str
    f: float = 60.0


@dataclass(frozen=True, slots=True)
class SourceUnbalance:
    """Negative-sequence EMF injected onto a grid source."""

    target: str
    mag: float = 0.0
    angle: float = 0.0


@dataclass(frozen=True, slots=True)
class SetpointEvent:
    """External dispatch command; always passes through the setpoint guard."""

    target: str
    source_id: str = "operator"
    p_set: float | None = None
    q_set: float | None = None
    v_nom: float | None = None
    mode: str | None = None


@dataclass(frozen=True, slots=True)
class ModeCommand:
    """Trusted operator mode request (still gated by the sync supervisor)."""

    target: str
    mode: str = "gfm"


@dataclass(frozen=True, slots=True)
class PlugIn:
    target: str


@dataclass(frozen=True, slots=True)
class PulseLoad:
    """Load step that reverts after ``duration`` seconds."""

    target: str
    dp: float = 0.0
    dq: float = 0.0
    duration: float = 0.5


Event = (
    LoadStep
    | BreakerSet
    | SourceFreq
    | SourceUnbalance
    | SetpointEvent
    | ModeCommand
    | PlugIn
    | PulseLoad
)

NETWORK_EVENTS = (LoadStep, BreakerSet, SourceFreq, SourceUnbalance)


@dataclass(frozen=True, slots=True, order=True)
class TimedEvent:
    t: float
    event: Event = field(compare=False)
