"""Mode switching between coverage and active sensing."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class MissionMode(str, enum.Enum):
    CPP_LOW = "CppLowBudget"
    CPP_HIGH = "CppHighBudget"
    ACTIVE_SENSING = "ActiveSensing"
    STOPPED = "Stopped"


class EventKind(str, enum.Enum):
    COVERAGE_DONE = "CoveragePassComplete"
    DETECTED = "ContaminantDetected"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    NO_DETECTIONS = "NoDetectionsInWindow"
    QUOTA_REACHED = "MeasurementQuotaReached"


@dataclass(frozen=True)
class TransitionEvent:
    kind: EventKind
    time: float = 0.0
    level: float | None = None      # detection level for DETECTED


@dataclass
class Guards:
    detection_level: float = 1.0    # positive readings needed to count as a detection
    no_detection_window: float = 300.0


@dataclass
class TransitionTable:
    edges: dict = field(default_factory=dict)     # (mode, kind) -> mode
    guards: Guards | None = None

    def target(self, mode: MissionMode, event: TransitionEvent) -> MissionMode:
        if mode == MissionMode.STOPPED:
            return mode
        nxt = self.edges.get((mode, event.kind))
        if nxt is None:
            return mode
        if event.kind == EventKind.DETECTED:
            level = self.guards.detection_level if self.guards else 1.0
            if event.level is None or event.level < level:
                return mode
        return nxt


def reduced_model() -> TransitionTable:
    """Coverage once, then active sensing until the measurement quota, then stop."""
    return TransitionTable({
        (MissionMode.CPP_LOW, EventKind.COVERAGE_DONE): MissionMode.ACTIVE_SENSING,
        (MissionMode.ACTIVE_SENSING, EventKind.QUOTA_REACHED): MissionMode.STOPPED,
    })


def general_model(guards: Guards | None) -> TransitionTable:
    if guards is None:
        raise ValueError("the general model needs detection and window guards")
    t = reduced_model()
    t.guards = guards
    t.edges.update({
        (MissionMode.CPP_LOW, EventKind.NO_DETECTIONS): MissionMode.CPP_HIGH,
        (MissionMode.CPP_LOW, EventKind.DETECTED): MissionMode.ACTIVE_SENSING,
        (MissionMode.CPP_HIGH, EventKind.DETECTED): MissionMode.ACTIVE_SENSING,
        (MissionMode.CPP_HIGH, EventKind.COVERAGE_DONE): MissionMode.ACTIVE_SENSING,
        (MissionMode.CPP_HIGH, EventKind.QUOTA_REACHED): MissionMode.STOPPED,
        (MissionMode.ACTIVE_SENSING, EventKind.NO_DETECTIONS): MissionMode.CPP_HIGH,
    })
    return t


def single_mode_table(mode: MissionMode) -> TransitionTable:
    """A mission that stays in ``mode`` until the quota is met."""
    return TransitionTable({(mode, EventKind.QUOTA_REACHED): MissionMode.STOPPED})


def step(mode: MissionMode, event: TransitionEvent, table: TransitionTable) -> MissionMode:
    return table.target(mode, event)


def replay(mode: MissionMode, events, table: TransitionTable) -> list[tuple]:
    """Apply events in time order (stable for equal times).

    Returns ``(time, from, to, kind)`` for every change of mode.
    """
    changes = []
    for ev in sorted(events, key=lambda e: e.time):
        nxt = step(mode, ev, table)
        if nxt != mode:
            changes.append((ev.time, mode, nxt, ev.kind))
            mode = nxt
    return changes


MODE_LOG_HEADER = ("t", "from", "to", "event")
