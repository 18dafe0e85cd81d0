"""Heartbeat watchdog, safe-state latch and DMH condition logic.

Everything here is a pure state transition over an injected millisecond
clock: no timers, no threads, so each timing behavior is testable with
a virtual clock. The board sends a heartbeat every interval (default
500 ms) and latches into a safe state if no host heartbeat arrives
within the timeout (default 1000 ms). In the safe state only heartbeats
are sent until the host responds, at which point the outputs last
commanded by the host are reestablished.

A lost carrier latches LINK_DOWN, which only an explicit reset leaves.

The DMH condition is the second interlock: proximity below the
threshold (or a released dead-man button, when enforcement is on) cuts
the motor channels while leaving servos and the status stream alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import model
from .model import BoardState

DEFAULT_HEARTBEAT_INTERVAL_MS = 500
DEFAULT_HEARTBEAT_TIMEOUT_MS = 1000


class Phase(enum.Enum):
    CONNECTING = "connecting"
    NORMAL = "normal"
    SAFE_STATE = "safe-state"
    LINK_DOWN = "link-down"


class LinkAction(enum.Enum):
    SEND_HEARTBEAT = "send-heartbeat"


@dataclass
class LinkState:
    phase: Phase = Phase.CONNECTING
    last_host_heartbeat: int = 0
    last_sent_heartbeat: int | None = None
    heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_INTERVAL_MS
    heartbeat_timeout_ms: int = DEFAULT_HEARTBEAT_TIMEOUT_MS
    pnum_out: int = 0
    pnum_in_last: int | None = None


@dataclass
class DmhInputs:
    button_pressed: bool = True
    sensor_distances: tuple = ()  # cm per channel, None where absent
    sensors_enabled: bool = False
    min_distance_cm: float = 30.0
    button_enforced: bool = False


def next_pnum(link: LinkState) -> int:
    """Sequence number for the next transmitted frame.

    Heartbeats and status datagrams share the one counter; it stays
    pinned at zero while connecting.
    """
    if link.phase is Phase.CONNECTING:
        return 0
    pnum = link.pnum_out
    link.pnum_out += 1
    return pnum


def tick(link: LinkState, board: BoardState, now: int) -> list:
    """Advance the watchdog to `now` (monotone non-decreasing).

    Returns the actions the owner must perform. Status emission is
    gated by the owner on link.phase; this function handles the phase
    transitions and heartbeat cadence.
    """
    if link.phase is Phase.LINK_DOWN:
        return []

    if (
        link.phase is Phase.NORMAL
        and now - link.last_host_heartbeat > link.heartbeat_timeout_ms
    ):
        link.phase = Phase.SAFE_STATE
        model.enter_safe_state(board)

    actions = []
    if (
        link.last_sent_heartbeat is None
        or now - link.last_sent_heartbeat >= link.heartbeat_interval_ms
    ):
        link.last_sent_heartbeat = now
        actions.append(LinkAction.SEND_HEARTBEAT)
    return actions


def on_host_heartbeat(link: LinkState, board: BoardState, now: int) -> int | None:
    """Record a checksum-verified host heartbeat.

    Returns the interval since the previous one (for the diagnostic
    stream), or None when there is nothing to measure. Ignored entirely
    in LINK_DOWN: only a reset recovers from carrier loss.
    """
    if link.phase is Phase.LINK_DOWN:
        return None

    first = link.phase is Phase.CONNECTING
    interval = None if first else now - link.last_host_heartbeat
    link.last_host_heartbeat = now

    if link.phase in (Phase.SAFE_STATE, Phase.CONNECTING):
        link.phase = Phase.NORMAL
        model.leave_safe_state(board)
    return interval


def on_stop_command(link: LinkState, board: BoardState) -> None:
    """Commanded full stop: latch safe state with nothing to restore."""
    model.enter_safe_state(board, clear_pending=True)
    if link.phase is Phase.NORMAL:
        link.phase = Phase.SAFE_STATE


def on_link_down(link: LinkState, board: BoardState) -> None:
    """Carrier loss: outputs off, latch until reset."""
    link.phase = Phase.LINK_DOWN
    model.enter_safe_state(board, clear_pending=True)


def reset(link: LinkState, board: BoardState) -> tuple:
    """Controller reset: fresh link and board state, back to connecting."""
    fresh_link = LinkState(
        heartbeat_interval_ms=link.heartbeat_interval_ms,
        heartbeat_timeout_ms=link.heartbeat_timeout_ms,
    )
    fresh_board = BoardState(
        enables=set(board.enables),
        analog_aliases=dict(board.analog_aliases),
        dmh_relay_channel=board.dmh_relay_channel,
    )
    return fresh_link, fresh_board


def evaluate_dmh(inputs: DmhInputs, board: BoardState) -> BoardState:
    """Re-derive the DMH condition from the sampled inputs.

    Condition set: proximity at or below the threshold (boundary
    included, biased toward safety) while sensors are enabled, or a
    released button while enforcement is on. While set, the motor
    channels (DHB, OSMC, BLDC) read zero and the DMH relay opens;
    servos and the other relays are untouched. The condition clears as
    soon as the inputs clear, restoring the parked motor values.
    """
    board.dmh_button = inputs.button_pressed
    proximity = inputs.sensors_enabled and any(
        d is not None and d <= inputs.min_distance_cm
        for d in inputs.sensor_distances
    )
    condition = proximity or (inputs.button_enforced and not inputs.button_pressed)

    was = board.dmh_condition
    board.dmh_condition = condition
    if condition:
        clobbers = (
            model.motor_outputs_nonzero(board)
            or board.relays[board.dmh_relay_channel - 1]
        )
        if clobbers and board.pending_restore is None:
            board.pending_restore = model.snapshot_outputs(board)
        model.zero_motor_outputs(board)
    elif was and not board.safe_state and board.pending_restore is not None:
        model.restore_outputs(board, board.pending_restore)
        board.pending_restore = None
    return board
