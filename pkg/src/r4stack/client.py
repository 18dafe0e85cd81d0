"""Host-side session: heartbeat echo, command trailers, stream statistics.

A Session owns one datagram endpoint, learns the board's address from
the first valid frame, echoes board heartbeats automatically (the board
safety-stops if nobody answers) and keeps loss/period/jitter statistics
from the PNum and T trailers of everything it receives.

Liveness comes from the caller's poll cadence: poll() must be called at
least every heartbeat interval minus margin, or the board watchdog will
fire. The echo can be disabled deliberately to exercise exactly that.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from .codec import (
    ChecksumMismatch,
    Field,
    Frame,
    FrameError,
    FrameKind,
    classify,
    parse_frame,
    serialize_frame,
)
from .model import Command, Verb, command_to_field
from .transport import DEFAULT_HOST_PORT, EndpointConfig, TransportError, open_endpoint

BOARD_TAG = "R4-ROS2"
HOST_TAG = "ROS2-R4"


class ConnectTimeout(TransportError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass
class ClientConfig:
    bind_addr: str = "127.0.0.1"
    bind_port: int = DEFAULT_HOST_PORT
    allow_ephemeral: bool = False
    connect_timeout_ms: int = 5000
    auto_heartbeat: bool = True


@dataclass(frozen=True)
class StateUpdate:
    frame: Frame


@dataclass(frozen=True)
class HeartbeatSeen:
    t: int | None
    pnum: int | None
    echoed: bool


@dataclass(frozen=True)
class Gap:
    after_pnum: int
    got_pnum: int
    lost: int


@dataclass(frozen=True)
class CrcError:
    computed: int
    declared: int


@dataclass
class LinkStats:
    frames_received: int = 0
    status_frames: int = 0
    crc_failures: int = 0
    malformed: int = 0
    gaps_detected: int = 0
    frames_lost: int = 0
    period_mean_ms: float = 0.0
    period_jitter_ms: float = 0.0
    heartbeat_intervals_ms: list = field(default_factory=list)


def _epoch_ms() -> int:
    return int(time.time() * 1000)


class Session:
    """One live link to a board (or a loopback twin of one)."""

    def __init__(self, endpoint, auto_heartbeat: bool = True, now_fn=None):
        self.endpoint = endpoint
        self.auto_heartbeat = auto_heartbeat
        self.board_address = None
        self.pnum_sent = 0
        self.pnum_received_last: int | None = None
        self._now_fn = now_fn or _epoch_ms
        self._stats = LinkStats()
        self._period_deltas: list = []
        self._last_status_t: int | None = None
        self._last_board_hb_t: int | None = None
        self._pending_events: list = []

    # -- session lifecycle ------------------------------------------------

    @classmethod
    def connect(cls, config: ClientConfig | None = None, endpoint=None, **kw) -> "Session":
        """Bind (unless an endpoint is supplied) and wait for the first
        valid frame to learn the board's address."""
        config = config or ClientConfig()
        if endpoint is None:
            endpoint = open_endpoint(
                EndpointConfig(
                    local_addr=config.bind_addr,
                    local_port=config.bind_port,
                    allow_ephemeral=config.allow_ephemeral,
                )
            )
        session = cls(endpoint, auto_heartbeat=config.auto_heartbeat, **kw)
        deadline = time.monotonic() + config.connect_timeout_ms / 1000.0
        while session.board_address is None:
            if not session._drain():
                if time.monotonic() > deadline:
                    raise ConnectTimeout(
                        f"no valid frame within {config.connect_timeout_ms} ms"
                    )
                time.sleep(0.001)
        return session

    def close(self) -> None:
        self.endpoint.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- receiving ----------------------------------------------------------

    def poll(self) -> list:
        """Drain pending frames and return the resulting events."""
        self._drain()
        events, self._pending_events = self._pending_events, []
        return events

    def _drain(self) -> bool:
        got_any = False
        while True:
            got = self.endpoint.recv_frame()
            if got is None:
                return got_any
            got_any = True
            self._handle(*got)

    def _handle(self, data: bytes, source) -> None:
        stats = self._stats
        try:
            frame = parse_frame(data)
        except ChecksumMismatch as e:
            stats.crc_failures += 1
            self._pending_events.append(CrcError(e.computed, e.declared))
            return
        except FrameError:
            stats.malformed += 1
            return

        if self.board_address is None:
            self.board_address = source
        stats.frames_received += 1

        pnum = frame.pnum
        if pnum is not None:
            last = self.pnum_received_last
            if last is not None and pnum > last + 1:
                lost = pnum - last - 1
                stats.gaps_detected += 1
                stats.frames_lost += lost
                self._pending_events.append(Gap(last, pnum, lost))
            if last is None or pnum > last:
                self.pnum_received_last = pnum

        kind = classify(frame)
        if kind is FrameKind.HEARTBEAT and frame.value("H") == BOARD_TAG:
            t = frame.t
            if t is not None:
                if self._last_board_hb_t is not None:
                    stats.heartbeat_intervals_ms.append(t - self._last_board_hb_t)
                self._last_board_hb_t = t
            echoed = False
            if self.auto_heartbeat:
                self.send(Command(Verb.HEARTBEAT, text=HOST_TAG))
                echoed = True
            self._pending_events.append(HeartbeatSeen(t, pnum, echoed))
        elif kind is FrameKind.STATUS:
            stats.status_frames += 1
            t = frame.t
            if t is not None:
                if self._last_status_t is not None:
                    self._period_deltas.append(t - self._last_status_t)
                self._last_status_t = t
            self._pending_events.append(StateUpdate(frame))

    # -- sending ----------------------------------------------------------

    def send(self, cmd: Command) -> None:
        """Serialize with the canonical PNum/T/CRC trailer and transmit."""
        if self.board_address is None:
            raise TransportError("board address not learned yet")
        fields = [
            command_to_field(cmd),
            Field("PNum", str(self.pnum_sent)),
            Field("T", str(self._now_fn())),
        ]
        wire = serialize_frame(fields)
        self.endpoint.send_frame(wire, addr=self.board_address)
        self.pnum_sent += 1

    def send_stop(self) -> None:
        self.send(Command(Verb.STOP))

    # -- statistics ----------------------------------------------------------

    def stats(self) -> LinkStats:
        """Snapshot of the running statistics.

        Period figures need at least two status frames; raises
        InsufficientData otherwise.
        """
        if not self._period_deltas:
            raise InsufficientData("need at least two status frames for period stats")
        s = self._stats
        s.period_mean_ms = statistics.fmean(self._period_deltas)
        s.period_jitter_ms = statistics.pstdev(self._period_deltas)
        return s
