"""The virtual R4 board: a tick-driven loop over injected clock and
transport.

Each tick polls the transport, dispatches verified frames, advances
stepper kinematics, regenerates sensor inputs, re-evaluates the DMH
condition, runs the heartbeat watchdog and emits the status datagram
when its period elapses (Normal phase only; a safe-stated board sends
heartbeats and nothing else).

The diagnostic stream mirrors the board firmware's serial-terminal
format line for line:

    Attempting to Establish a Connection: H:R4-ROS2;PNum:0;T:0;^0xb10b3a06^
    AIN24:24.28;...;PNum:7440;T:79150;^0x122e5cd7^
    Incoming Packet: O:358,1,1;...^0x7fefae81^ R4_Received_at:T: 79146;
    Interval Between Heart Beats mS: 505

which is exactly the capture format the conformance checker consumes.

Clocks come in two modes. A real clock tracks the wall; a virtual clock
advances only when stepped, which makes every timing test deterministic
and lets two runs with the same config, seed and host script produce
byte-identical streams.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

from . import model, safety
from .codec import (
    ChecksumMismatch,
    Field,
    FrameError,
    FrameKind,
    classify,
    parse_frame,
    serialize_frame,
)
from .model import BoardState, Verb, decode_command
from .safety import LinkAction, LinkState, Phase
from .transport import DEFAULT_BOARD_PORT, DEFAULT_HOST_PORT

BOARD_TAG = "R4-ROS2"  # heartbeat element, board to host
HOST_TAG = "ROS2-R4"  # heartbeat element, host to board


class ConfigError(ValueError):
    pass


class SimClock:
    """Millisecond clock, real or virtual.

    Virtual mode starts at zero and moves only via advance_to(); real
    mode tracks the monotonic wall clock from construction.
    """

    def __init__(self, mode: str = "real"):
        if mode not in ("real", "virtual"):
            raise ConfigError(f"unknown clock mode {mode!r}")
        self.mode = mode
        self._virtual_now = 0
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        if self.mode == "virtual":
            return self._virtual_now
        return int((time.monotonic() - self._t0) * 1000)

    def advance_to(self, t: int) -> None:
        if self.mode != "virtual":
            raise ConfigError("advance_to is only valid on a virtual clock")
        if t < self._virtual_now:
            raise ValueError("clock cannot move backwards")
        self._virtual_now = t


@dataclass
class AnalogSource:
    """Voltage generator for one ADC channel.

    kind "constant": fixed volts. kind "noisy": volts uniform in
    mean +/- jitter. kind "ramp": slope volts/s, wrapping at the
    channel range (strictly monotone until the wrap).
    """

    kind: str = "constant"
    volts: float = 0.0
    mean: float = 0.0
    jitter: float = 0.0
    slope: float = 1.0

    def sample(self, now_ms: int, rng: random.Random, range_volts: float) -> float:
        if self.kind == "constant":
            return self.volts
        if self.kind == "noisy":
            return self.mean + rng.uniform(-self.jitter, self.jitter)
        if self.kind == "ramp":
            return (self.slope * now_ms / 1000.0) % range_volts
        raise ConfigError(f"unknown analog source kind {self.kind!r}")


@dataclass
class DistanceSource:
    """Ultrasonic range generator: a fixed distance or nothing connected."""

    kind: str = "none"
    cm: float | None = None

    def sample(self, now_ms: int) -> float | None:
        if self.kind == "none":
            return None
        if self.kind == "constant":
            return self.cm
        raise ConfigError(f"unknown distance source kind {self.kind!r}")


@dataclass
class NetworkConfig:
    bind_addr: str = "127.0.0.1"
    bind_port: int = DEFAULT_BOARD_PORT
    host_addr: str = "127.0.0.1"
    host_port: int = DEFAULT_HOST_PORT


@dataclass
class DmhConfig:
    button_pressed: bool = True
    button_enforced: bool = False
    relay_channel: int = 1


@dataclass
class SensorConfig:
    enabled: bool = False
    min_distance_cm: float = 30.0
    channels: list = field(default_factory=lambda: [DistanceSource() for _ in range(4)])


@dataclass
class StepperConfig:
    rate_steps_per_s: float = 100.0
    demo: bool = False
    demo_span: int = 100


def _default_analog_sources() -> dict:
    return {
        "AIN24": AnalogSource("constant", volts=24.28),
        "AIN12": AnalogSource("noisy", mean=12.15, jitter=0.05),
        "AIN5": AnalogSource("constant", volts=5.11),
        "AINDMH": AnalogSource("constant", volts=12.15),
        "AINSTEER": AnalogSource("noisy", mean=1.02, jitter=0.05),
    }


@dataclass
class SimConfig:
    datagram_period_ms: int = 10
    heartbeat_interval_ms: int = safety.DEFAULT_HEARTBEAT_INTERVAL_MS
    heartbeat_timeout_ms: int = safety.DEFAULT_HEARTBEAT_TIMEOUT_MS
    seed: int = 0
    enables: tuple = model.DEFAULT_ENABLES
    network: NetworkConfig = field(default_factory=NetworkConfig)
    steppers: StepperConfig = field(default_factory=StepperConfig)
    analog_sources: dict = field(default_factory=_default_analog_sources)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    dmh: DmhConfig = field(default_factory=DmhConfig)

    def __post_init__(self):
        try:
            if isinstance(self.network, dict):
                self.network = NetworkConfig(**self.network)
            if isinstance(self.steppers, dict):
                self.steppers = StepperConfig(**self.steppers)
            if isinstance(self.dmh, dict):
                self.dmh = DmhConfig(**self.dmh)
            if isinstance(self.sensors, dict):
                sensors = dict(self.sensors)
                if "channels" in sensors:
                    sensors["channels"] = [
                        ch if isinstance(ch, DistanceSource) else DistanceSource(**ch)
                        for ch in sensors["channels"]
                    ]
                self.sensors = SensorConfig(**sensors)
            self.analog_sources = {
                name: src if isinstance(src, AnalogSource) else AnalogSource(**src)
                for name, src in self.analog_sources.items()
            }
        except TypeError as e:
            raise ConfigError(f"bad simulator config: {e}") from e
        if self.datagram_period_ms < 1:
            raise ConfigError("datagram_period_ms must be >= 1")
        if self.heartbeat_timeout_ms <= self.heartbeat_interval_ms:
            raise ConfigError("heartbeat_timeout_ms must exceed heartbeat_interval_ms")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        """Build a config from the JSON schema documented in the README."""
        try:
            kwargs = {}
            for key in (
                "datagram_period_ms",
                "heartbeat_interval_ms",
                "heartbeat_timeout_ms",
                "seed",
            ):
                if key in data:
                    kwargs[key] = int(data[key])
            if "enables" in data:
                kwargs["enables"] = tuple(data["enables"])
            for src_key, dst_key in (
                ("network", "network"),
                ("steppers", "steppers"),
                ("analog", "analog_sources"),
                ("sensors", "sensors"),
                ("dmh", "dmh"),
            ):
                if src_key in data:
                    kwargs[dst_key] = data[src_key]
            unknown = set(data) - {
                "datagram_period_ms", "heartbeat_interval_ms", "heartbeat_timeout_ms",
                "seed", "enables", "network", "steppers", "analog", "sensors", "dmh",
            }
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(unknown)}")
            return cls(**kwargs)
        except (TypeError, ValueError, KeyError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad simulator config: {e}") from e

    @classmethod
    def from_json(cls, path: str) -> "SimConfig":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e


class Simulator:
    """One virtual board wired to one transport endpoint.

    The caller owns the loop: either call tick() at its own cadence
    (tests), run_until() on a virtual clock, or run() for a paced
    real-clock process.
    """

    def __init__(self, config: SimConfig, endpoint=None, clock=None, diag=None, capture=None):
        self.config = config
        self.endpoint = endpoint
        self.clock = clock or SimClock("real")
        self.diag = diag
        self.capture = capture
        self.rng = random.Random(config.seed)

        self.link = LinkState(
            heartbeat_interval_ms=config.heartbeat_interval_ms,
            heartbeat_timeout_ms=config.heartbeat_timeout_ms,
        )
        self.board = BoardState(
            enables=set(config.enables),
            dmh_relay_channel=config.dmh.relay_channel,
        )
        for name in config.analog_sources:
            if name not in self.board.analog_aliases:
                raise ConfigError(f"analog source for unknown field {name!r}")

        self.crc_failures = 0
        self.malformed = 0
        self.command_errors = 0
        self.frames_sent = 0
        self._next_status: int | None = None
        self._last_kinematics: int = self.clock.now_ms()

    # -- diagnostics ---------------------------------------------------

    def _log(self, line: str, stream_line: bool = True) -> None:
        if self.diag is not None:
            self.diag(line)
        if stream_line and self.capture is not None:
            self.capture(line)

    def banner(self) -> None:
        """Startup banner on the diagnostic stream (rates, then the
        connection attempts follow as the loop runs)."""
        hb_hz = 1000 // self.link.heartbeat_interval_ms
        dg_hz = 1000 // self.config.datagram_period_ms
        for line in (
            "R4 Test!",
            "",
            f"Heartbeat Frequency Hz : {hb_hz}",
            f"HeartbeatInterval_ms : {self.link.heartbeat_interval_ms}",
            f"heartbeatIntervalMax : {self.link.heartbeat_timeout_ms}",
            "",
            f"Datagram Frequency Hz : {dg_hz}",
            f"datagramInterval_ms : {self.config.datagram_period_ms}",
            "",
        ):
            self._log(line, stream_line=False)

    # -- frame handling ------------------------------------------------

    def handle_frame(self, data: bytes, now: int) -> None:
        """Dispatch one received datagram (counted and dropped unless
        its checksum verifies)."""
        try:
            frame = parse_frame(data)
        except ChecksumMismatch:
            self.crc_failures += 1
            return
        except FrameError:
            self.malformed += 1
            return

        text = data.rstrip(b"\r\n").decode("ascii", "replace")
        self._log(f"Incoming Packet: {text} R4_Received_at:T: {now};")

        kind = classify(frame)
        if kind is FrameKind.HEARTBEAT:
            if frame.value("H") == HOST_TAG:
                if frame.pnum is not None:
                    self.link.pnum_in_last = frame.pnum
                interval = safety.on_host_heartbeat(self.link, self.board, now)
                if interval is not None:
                    self._log(f"Interval Between Heart Beats mS: {interval}")
        elif kind is FrameKind.COMMAND:
            try:
                cmd, pnum, _ = decode_command(frame)
            except model.CommandError:
                self.command_errors += 1
                return
            if pnum is not None:
                self.link.pnum_in_last = pnum
            if cmd.verb is Verb.STOP:
                safety.on_stop_command(self.link, self.board)
            else:
                model.apply_command(self.board, cmd)
        # status frames from elsewhere are ignored

    # -- hardware progression -------------------------------------------

    def step_kinematics(self, dt_ms: int) -> None:
        """Advance steppers toward their targets at the configured rate.

        Motion halts while outputs are masked (safe state or DMH); the
        demo sweep bounces targets between +/- demo_span.
        """
        if dt_ms <= 0:
            return
        cfg = self.config.steppers
        if self.board.masked():
            return
        for stepper in self.board.steppers:
            if cfg.demo and stepper.position == stepper.target:
                stepper.target = (
                    cfg.demo_span if stepper.target <= 0 else -cfg.demo_span
                )
            if stepper.position == stepper.target or cfg.rate_steps_per_s <= 0:
                continue
            stepper.accum += cfg.rate_steps_per_s * dt_ms / 1000.0
            whole = int(stepper.accum)
            if whole <= 0:
                continue
            stepper.accum -= whole
            delta = stepper.target - stepper.position
            step = min(whole, abs(delta))
            stepper.position += step if delta > 0 else -step

    def sample_sensors(self, now: int) -> None:
        """Regenerate analog raw values and ultrasonic distances, then
        re-derive the DMH condition."""
        for name, source in self.config.analog_sources.items():
            channel = self.board.analog[self.board.analog_aliases[name]]
            volts = source.sample(now, self.rng, channel.range_volts)
            raw = round(volts / channel.range_volts * model.ADC_FULL_SCALE)
            channel.raw = min(max(raw, 0), model.ADC_FULL_SCALE)

        distances = tuple(src.sample(now) for src in self.config.sensors.channels)
        inputs = safety.DmhInputs(
            button_pressed=self.config.dmh.button_pressed,
            sensor_distances=distances,
            sensors_enabled=self.config.sensors.enabled,
            min_distance_cm=self.config.sensors.min_distance_cm,
            button_enforced=self.config.dmh.button_enforced,
        )
        safety.evaluate_dmh(inputs, self.board)

    # -- emission --------------------------------------------------------

    def _send(self, wire: bytes) -> None:
        if self.endpoint is not None:
            self.endpoint.send_frame(wire)
        self.frames_sent += 1

    def _emit_heartbeat(self, now: int) -> None:
        if self.link.phase is Phase.CONNECTING:
            fields = [Field("H", BOARD_TAG), Field("PNum", "0"), Field("T", "0")]
            wire = serialize_frame(fields)
            text = wire.rstrip(b"\r").decode("ascii")
            self._log(f"Attempting to Establish a Connection: {text}")
        else:
            pnum = safety.next_pnum(self.link)
            fields = [
                Field("H", BOARD_TAG),
                Field("PNum", str(pnum)),
                Field("T", str(now)),
            ]
            wire = serialize_frame(fields)
            self._log(wire.rstrip(b"\r").decode("ascii"))
        self._send(wire)

    def _emit_status(self, now: int) -> None:
        pnum = safety.next_pnum(self.link)
        fields = model.snapshot(self.board)
        fields.append(Field("PNum", str(pnum)))
        fields.append(Field("T", str(now)))
        wire = serialize_frame(fields)
        self._log(wire.rstrip(b"\r").decode("ascii"))
        self._send(wire)

    # -- the loop ----------------------------------------------------------

    def tick(self) -> None:
        """One loop iteration at the clock's current time."""
        now = self.clock.now_ms()

        if self.endpoint is not None:
            while True:
                got = self.endpoint.recv_frame()
                if got is None:
                    break
                self.handle_frame(got[0], now)

        self.step_kinematics(now - self._last_kinematics)
        self._last_kinematics = now
        self.sample_sensors(now)

        for action in safety.tick(self.link, self.board, now):
            if action is LinkAction.SEND_HEARTBEAT:
                self._emit_heartbeat(now)

        if self.link.phase is Phase.NORMAL:
            if self._next_status is None:
                self._next_status = now + self.config.datagram_period_ms
            while now >= self._next_status:
                self._emit_status(now)
                self._next_status += self.config.datagram_period_ms
        else:
            self._next_status = None

    def next_deadline(self, horizon: int) -> int:
        """Earliest future instant at which tick() has work to do."""
        now = self.clock.now_ms()
        candidates = [horizon]
        last_sent = self.link.last_sent_heartbeat
        if self.link.phase is not Phase.LINK_DOWN:
            candidates.append(
                now if last_sent is None else last_sent + self.link.heartbeat_interval_ms
            )
        if self.link.phase is Phase.NORMAL:
            if self._next_status is not None:
                candidates.append(self._next_status)
            candidates.append(
                self.link.last_host_heartbeat + self.link.heartbeat_timeout_ms + 1
            )
        return max(min(candidates), now + 1)

    def run_until(self, t: int) -> None:
        """Drive a virtual clock to t, ticking at every deadline."""
        self.tick()
        while self.clock.now_ms() < t:
            step = min(self.next_deadline(t), t)
            self.clock.advance_to(step)
            self.tick()

    def run(self, duration_ms: int | None = None, stop=None) -> None:
        """Paced real-clock loop; returns after duration_ms or when the
        stop event (threading.Event-like) is set."""
        start = self.clock.now_ms()
        while True:
            if stop is not None and stop.is_set():
                return
            self.tick()
            now = self.clock.now_ms()
            if duration_ms is not None and now - start >= duration_ms:
                return
            horizon = now + 1000
            if duration_ms is not None:
                horizon = min(horizon, start + duration_ms)
            wait = self.next_deadline(horizon) - self.clock.now_ms()
            # cap the sleep so incoming datagrams are polled promptly
            time.sleep(max(0.0, min(wait, 2)) / 1000.0)

    def inject_link_down(self) -> None:
        """Model a carrier-loss event from the radio."""
        safety.on_link_down(self.link, self.board)


def _echo_heartbeats(host_endpoint) -> None:
    """Ideal host: answer every board heartbeat, mirroring its T and
    omitting PNum, the way bench captures show hosts replying."""
    from .codec import crc32_field

    while True:
        got = host_endpoint.recv_frame()
        if got is None:
            return
        try:
            frame = parse_frame(got[0])
        except FrameError:
            continue
        if classify(frame) is FrameKind.HEARTBEAT and frame.value("H") == BOARD_TAG:
            body = f"H:{HOST_TAG};T:{frame.t};".encode("ascii")
            cov = body + b"^"
            host_endpoint.send_frame(cov + crc32_field(cov).encode("ascii") + b"^\r")


def offline_capture(config: SimConfig, duration_ms: int, diag=None) -> list:
    """Deterministic virtual-clock run against an ideal echoing host.

    Returns the capture lines (frames plus diagnostic interleave) that a
    live run would have produced, byte-identical for identical config,
    seed and duration.
    """
    from .transport import loopback_pair

    lines: list = []
    board_side, host_side = loopback_pair()
    clock = SimClock("virtual")
    sim = Simulator(config, endpoint=board_side, clock=clock, diag=diag, capture=lines.append)
    sim.banner()
    sim.tick()
    _echo_heartbeats(host_side)
    while clock.now_ms() < duration_ms:
        clock.advance_to(min(sim.next_deadline(duration_ms), duration_ms))
        sim.tick()
        _echo_heartbeats(host_side)
    return lines
