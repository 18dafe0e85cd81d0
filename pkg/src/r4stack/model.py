"""Virtual R4 board hardware state and command application.

Channel families match the physical board: 16 servo channels, four DHB
dual-H-bridge channels (DHB1A/DHB1B/DHB2A/DHB2B), four OSMC H-bridge
channels, four stepper channels, an 8-relay bank, four BLDC driver
channels and six 16-bit analog inputs.

Command verbs:

    H  heartbeat                       (no hardware effect)
    S  servo:   S:width_us,channel     channel 1-16, width 0-20000
    D  DHB:     D:duty,dir,channel     duty 0-4095, channel 1-4
    O  OSMC:    O:width,dir,channel    width 0-4095, channel 1-4
    R  relay:   R:channel,state        channel 1-8, state 0|1
    E  stop:    E:STOP                 zero everything, latch safe state
    P  stepper: P:position,channel     target position, channel 1-4

While the safe-state latch or a DMH condition is active, output
commands are applied to the pending-restore snapshot instead of the
live outputs, so recovery reproduces exactly the state the host last
commanded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal

from .codec import Field, Frame

ADC_FULL_SCALE = 65535
SERVO_MAX_US = 20000
PWM_MAX = 4095  # 12-bit PWM controller behind the DHB/OSMC channels

# Canonical status-field order. Every emitted datagram lists its enabled
# fields in exactly this order; BLDC and RELAY blocks are extensions and
# default to disabled.
DHB_NAMES = ("DHB1A", "DHB1B", "DHB2A", "DHB2B")
STATUS_FIELD_ORDER = (
    ("AIN24", "AIN12", "AIN5", "AINDMH", "DMHSTA", "AINSTEER")
    + DHB_NAMES
    + tuple(f"OSMC{i}" for i in range(1, 5))
    + tuple(f"STEP{i}POS" for i in range(1, 5))
    + tuple(f"SERVO{i}POS" for i in range(1, 17))
    + tuple(f"BLDC{i}" for i in range(1, 5))
    + tuple(f"RELAY{i}" for i in range(1, 9))
)
_CANONICAL_NAME = {n.lower(): n for n in STATUS_FIELD_ORDER}

# Fields mirroring the bench stream; the simulator's default enable set.
DEFAULT_ENABLES = (
    "AIN24", "AIN12", "AIN5", "AINDMH", "DMHSTA", "AINSTEER",
    "DHB1A", "OSMC1", "STEP1POS", "SERVO1POS",
)

# Analog status field -> 0-based ADC channel. AINSTEER rides channel 6;
# channel 5 has no dedicated field. Remappable per application.
DEFAULT_ANALOG_ALIASES = {
    "AIN24": 0,
    "AIN12": 1,
    "AIN5": 2,
    "AINDMH": 3,
    "AINSTEER": 5,
}
DEFAULT_ANALOG_RANGES = (30.0, 15.0, 6.0, 15.0, 12.0, 3.3)


class CommandError(ValueError):
    """Base class for command decoding failures."""


class UnknownVerb(CommandError):
    pass


class BadArity(CommandError):
    pass


class OutOfRange(CommandError):
    pass


class UnknownField(ValueError):
    pass


class Verb(enum.Enum):
    HEARTBEAT = "H"
    SERVO = "S"
    DHB = "D"
    OSMC = "O"
    RELAY = "R"
    STOP = "E"
    STEPPER_TARGET = "P"


@dataclass(frozen=True)
class Command:
    verb: Verb
    args: tuple = ()
    text: str | None = None  # heartbeat peer tag ("ROS2-R4")


@dataclass
class Stepper:
    position: int = 0
    target: int = 0
    accum: float = 0.0  # fractional steps carried between ticks


@dataclass
class Bldc:
    speed: int = 0
    direction: int = 0
    brake: bool = False


@dataclass
class AnalogChannel:
    raw: int = 0
    range_volts: float = 12.0


@dataclass
class OutputSnapshot:
    """Host-commanded output values parked while outputs are masked."""

    servos: list
    dhb: list
    osmc: list
    bldc: list
    relays: list
    stepper_targets: list


@dataclass
class BoardState:
    servos: list = field(default_factory=lambda: [0] * 16)
    dhb: list = field(default_factory=lambda: [(0, 0)] * 4)
    osmc: list = field(default_factory=lambda: [(0, 0)] * 4)
    steppers: list = field(default_factory=lambda: [Stepper() for _ in range(4)])
    relays: list = field(default_factory=lambda: [False] * 8)
    bldc: list = field(default_factory=lambda: [Bldc() for _ in range(4)])
    analog: list = field(
        default_factory=lambda: [
            AnalogChannel(range_volts=r) for r in DEFAULT_ANALOG_RANGES
        ]
    )
    dmh_button: bool = True
    dmh_condition: bool = False
    safe_state: bool = False
    pending_restore: OutputSnapshot | None = None
    enables: set = field(default_factory=lambda: set(DEFAULT_ENABLES))
    analog_aliases: dict = field(default_factory=lambda: dict(DEFAULT_ANALOG_ALIASES))
    dmh_relay_channel: int = 1  # 1-based relay driving the DMH coil circuit

    def masked(self) -> bool:
        return self.safe_state or self.dmh_condition


def snapshot_outputs(state: BoardState) -> OutputSnapshot:
    return OutputSnapshot(
        servos=list(state.servos),
        dhb=list(state.dhb),
        osmc=list(state.osmc),
        bldc=[replace(b) for b in state.bldc],
        relays=list(state.relays),
        stepper_targets=[s.target for s in state.steppers],
    )


def restore_outputs(state: BoardState, snap: OutputSnapshot) -> None:
    state.servos = list(snap.servos)
    state.dhb = list(snap.dhb)
    state.osmc = list(snap.osmc)
    state.bldc = [replace(b) for b in snap.bldc]
    state.relays = list(snap.relays)
    for s, target in zip(state.steppers, snap.stepper_targets):
        s.target = target


def motor_outputs_nonzero(state: BoardState) -> bool:
    return (
        any(d or r for d, r in state.dhb)
        or any(w or r for w, r in state.osmc)
        or any(b.speed or b.direction for b in state.bldc)
    )


def _outputs_nonzero(state: BoardState) -> bool:
    return (
        any(state.servos)
        or motor_outputs_nonzero(state)
        or any(state.relays)
        or any(s.target for s in state.steppers)
    )


def zero_motor_outputs(state: BoardState) -> None:
    state.dhb = [(0, 0)] * 4
    state.osmc = [(0, 0)] * 4
    for b in state.bldc:
        b.speed = 0
        b.direction = 0
    state.relays[state.dmh_relay_channel - 1] = False


def enter_safe_state(state: BoardState, clear_pending: bool = False) -> BoardState:
    """Zero all outputs, open the DMH relay and latch the safe state.

    The previous outputs are parked in pending_restore for heartbeat
    recovery, unless clear_pending is set (a commanded full stop is
    authoritative: recovery must come back with everything off).
    """
    if not state.safe_state:
        if state.pending_restore is None and _outputs_nonzero(state):
            state.pending_restore = snapshot_outputs(state)
        state.safe_state = True
    zero_motor_outputs(state)
    state.servos = [0] * 16
    if clear_pending:
        state.pending_restore = None
    return state


def leave_safe_state(state: BoardState) -> BoardState:
    """Unlatch and restore the outputs last commanded by the host."""
    if not state.safe_state:
        return state
    state.safe_state = False
    if state.pending_restore is not None:
        restore_outputs(state, state.pending_restore)
        state.pending_restore = None
    return state


def _int_arg(token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise OutOfRange(f"{what} {token!r} is not an integer") from None


def _check(value: int, lo: int, hi: int, what: str) -> int:
    if not lo <= value <= hi:
        raise OutOfRange(f"{what} {value} outside {lo}..{hi}")
    return value


def _args(frame_field: Field, count: int, verb: str) -> tuple:
    if len(frame_field.elements) != count:
        raise BadArity(
            f"'{verb}' takes {count} elements, got {len(frame_field.elements)}"
        )
    return frame_field.elements


def decode_command(frame: Frame):
    """Decode a command (or heartbeat) frame.

    Returns (Command, pnum, t) where pnum/t come from the trailer and
    may be None on frames that omit them -- host heartbeats in bench
    logs carry only T.
    """
    lead = frame.fields[0]
    letter = lead.name.upper()
    try:
        verb = Verb(letter)
    except ValueError:
        raise UnknownVerb(f"unknown command verb {lead.name!r}") from None

    if verb is Verb.HEARTBEAT:
        (peer,) = _args(lead, 1, letter)
        cmd = Command(Verb.HEARTBEAT, text=peer)
    elif verb is Verb.STOP:
        (word,) = _args(lead, 1, letter)
        if word != "STOP":
            raise OutOfRange(f"'E' expects STOP, got {word!r}")
        cmd = Command(Verb.STOP)
    elif verb is Verb.SERVO:
        width, channel = (_int_arg(x, "servo arg") for x in _args(lead, 2, letter))
        _check(width, 0, SERVO_MAX_US, "servo width")
        _check(channel, 1, 16, "servo channel")
        cmd = Command(Verb.SERVO, (width, channel))
    elif verb in (Verb.DHB, Verb.OSMC):
        duty, direction, channel = (
            _int_arg(x, "bridge arg") for x in _args(lead, 3, letter)
        )
        _check(duty, 0, PWM_MAX, "bridge duty")
        _check(direction, 0, 1, "bridge direction")
        _check(channel, 1, 4, "bridge channel")
        cmd = Command(verb, (duty, direction, channel))
    elif verb is Verb.RELAY:
        channel, relay_state = (
            _int_arg(x, "relay arg") for x in _args(lead, 2, letter)
        )
        _check(channel, 1, 8, "relay channel")
        _check(relay_state, 0, 1, "relay state")
        cmd = Command(Verb.RELAY, (channel, relay_state))
    else:  # Verb.STEPPER_TARGET
        position, channel = (
            _int_arg(x, "stepper arg") for x in _args(lead, 2, letter)
        )
        _check(position, -(2**31), 2**31 - 1, "stepper position")
        _check(channel, 1, 4, "stepper channel")
        cmd = Command(Verb.STEPPER_TARGET, (position, channel))

    return cmd, frame.pnum, frame.t


def command_to_field(cmd: Command) -> Field:
    """Leading wire field for a command; trailer fields are appended by
    the sender."""
    if cmd.verb is Verb.HEARTBEAT:
        return Field("H", cmd.text or "ROS2-R4")
    if cmd.verb is Verb.STOP:
        return Field("E", "STOP")
    return Field(cmd.verb.value, tuple(str(a) for a in cmd.args))


def apply_command(state: BoardState, cmd: Command) -> BoardState:
    """Apply a validated command to the board state.

    Deterministic; no validation errors (decode_command already range
    checked). Masked outputs divert to the pending snapshot.
    """
    if cmd.verb is Verb.HEARTBEAT:
        return state
    if cmd.verb is Verb.STOP:
        return enter_safe_state(state, clear_pending=True)

    if state.masked():
        if state.pending_restore is None:
            state.pending_restore = snapshot_outputs(state)
        _apply_output(state.pending_restore, cmd)
        return state

    _apply_output(state, cmd)
    return state


def _apply_output(target, cmd: Command) -> None:
    """Write one output value into either a BoardState or a snapshot."""
    if cmd.verb is Verb.SERVO:
        width, channel = cmd.args
        target.servos[channel - 1] = width
    elif cmd.verb is Verb.DHB:
        duty, direction, channel = cmd.args
        target.dhb[channel - 1] = (duty, direction)
    elif cmd.verb is Verb.OSMC:
        width, direction, channel = cmd.args
        target.osmc[channel - 1] = (width, direction)
    elif cmd.verb is Verb.RELAY:
        channel, relay_state = cmd.args
        target.relays[channel - 1] = bool(relay_state)
    elif cmd.verb is Verb.STEPPER_TARGET:
        position, channel = cmd.args
        if isinstance(target, OutputSnapshot):
            target.stepper_targets[channel - 1] = position
        else:
            target.steppers[channel - 1].target = position


def scale_adc(raw: int, range_volts: float):
    """Linear ADC scaling: full scale 65535 maps to range_volts.

    Returns (volts, text) where text has exactly two decimals, ties
    rounded away from zero, as the status stream prints voltages.
    """
    if not 0 <= raw <= ADC_FULL_SCALE:
        raise OutOfRange(f"ADC raw value {raw} outside 0..{ADC_FULL_SCALE}")
    volts = raw / ADC_FULL_SCALE * range_volts
    exact = Decimal(raw) * Decimal(str(range_volts)) / Decimal(ADC_FULL_SCALE)
    text = str(exact.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
    return volts, text


def _volts_text(state: BoardState, field_name: str) -> str:
    ch = state.analog[state.analog_aliases[field_name]]
    return scale_adc(ch.raw, ch.range_volts)[1]


def snapshot(state: BoardState) -> list:
    """Enabled status fields, formatted, in the canonical order."""
    out = []
    enabled = state.enables
    for name in STATUS_FIELD_ORDER:
        if name not in enabled:
            continue
        if name in state.analog_aliases:
            out.append(Field(name, _volts_text(state, name)))
        elif name == "DMHSTA":
            out.append(Field(name, str(int(state.dmh_button))))
        elif name in DHB_NAMES:
            duty, direction = state.dhb[DHB_NAMES.index(name)]
            out.append(Field(name, (str(duty), str(direction))))
        elif name.startswith("OSMC"):
            width, direction = state.osmc[int(name[4:]) - 1]
            out.append(Field(name, (str(width), str(direction))))
        elif name.startswith("STEP"):
            out.append(Field(name, str(state.steppers[int(name[4]) - 1].position)))
        elif name.startswith("SERVO"):
            out.append(Field(name, str(state.servos[int(name[5:-3]) - 1])))
        elif name.startswith("BLDC"):
            b = state.bldc[int(name[4:]) - 1]
            out.append(Field(name, (str(b.speed), str(b.direction))))
        else:  # RELAYn
            out.append(Field(name, str(int(state.relays[int(name[5:]) - 1]))))
    return out


def set_enable(state: BoardState, name: str, on: bool) -> BoardState:
    canonical = _CANONICAL_NAME.get(name.lower())
    if canonical is None:
        raise UnknownField(f"unknown status field {name!r}")
    if on:
        state.enables.add(canonical)
    else:
        state.enables.discard(canonical)
    return state
