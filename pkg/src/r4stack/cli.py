"""Command-line tools: r4sim, r4ctl, r4check.

Exit codes across all three: 0 success, 1 check/operation failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time

from . import model
from .check import check_capture, format_report
from .client import ClientConfig, Session, StateUpdate, InsufficientData
from .codec import FrameError
from .model import Command, Verb, decode_command
from .simulator import ConfigError, SimClock, SimConfig, Simulator, offline_capture
from .transport import (
    BindFailure,
    DEFAULT_HOST_PORT,
    EndpointConfig,
    TransportError,
    open_endpoint,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _die(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- r4sim


def r4sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="r4sim",
        description="Run a virtual R4 board speaking the UDP protocol.",
    )
    parser.add_argument("--config", help="JSON config file (see README for the schema)")
    parser.add_argument("--port", type=int, help="UDP port to bind (default 2018)")
    parser.add_argument("--host", help="host address:port for the status stream")
    parser.add_argument("--rate-hz", type=float, help="status datagram rate (default 100)")
    parser.add_argument("--seed", type=int, help="RNG seed for sensor noise")
    parser.add_argument(
        "--virtual-clock",
        action="store_true",
        help="deterministic offline run against an ideal echoing host (no UDP)",
    )
    parser.add_argument(
        "--duration-ms", type=int, help="stop after this much (sim) time"
    )
    parser.add_argument("--capture", help="write the capture stream to this file")
    parser.add_argument("--quiet", action="store_true", help="suppress the diagnostic stream")
    args = parser.parse_args(argv)

    try:
        config = SimConfig.from_json(args.config) if args.config else SimConfig()
        if args.rate_hz:
            if args.rate_hz <= 0 or args.rate_hz > 1000:
                raise ConfigError("--rate-hz must be in 1..1000")
            config.datagram_period_ms = max(1, round(1000 / args.rate_hz))
        if args.seed is not None:
            config.seed = args.seed
        if args.port is not None:
            config.network.bind_port = args.port
        if args.host:
            addr, _, port = args.host.partition(":")
            config.network.host_addr = addr
            if port:
                config.network.host_port = int(port)
    except (ConfigError, ValueError) as e:
        return _die(str(e))

    diag = None if args.quiet else lambda line: print(line, flush=True)
    capture_file = open(args.capture, "w") if args.capture else None
    capture = (lambda line: print(line, file=capture_file)) if capture_file else None

    try:
        if args.virtual_clock:
            if args.duration_ms is None:
                return _die("--virtual-clock needs --duration-ms")
            lines = offline_capture(config, args.duration_ms, diag=diag)
            if capture:
                for line in lines:
                    capture(line)
            elif args.quiet:
                for line in lines:
                    print(line)
            return EXIT_OK

        endpoint = open_endpoint(
            EndpointConfig(
                local_addr=config.network.bind_addr,
                local_port=config.network.bind_port,
                peer_addr=config.network.host_addr,
                peer_port=config.network.host_port,
                allow_ephemeral=True,
            )
        )
        sim = Simulator(config, endpoint=endpoint, clock=SimClock("real"), diag=diag, capture=capture)
        sim.banner()
        try:
            sim.run(duration_ms=args.duration_ms)
        except KeyboardInterrupt:
            pass
        finally:
            endpoint.close()
        return EXIT_OK
    except BindFailure as e:
        return _die(str(e), EXIT_FAIL)
    finally:
        if capture_file:
            capture_file.close()


# ---------------------------------------------------------------- r4ctl

_VERB_LETTERS = {v.value: v for v in Verb}


def _expected_reflection(cmd: Command):
    """(field name, expected elements) a status datagram shows once the
    command has been applied, or None when nothing observable exists."""
    if cmd.verb is Verb.SERVO:
        width, channel = cmd.args
        return f"SERVO{channel}POS", (str(width),)
    if cmd.verb is Verb.DHB:
        duty, direction, channel = cmd.args
        return model.DHB_NAMES[channel - 1], (str(duty), str(direction))
    if cmd.verb is Verb.OSMC:
        width, direction, channel = cmd.args
        return f"OSMC{channel}", (str(width), str(direction))
    if cmd.verb is Verb.RELAY:
        channel, state = cmd.args
        return f"RELAY{channel}", (str(state),)
    if cmd.verb is Verb.STEPPER_TARGET:
        return None  # motion is gradual; watch STEPnPOS in monitor
    return None


def _parse_send_args(tokens):
    letter = tokens[0].upper()
    verb = _VERB_LETTERS.get(letter)
    if verb is None:
        raise ValueError(f"unknown verb {tokens[0]!r} (one of {''.join(_VERB_LETTERS)})")
    if verb is Verb.STOP:
        return Command(Verb.STOP)
    if verb is Verb.HEARTBEAT:
        return Command(Verb.HEARTBEAT, text="ROS2-R4")
    args = tuple(int(t) for t in tokens[1:])
    cmd = Command(verb, args)
    # reuse the wire decoder for range validation
    from .codec import Field, parse_frame, serialize_frame

    wire = serialize_frame(
        [model.command_to_field(cmd), Field("PNum", "0"), Field("T", "0")]
    )
    decode_command(parse_frame(wire))
    return cmd


def _connect(args) -> Session:
    return Session.connect(
        ClientConfig(
            bind_addr=args.bind,
            bind_port=args.port,
            allow_ephemeral=True,
            connect_timeout_ms=args.timeout_ms,
            auto_heartbeat=not args.no_heartbeat_reply,
        )
    )


def r4ctl_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="r4ctl", description="Control and monitor an R4 board or simulator."
    )
    parser.add_argument("--bind", default="0.0.0.0", help="address to bind")
    parser.add_argument("--port", type=int, default=DEFAULT_HOST_PORT, help="UDP port to bind")
    parser.add_argument("--timeout-ms", type=int, default=5000, help="connect timeout")
    parser.add_argument(
        "--no-heartbeat-reply",
        action="store_true",
        help="do not echo heartbeats (exercises the board watchdog)",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_monitor = sub.add_parser("monitor", help="print each status frame as received")
    p_monitor.add_argument("--duration-ms", type=int, help="stop after this long")

    p_send = sub.add_parser("send", help="send one command and confirm reflection")
    p_send.add_argument("verb", help="command letter (S, D, O, R, P, E)")
    p_send.add_argument("args", nargs="*", type=int, help="command arguments")

    p_stats = sub.add_parser("stats", help="collect and print link statistics")
    p_stats.add_argument("--duration-ms", type=int, default=1000)

    sub.add_parser("stop", help="send E:STOP (board enters safe state)")

    args = parser.parse_args(argv)

    try:
        if args.subcommand == "send":
            command = _parse_send_args([args.verb] + [str(a) for a in args.args])
    except (ValueError, model.CommandError, FrameError) as e:
        return _die(str(e))

    try:
        session = _connect(args)
    except (TransportError, BindFailure) as e:
        return _die(str(e), EXIT_FAIL)

    try:
        if args.subcommand == "monitor":
            return _ctl_monitor(session, args.duration_ms)
        if args.subcommand == "send":
            return _ctl_send(session, command)
        if args.subcommand == "stats":
            return _ctl_stats(session, args.duration_ms)
        if args.subcommand == "stop":
            return _ctl_stop(session)
        return _die("unreachable")
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        session.close()


def _pump(session, duration_ms, on_update=None):
    """Poll for a while, feeding StateUpdate frames to the callback."""
    deadline = time.monotonic() + duration_ms / 1000.0
    while time.monotonic() < deadline:
        for event in session.poll():
            if isinstance(event, StateUpdate) and on_update is not None:
                if on_update(event.frame) is False:
                    return False
        time.sleep(0.001)
    return True


def _ctl_monitor(session, duration_ms) -> int:
    def show(frame):
        print(frame.raw.rstrip(b"\r\n").decode("ascii", "replace"), flush=True)

    _pump(session, duration_ms if duration_ms is not None else 10**9, show)
    return EXIT_OK


def _ctl_send(session, command: Command) -> int:
    session.poll()
    session.send(command)

    if command.verb is Verb.STOP:
        # a commanded stop must stick: stop echoing heartbeats too, or the
        # next exchange would recover the board out of its safe state
        session.auto_heartbeat = False
        seen = []
        _pump(session, 600, lambda f: seen.append(f) or None)
        halted = len(seen) < 3
        print("E:STOP sent; status stream " + ("halted (safe state)" if halted else "still running"))
        return EXIT_OK if halted else EXIT_FAIL

    expected = _expected_reflection(command)
    if expected is None:
        print(f"{command.verb.name} sent")
        return EXIT_OK

    name, elements = expected
    progress = {"frames": 0, "field_seen": False, "matched": False}

    def watch(frame):
        progress["frames"] += 1
        got = frame.get(name)
        if got is None:
            return None  # field not enabled in the stream
        progress["field_seen"] = True
        if got.elements == elements:
            progress["matched"] = True
            return False  # reflected; stop pumping
        return None

    _pump(session, 2000, watch)
    if progress["matched"]:
        print(f"{name}:{','.join(elements)} reflected after {progress['frames']} frame(s)")
        return EXIT_OK
    if not progress["field_seen"] and progress["frames"]:
        print(f"sent ({name} not present in the status stream; enable it in the simulator config)")
        return EXIT_OK
    print("no reflection observed")
    return EXIT_FAIL


def _ctl_stats(session, duration_ms) -> int:
    _pump(session, duration_ms)
    try:
        stats = session.stats()
    except InsufficientData as e:
        return _die(str(e), EXIT_FAIL)
    print(
        f"frames={stats.frames_received} status={stats.status_frames} "
        f"period_mean={stats.period_mean_ms:.1f}ms period_jitter={stats.period_jitter_ms:.2f}ms "
        f"loss={stats.frames_lost} gaps={stats.gaps_detected} crc_failures={stats.crc_failures} "
        f"heartbeat_intervals={stats.heartbeat_intervals_ms}"
    )
    return EXIT_OK


def _ctl_stop(session) -> int:
    session.auto_heartbeat = False
    session.send_stop()
    print("E:STOP sent")
    return EXIT_OK


# ---------------------------------------------------------------- r4check


def r4check_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="r4check",
        description="Validate a captured datagram log: grammar, CRC, sequencing, timing.",
    )
    parser.add_argument("capture", help="capture file, one frame per line")
    parser.add_argument(
        "--paper-capture",
        action="store_true",
        help="allowlist the documented transcription defects of published bench captures",
    )
    parser.add_argument(
        "--strict", action="store_true", help="no leniency for published-capture defects"
    )
    parser.add_argument("--verbose", action="store_true", help="list every defect")
    args = parser.parse_args(argv)

    if args.paper_capture and args.strict:
        return _die("--paper-capture and --strict are mutually exclusive")
    try:
        report = check_capture(
            args.capture, paper_capture=args.paper_capture, strict=args.strict
        )
    except TransportError as e:
        return _die(str(e))
    print(format_report(report, verbose=args.verbose))
    return EXIT_OK if report.verdict else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(r4check_main())
