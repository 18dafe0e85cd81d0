"""Virtual-clock simulator behavior: cadence, reflection, suppression,
kinematics, sensors, determinism."""

import pytest

from r4stack.codec import FrameKind, classify, crc32_field, parse_frame
from r4stack.safety import Phase
from r4stack.simulator import (
    AnalogSource,
    ConfigError,
    DistanceSource,
    SimClock,
    SimConfig,
    Simulator,
    offline_capture,
)
from r4stack.transport import loopback_pair


class Harness:
    """A sim on a loopback pair with a hand-driven host and clock."""

    def __init__(self, **config_kw):
        self.config = SimConfig(**config_kw)
        self.board_side, self.host_side = loopback_pair()
        self.clock = SimClock("virtual")
        self.lines = []
        self.sim = Simulator(
            self.config,
            endpoint=self.board_side,
            clock=self.clock,
            capture=self.lines.append,
        )

    def host_frames(self):
        out = []
        while True:
            got = self.host_side.recv_frame()
            if got is None:
                return out
            out.append(parse_frame(got[0]))

    def host_send(self, body: str):
        cov = body.encode() + b"^"
        self.host_side.send_frame(cov + crc32_field(cov).encode() + b"^\r")

    def host_heartbeat(self, t: int = 0):
        self.host_send(f"H:ROS2-R4;PNum:0;T:{t};")

    def run_to(self, t: int):
        self.sim.run_until(t)

    def run_kept_alive(self, t: int, step: int = 400):
        """Advance while posting host heartbeats so the watchdog stays fed."""
        now = self.clock.now_ms()
        while now < t:
            now = min(now + step, t)
            self.run_to(now)
            self.host_heartbeat(t=now)

    def statuses(self, frames):
        return [f for f in frames if classify(f) is FrameKind.STATUS]


def test_connection_attempts_use_pinned_counters():
    h = Harness()
    h.run_to(1600)
    frames = h.host_frames()
    assert len(frames) == 4  # t = 0, 500, 1000, 1500
    assert all(classify(f) is FrameKind.HEARTBEAT for f in frames)
    assert all(f.pnum == 0 and f.t == 0 for f in frames)
    assert all(line.startswith("Attempting to Establish a Connection:") for line in h.lines)


def test_status_stream_starts_after_first_host_heartbeat():
    h = Harness()
    h.run_to(5)
    h.host_frames()
    h.host_heartbeat()
    h.run_to(100)
    statuses = h.statuses(h.host_frames())
    assert statuses, "no status datagrams after link-up"
    deltas = [b.t - a.t for a, b in zip(statuses, statuses[1:])]
    assert all(d == 10 for d in deltas)
    pnums = [f.pnum for f in statuses]
    assert pnums == list(range(pnums[0], pnums[0] + len(pnums)))


def test_rate_override_changes_t_deltas():
    h = Harness(datagram_period_ms=5)
    h.run_to(5)
    h.host_frames()
    h.host_heartbeat()
    h.run_to(200)
    statuses = h.statuses(h.host_frames())
    deltas = {b.t - a.t for a, b in zip(statuses, statuses[1:])}
    assert deltas == {5}


def connect(h: Harness):
    """Bring the harness board into the Normal phase at t=5."""
    h.run_to(5)
    h.host_frames()
    h.host_heartbeat()
    h.run_to(6)
    assert h.sim.link.phase is Phase.NORMAL
    h.host_frames()


class TestCommandReflection:
    def test_osmc_reflected_next_datagram(self):
        h = Harness()
        connect(h)
        h.run_to(100)
        h.host_frames()
        h.host_send("O:358,1,1;PNum:66;T:1699276044383;")
        h.run_to(130)
        statuses = h.statuses(h.host_frames())
        received_at = next(
            int(line.rsplit(" ", 1)[-1].rstrip(";"))
            for line in h.lines
            if line.startswith("Incoming Packet: O:358")
        )
        reflecting = [f for f in statuses if f.get("OSMC1").elements == ("358", "1")]
        assert reflecting
        assert reflecting[0].t - received_at <= h.config.datagram_period_ms

    def test_corrupted_command_dropped(self):
        h = Harness()
        connect(h)
        body = b"O:999,1,1;PNum:66;T:1;^0xdeadbeef^"
        h.host_side.send_frame(body)
        h.run_to(60)
        statuses = h.statuses(h.host_frames())
        assert all(f.get("OSMC1").elements == ("0", "0") for f in statuses)
        assert h.sim.crc_failures == 1

    def test_stop_suppresses_stream(self):
        h = Harness()
        connect(h)
        h.run_to(100)
        h.host_frames()
        h.host_send("E:STOP;PNum:1;T:1;")
        h.run_to(400)
        frames = h.host_frames()
        assert not h.statuses(frames)
        assert h.sim.link.phase is Phase.SAFE_STATE


class TestWatchdogOverWire:
    def test_silent_host_stops_stream(self):
        h = Harness()
        connect(h)
        h.run_to(2000)  # no further heartbeats
        frames = h.host_frames()
        statuses = h.statuses(frames)
        last_status_t = statuses[-1].t
        assert last_status_t <= 5 + 1000 + 1  # within timeout of last heartbeat
        late = [f for f in frames if (f.t or 0) > last_status_t]
        assert late and all(classify(f) is FrameKind.HEARTBEAT for f in late)

    def test_recovery_restores_outputs_field_by_field(self):
        h = Harness()
        connect(h)
        h.host_send("O:400,1,1;PNum:1;T:1;")
        h.host_send("D:4095,1,1;PNum:2;T:2;")
        h.run_to(50)
        before = h.statuses(h.host_frames())[-1]
        h.run_to(2000)  # watchdog fires
        h.host_frames()
        assert h.sim.link.phase is Phase.SAFE_STATE
        h.host_heartbeat(t=2000)
        h.run_to(2100)
        after = h.statuses(h.host_frames())[0]
        for name in ("OSMC1", "DHB1A", "SERVO1POS", "STEP1POS"):
            assert after.get(name).elements == before.get(name).elements


def test_link_down_latches_until_reset():
    h = Harness()
    connect(h)
    h.sim.inject_link_down()
    h.run_to(3000)
    assert h.host_frames() == []  # nothing emitted, not even heartbeats
    h.host_heartbeat(t=2500)
    h.run_to(3500)
    assert h.sim.link.phase is Phase.LINK_DOWN


class TestKinematics:
    def test_at_rest(self):
        h = Harness()
        h.sim.board.steppers[0].position = -100
        h.sim.board.steppers[0].target = -100
        connect(h)
        h.run_to(200)
        statuses = h.statuses(h.host_frames())
        assert {f.value("STEP1POS") for f in statuses} == {"-100"}

    def test_rate_one_step_per_period(self):
        # 100 steps/s over a 10 ms period moves exactly one step
        h = Harness()
        h.sim.board.steppers[0].position = -94
        h.sim.board.steppers[0].target = 0
        connect(h)
        h.run_to(16)
        first = h.statuses(h.host_frames())[0]
        assert first.value("STEP1POS") == "-93"

    def test_rate_zero_freezes(self):
        h = Harness(steppers={"rate_steps_per_s": 0.0})
        h.sim.board.steppers[0].position = -94
        h.sim.board.steppers[0].target = 0
        connect(h)
        h.run_to(500)
        statuses = h.statuses(h.host_frames())
        assert {f.value("STEP1POS") for f in statuses} == {"-94"}

    def test_demo_sweeps(self):
        h = Harness(steppers={"demo": True, "rate_steps_per_s": 1000.0, "demo_span": 20})
        connect(h)
        h.run_to(500)
        positions = [int(f.value("STEP1POS")) for f in h.statuses(h.host_frames())]
        assert max(positions) >= 15 and min(positions) <= -15


class TestSensors:
    def test_constant_source(self):
        h = Harness(analog_sources={"AIN24": AnalogSource("constant", volts=24.28)})
        connect(h)
        h.run_to(50)
        statuses = h.statuses(h.host_frames())
        assert {f.value("AIN24") for f in statuses} == {"24.28"}

    def test_noisy_source_bounded(self):
        h = Harness(
            analog_sources={"AIN12": AnalogSource("noisy", mean=12.15, jitter=0.05)}
        )
        connect(h)
        h.run_to(1000)
        values = [float(f.value("AIN12")) for f in h.statuses(h.host_frames())]
        assert values
        assert all(12.10 <= v <= 12.20 for v in values)

    def test_ramp_is_monotone_until_wrap(self):
        h = Harness(analog_sources={"AIN5": AnalogSource("ramp", slope=5.0)})
        connect(h)
        h.run_kept_alive(2000)
        values = [float(f.value("AIN5")) for f in h.statuses(h.host_frames())]
        drops = [i for i, (a, b) in enumerate(zip(values, values[1:])) if b < a]
        assert len(drops) >= 1  # wrapped at the 6 V range
        for i, (a, b) in enumerate(zip(values, values[1:])):
            if i not in drops:
                assert b >= a

    def test_dmh_distance_masks_motors(self):
        h = Harness(
            sensors={
                "enabled": True,
                "min_distance_cm": 30.0,
                "channels": [{"kind": "constant", "cm": 100.0}],
            }
        )
        connect(h)
        h.host_send("O:400,1,1;PNum:1;T:1;")
        h.run_to(50)
        assert h.statuses(h.host_frames())[-1].get("OSMC1").elements == ("400", "1")
        h.config.sensors.channels[0].cm = 10.0
        h.run_to(80)
        statuses = h.statuses(h.host_frames())
        assert statuses[-1].get("OSMC1").elements == ("0", "0")
        h.config.sensors.channels[0].cm = 100.0
        h.run_to(110)
        assert h.statuses(h.host_frames())[-1].get("OSMC1").elements == ("400", "1")


class TestDeterminism:
    def test_identical_runs_are_byte_identical(self):
        cfg = dict(
            seed=7,
            analog_sources={"AIN12": AnalogSource("noisy", mean=12.15, jitter=0.05)},
        )

        def run():
            h = Harness(**cfg)
            connect(h)
            h.host_send("O:311,0,1;PNum:9;T:9;")
            h.run_to(300)
            return h.lines

        assert run() == run()

    def test_offline_capture_deterministic(self):
        a = offline_capture(SimConfig(seed=3), 2000)
        b = offline_capture(SimConfig(seed=3), 2000)
        assert a == b
        assert any(line.startswith("AIN24:") for line in a)
        assert any(line.startswith("Incoming Packet: H:ROS2-R4") for line in a)
        assert any(line.startswith("Interval Between Heart Beats mS:") for line in a)


class TestConfig:
    def test_period_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(datagram_period_ms=0)

    def test_timeout_must_exceed_interval(self):
        with pytest.raises(ConfigError):
            SimConfig(heartbeat_interval_ms=1000, heartbeat_timeout_ms=1000)

    def test_from_dict_round_trip(self):
        cfg = SimConfig.from_dict(
            {
                "datagram_period_ms": 5,
                "enables": ["AIN24", "OSMC1"],
                "network": {"bind_port": 3018},
                "analog": {"AIN24": {"kind": "constant", "volts": 1.5}},
                "sensors": {"enabled": True, "channels": [{"kind": "constant", "cm": 50}]},
                "steppers": {"demo": True},
                "dmh": {"relay_channel": 2},
            }
        )
        assert cfg.datagram_period_ms == 5
        assert cfg.network.bind_port == 3018
        assert cfg.analog_sources["AIN24"].volts == 1.5
        assert cfg.sensors.enabled is True
        assert cfg.steppers.demo is True

    def test_unknown_analog_field_rejected(self):
        with pytest.raises(ConfigError):
            Simulator(
                SimConfig(analog_sources={"NOPE": AnalogSource()}),
                clock=SimClock("virtual"),
            )

    def test_bad_source_kind(self):
        with pytest.raises(ConfigError):
            AnalogSource("wavy").sample(0, None, 12.0)
