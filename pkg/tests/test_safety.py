"""Watchdog timing, safe-state recovery and DMH condition logic.

All timing tests drive the state machine with explicit millisecond
timestamps; nothing here sleeps.
"""

import random

from r4stack.model import BoardState, Command, Verb, apply_command
from r4stack.safety import (
    DmhInputs,
    LinkAction,
    LinkState,
    Phase,
    evaluate_dmh,
    next_pnum,
    on_host_heartbeat,
    on_link_down,
    on_stop_command,
    reset,
    tick,
)


def make_normal(now=0):
    link = LinkState(phase=Phase.NORMAL, last_host_heartbeat=now, last_sent_heartbeat=now)
    return link, BoardState()


class TestWatchdog:
    def test_steady_heartbeats_stay_normal(self):
        link, board = make_normal()
        for now in range(1, 10_000):
            tick(link, board, now)
            if now % 500 == 0:
                on_host_heartbeat(link, board, now)
            assert link.phase is Phase.NORMAL

    def test_timeout_enters_safe_state(self):
        link, board = make_normal()
        apply_command(board, Command(Verb.OSMC, (400, 1, 1)))
        for now in range(1, 1001):
            tick(link, board, now)
            assert link.phase is Phase.NORMAL
        tick(link, board, 1001)
        assert link.phase is Phase.SAFE_STATE
        assert board.osmc[0] == (0, 0)
        assert board.pending_restore.osmc[0] == (400, 1)

    def test_recovery_restores_outputs(self):
        link, board = make_normal()
        apply_command(board, Command(Verb.OSMC, (400, 0, 1)))
        tick(link, board, 1500)
        assert link.phase is Phase.SAFE_STATE
        on_host_heartbeat(link, board, 1600)
        assert link.phase is Phase.NORMAL
        assert board.osmc[0] == (400, 0)

    def test_connecting_heartbeat_promotes(self):
        link, board = LinkState(), BoardState()
        assert link.phase is Phase.CONNECTING
        on_host_heartbeat(link, board, 42)
        assert link.phase is Phase.NORMAL

    def test_watchdog_phase_matches_schedule(self):
        """Safe state at t iff no host heartbeat landed in (t - timeout, t]."""
        rng = random.Random(0x5AFE)
        for _ in range(50):
            link, board = make_normal()
            timeout = link.heartbeat_timeout_ms
            arrivals = sorted(rng.sample(range(1, 4000), rng.randrange(3, 12)))
            pending = list(arrivals)
            last = 0
            for now in range(1, 4500):
                while pending and pending[0] == now:
                    on_host_heartbeat(link, board, pending.pop(0))
                    last = now
                tick(link, board, now)
                expect_safe = now - last > timeout
                assert (link.phase is Phase.SAFE_STATE) == expect_safe, (now, last)


class TestHeartbeatCadence:
    def test_interval_between_sends(self):
        link, board = make_normal()
        sent = []
        for now in range(1, 5000):
            if LinkAction.SEND_HEARTBEAT in tick(link, board, now):
                sent.append(now)
            if now % 400 == 0:
                on_host_heartbeat(link, board, now)
        deltas = [b - a for a, b in zip(sent, sent[1:])]
        assert deltas and all(d == link.heartbeat_interval_ms for d in deltas)

    def test_connecting_sends_attempts(self):
        link, board = LinkState(), BoardState()
        sent = [now for now in range(0, 2001) if tick(link, board, now)]
        assert sent == [0, 500, 1000, 1500, 2000]
        assert all(next_pnum(LinkState()) == 0 for _ in range(3))

    def test_link_down_sends_nothing(self):
        link, board = make_normal()
        on_link_down(link, board)
        assert all(not tick(link, board, now) for now in range(1, 3000))


class TestPnum:
    def test_counter_shared_and_consecutive(self):
        link, _ = make_normal()
        got = [next_pnum(link) for _ in range(10)]
        assert got == list(range(10))

    def test_pinned_at_zero_while_connecting(self):
        link = LinkState()
        assert [next_pnum(link) for _ in range(5)] == [0] * 5
        assert link.pnum_out == 0

    def test_continues_across_safe_state(self):
        link, board = make_normal()
        link.pnum_out = 7445
        assert next_pnum(link) == 7445
        tick(link, board, 2000)  # -> safe state
        assert next_pnum(link) == 7446  # heartbeat keeps the shared counter
        on_host_heartbeat(link, board, 2001)
        assert next_pnum(link) == 7447


class TestLinkDown:
    def test_outputs_zeroed_and_latched(self):
        link, board = make_normal()
        apply_command(board, Command(Verb.SERVO, (1500, 1)))
        on_link_down(link, board)
        assert link.phase is Phase.LINK_DOWN
        assert board.servos[0] == 0
        on_host_heartbeat(link, board, 100)
        assert link.phase is Phase.LINK_DOWN

    def test_reset_returns_to_connecting(self):
        link, board = make_normal()
        on_link_down(link, board)
        link, board = reset(link, board)
        assert link.phase is Phase.CONNECTING
        assert link.pnum_out == 0
        assert not board.safe_state


class TestStopCommand:
    def test_stop_suppresses_and_recovers_to_zero(self):
        link, board = make_normal()
        apply_command(board, Command(Verb.DHB, (1000, 1, 1)))
        on_stop_command(link, board)
        assert link.phase is Phase.SAFE_STATE
        on_host_heartbeat(link, board, 100)
        assert link.phase is Phase.NORMAL
        assert board.dhb[0] == (0, 0)


class TestDmh:
    def inputs(self, **kw):
        base = dict(
            button_pressed=True,
            sensor_distances=(),
            sensors_enabled=True,
            min_distance_cm=30.0,
            button_enforced=False,
        )
        base.update(kw)
        return DmhInputs(**base)

    def test_proximity_trips_condition(self):
        board = BoardState()
        apply_command(board, Command(Verb.OSMC, (400, 1, 1)))
        apply_command(board, Command(Verb.DHB, (4095, 1, 1)))
        evaluate_dmh(self.inputs(sensor_distances=(10.0,)), board)
        assert board.dmh_condition
        assert board.osmc[0] == (0, 0)
        assert board.dhb[0] == (0, 0)

    def test_servos_unaffected(self):
        board = BoardState()
        apply_command(board, Command(Verb.SERVO, (1500, 1)))
        apply_command(board, Command(Verb.OSMC, (400, 1, 1)))
        evaluate_dmh(self.inputs(sensor_distances=(5.0,)), board)
        assert board.servos[0] == 1500
        assert board.osmc[0] == (0, 0)

    def test_boundary_distance_trips(self):
        board = BoardState()
        apply_command(board, Command(Verb.OSMC, (100, 0, 1)))
        evaluate_dmh(self.inputs(sensor_distances=(30.0,)), board)
        assert board.dmh_condition

    def test_clearing_restores(self):
        board = BoardState()
        apply_command(board, Command(Verb.OSMC, (400, 1, 1)))
        evaluate_dmh(self.inputs(sensor_distances=(10.0,)), board)
        evaluate_dmh(self.inputs(sensor_distances=(100.0,)), board)
        assert not board.dmh_condition
        assert board.osmc[0] == (400, 1)

    def test_commands_during_condition_apply_on_clear(self):
        board = BoardState()
        evaluate_dmh(self.inputs(sensor_distances=(10.0,)), board)
        apply_command(board, Command(Verb.OSMC, (358, 1, 1)))
        assert board.osmc[0] == (0, 0)
        evaluate_dmh(self.inputs(sensor_distances=(None,)), board)
        assert board.osmc[0] == (358, 1)

    def test_sensors_disabled_leaves_button_only(self):
        board = BoardState()
        evaluate_dmh(
            self.inputs(sensors_enabled=False, sensor_distances=(1.0,)), board
        )
        assert not board.dmh_condition
        evaluate_dmh(
            self.inputs(
                sensors_enabled=False,
                sensor_distances=(1.0,),
                button_enforced=True,
                button_pressed=False,
            ),
            board,
        )
        assert board.dmh_condition

    def test_absent_distances_ignored(self):
        board = BoardState()
        evaluate_dmh(self.inputs(sensor_distances=(None, None)), board)
        assert not board.dmh_condition

    def test_dmh_relay_opens(self):
        board = BoardState(dmh_relay_channel=4)
        board.relays[3] = True
        evaluate_dmh(self.inputs(sensor_distances=(1.0,)), board)
        assert board.relays[3] is False
        evaluate_dmh(self.inputs(sensor_distances=(99.0,)), board)
        assert board.relays[3] is True


class TestDmhSafeStateInterplay:
    def test_safe_state_during_dmh_then_recovery(self):
        link, board = make_normal()
        apply_command(board, Command(Verb.OSMC, (400, 1, 1)))
        dmh = DmhInputs(sensors_enabled=True, sensor_distances=(10.0,))
        evaluate_dmh(dmh, board)
        tick(link, board, 2000)  # watchdog fires while DMH held
        assert link.phase is Phase.SAFE_STATE
        on_host_heartbeat(link, board, 2100)
        evaluate_dmh(dmh, board)  # simulator re-evaluates before emitting
        assert board.osmc[0] == (0, 0)  # still masked by DMH
        evaluate_dmh(DmhInputs(sensors_enabled=True, sensor_distances=(90.0,)), board)
        assert board.osmc[0] == (400, 1)


def test_recovery_round_trip_equivalence():
    """safe state + recovery is a no-op relative to an untouched replay."""
    rng = random.Random(0xD0)
    for _ in range(30):
        link, board = make_normal()
        twin = BoardState()
        cmds = []
        for _ in range(rng.randrange(0, 25)):
            cmds.append(Command(Verb.OSMC, (rng.randrange(4096), rng.randrange(2), rng.randrange(1, 5))))
        split = rng.randrange(len(cmds) + 1)
        for cmd in cmds[:split]:
            apply_command(board, cmd)
            apply_command(twin, cmd)
        tick(link, board, 5000)  # timeout
        for cmd in cmds[split:]:
            apply_command(board, cmd)
            apply_command(twin, cmd)
        on_host_heartbeat(link, board, 5001)
        assert board.osmc == twin.osmc
        assert board.dhb == twin.dhb
