"""Loopback delivery semantics, fault-injection determinism, UDP smoke."""

import pytest

from r4stack.transport import (
    BindFailure,
    EndpointClosed,
    EndpointConfig,
    Impairment,
    OversizeDatagram,
    UdpEndpoint,
    loopback_pair,
    open_endpoint,
)


def drain(endpoint):
    out = []
    while True:
        got = endpoint.recv_frame()
        if got is None:
            return out
        out.append(got[0])


class TestLoopback:
    def test_identity_channel(self):
        a, b = loopback_pair()
        a.send_frame(b"hello")
        data, source = b.recv_frame()
        assert data == b"hello"
        assert source == ("loopback", "a")

    def test_exactly_once_in_order(self):
        a, b = loopback_pair()
        frames = [f"frame-{i}".encode() for i in range(100)]
        for f in frames:
            a.send_frame(f)
        assert drain(b) == frames

    def test_empty_when_nothing_pending(self):
        a, b = loopback_pair()
        assert b.recv_frame() is None

    def test_total_loss(self):
        a, b = loopback_pair(Impairment(drop_probability=1.0))
        for i in range(50):
            a.send_frame(b"x%d" % i)
        assert b.recv_frame() is None

    def test_duplicates(self):
        a, b = loopback_pair(Impairment(duplicate_probability=1.0, seed=1))
        a.send_frame(b"one")
        assert drain(b) == [b"one", b"one"]

    def test_seeded_impairment_is_reproducible(self):
        def run():
            imp = Impairment(
                drop_probability=0.2, duplicate_probability=0.1, reorder_window=3, seed=99
            )
            a, b = loopback_pair(imp)
            for i in range(200):
                a.send_frame(b"f%03d" % i)
            return drain(b)

        first, second = run(), run()
        assert first == second
        assert first != [b"f%03d" % i for i in range(200)]  # impairment did something

    def test_oversize(self):
        a, _ = loopback_pair(max_frame=16)
        with pytest.raises(OversizeDatagram):
            a.send_frame(b"y" * 17)

    def test_closed(self):
        a, b = loopback_pair()
        b.close()
        a.send_frame(b"vanishes")  # dropped, not an error
        with pytest.raises(EndpointClosed):
            b.recv_frame()

    def test_impairment_validation(self):
        with pytest.raises(ValueError):
            Impairment(drop_probability=1.5)


class TestUdp:
    def test_round_trip_on_localhost(self):
        with open_endpoint(
            EndpointConfig(local_port=0, allow_ephemeral=True)
        ) as board, open_endpoint(
            EndpointConfig(local_port=0, allow_ephemeral=True)
        ) as host:
            host.send_frame(b"O:1,0,1;", addr=board.local_address)
            for _ in range(1000):
                got = board.recv_frame()
                if got is not None:
                    break
            assert got is not None
            data, source = got
            assert data == b"O:1,0,1;"
            board.send_frame(b"reply", addr=source)
            for _ in range(1000):
                back = host.recv_frame()
                if back is not None:
                    break
            assert back[0] == b"reply"

    def test_recv_empty(self):
        with open_endpoint(EndpointConfig(local_port=0, allow_ephemeral=True)) as ep:
            assert ep.recv_frame() is None

    def test_bind_conflict(self):
        with open_endpoint(EndpointConfig(local_port=0, allow_ephemeral=True)) as ep:
            port = ep.local_address[1]
            with pytest.raises(BindFailure):
                UdpEndpoint(EndpointConfig(local_port=port))

    def test_port_zero_rejected_without_flag(self):
        with pytest.raises(ValueError):
            EndpointConfig(local_port=0)

    def test_default_ports(self):
        assert EndpointConfig().local_port == 2018
        assert EndpointConfig(local_port=2390).local_port == 2390
