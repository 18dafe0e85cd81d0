"""Datagram endpoints: real UDP sockets and an in-memory loopback.

Both endpoint types share one contract: send_frame() ships exactly one
datagram, recv_frame() returns at most one complete (frame, source)
pair and never blocks. Partial frames cannot be surfaced; that is the
point of datagram transport.

The loopback pair carries deterministic fault injection (drop,
duplicate, bounded reorder) seeded for bit-exact reproducibility, so
watchdog and loss-accounting tests run end-to-end without sockets.
"""

from __future__ import annotations

import errno
import random
import socket
from dataclasses import dataclass

DEFAULT_BOARD_PORT = 2018
DEFAULT_HOST_PORT = 2390


class TransportError(Exception):
    pass


class BindFailure(TransportError):
    pass


class EndpointClosed(TransportError):
    pass


class OversizeDatagram(TransportError):
    pass


@dataclass
class EndpointConfig:
    local_addr: str = "127.0.0.1"
    local_port: int = DEFAULT_BOARD_PORT
    peer_addr: str | None = None
    peer_port: int | None = None
    max_frame: int = 4096
    allow_ephemeral: bool = False  # permit port 0 (kernel-assigned)

    def __post_init__(self):
        lo = 0 if self.allow_ephemeral else 1
        if not lo <= self.local_port <= 65535:
            raise ValueError(f"port {self.local_port} outside {lo}..65535")

    @property
    def peer(self) -> tuple | None:
        if self.peer_addr is None or self.peer_port is None:
            return None
        return (self.peer_addr, self.peer_port)


@dataclass
class Impairment:
    drop_probability: float = 0.0
    duplicate_probability: float = 0.0
    reorder_window: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability outside 0..1")
        if not 0.0 <= self.duplicate_probability <= 1.0:
            raise ValueError("duplicate_probability outside 0..1")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")


class UdpEndpoint:
    """Non-blocking UDP datagram endpoint."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((config.local_addr, config.local_port))
        except OSError as e:
            self._sock.close()
            raise BindFailure(
                f"cannot bind {config.local_addr}:{config.local_port}: {e}"
            ) from e
        self._sock.setblocking(False)

    @property
    def local_address(self) -> tuple:
        return self._sock.getsockname()

    def fileno(self) -> int:
        return self._sock.fileno()

    def send_frame(self, data: bytes, addr: tuple | None = None) -> None:
        if self._sock is None:
            raise EndpointClosed("endpoint is closed")
        if len(data) > self.config.max_frame:
            raise OversizeDatagram(f"{len(data)} bytes exceeds {self.config.max_frame}")
        target = addr or self.config.peer
        if target is None:
            raise TransportError("no peer configured and no address given")
        try:
            self._sock.sendto(data, target)
        except OSError as e:
            if e.errno not in (errno.ECONNREFUSED, errno.EHOSTUNREACH, errno.ENETUNREACH):
                raise TransportError(str(e)) from e

    def recv_frame(self):
        """One pending (datagram, source) pair, or None."""
        if self._sock is None:
            raise EndpointClosed("endpoint is closed")
        while True:
            try:
                return self._sock.recvfrom(self.config.max_frame)
            except BlockingIOError:
                return None
            except ConnectionRefusedError:
                continue  # queued ICMP error from an earlier send; skip it
            except OSError as e:
                if e.errno == errno.EWOULDBLOCK:
                    return None
                raise TransportError(str(e)) from e

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LoopbackEndpoint:
    """One side of an in-memory datagram pair."""

    def __init__(self, name: str, max_frame: int = 4096):
        self._name = name
        self._max_frame = max_frame
        self._inbox: list = []
        self._peer: LoopbackEndpoint | None = None
        self._impairment: Impairment | None = None
        self._rng: random.Random | None = None
        self._closed = False

    @property
    def local_address(self) -> tuple:
        return ("loopback", self._name)

    def send_frame(self, data: bytes, addr: tuple | None = None) -> None:
        if self._closed:
            raise EndpointClosed("endpoint is closed")
        if len(data) > self._max_frame:
            raise OversizeDatagram(f"{len(data)} bytes exceeds {self._max_frame}")
        peer = self._peer
        if peer is None or peer._closed:
            return  # datagram semantics: silently dropped
        copies = 1
        if self._impairment is not None:
            rng = self._rng
            if rng.random() < self._impairment.drop_probability:
                return
            if rng.random() < self._impairment.duplicate_probability:
                copies = 2
        for _ in range(copies):
            item = (bytes(data), self.local_address)
            window = self._impairment.reorder_window if self._impairment else 0
            if window:
                slot = len(peer._inbox) - self._rng.randint(0, min(window, len(peer._inbox)))
                peer._inbox.insert(slot, item)
            else:
                peer._inbox.append(item)

    def recv_frame(self):
        if self._closed:
            raise EndpointClosed("endpoint is closed")
        if not self._inbox:
            return None
        return self._inbox.pop(0)

    def close(self) -> None:
        self._closed = True
        self._inbox.clear()


def loopback_pair(
    impairment_a_to_b: Impairment | None = None,
    impairment_b_to_a: Impairment | None = None,
    max_frame: int = 4096,
):
    """Two connected in-memory endpoints, optionally impaired per direction."""
    a = LoopbackEndpoint("a", max_frame)
    b = LoopbackEndpoint("b", max_frame)
    a._peer, b._peer = b, a
    if impairment_a_to_b is not None:
        a._impairment = impairment_a_to_b
        a._rng = random.Random(impairment_a_to_b.seed)
    if impairment_b_to_a is not None:
        b._impairment = impairment_b_to_a
        b._rng = random.Random(impairment_b_to_a.seed)
    return a, b


def open_endpoint(config: EndpointConfig) -> UdpEndpoint:
    """Open a UDP endpoint per config. Raises BindFailure if the
    address is taken or the port is 0 without allow_ephemeral."""
    return UdpEndpoint(config)
