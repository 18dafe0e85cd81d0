"""Reference CRC-32 implementations (ISO-HDLC parameterization).

Reflected polynomial 0xEDB88320, initial value 0xFFFFFFFF, final XOR
0xFFFFFFFF -- the same parameterization as zlib.crc32. The codec's hot
path uses zlib; these two independent implementations exist so the
checksum can be cross-verified three ways in the test suite.
"""

_POLY = 0xEDB88320


def bitwise_crc32(data: bytes) -> int:
    """Bit-at-a-time CRC-32, straight from the shift-register definition."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _POLY
            else:
                crc >>= 1
    return crc ^ 0xFFFFFFFF


def _build_table() -> tuple:
    table = []
    for n in range(256):
        crc = n
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _POLY
            else:
                crc >>= 1
        table.append(crc)
    return tuple(table)


_TABLE = _build_table()


def table_crc32(data: bytes) -> int:
    """Byte-at-a-time table-driven CRC-32."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc = _TABLE[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF
