"""Checksum known answers and cross-implementation agreement."""

import random
import zlib

from r4stack.codec import crc32_field
from r4stack.crc import bitwise_crc32, table_crc32


def test_empty_input_is_zero():
    assert crc32_field(b"") == "0x0"


def test_standard_check_value():
    # The classic nine-digit check string. Expected value computed with
    # the independent bitwise implementation below.
    assert bitwise_crc32(b"123456789") == 0xCBF43926
    assert crc32_field(b"123456789") == "0xcbf43926"


def test_reference_heartbeat_checksum():
    assert crc32_field(b"H:R4-ROS2;PNum:0;T:0;^") == "0xb10b3a06"


def test_formatting_suppresses_leading_zeros():
    # Values whose top hex digits are zero must shrink, not pad.
    assert crc32_field(b"O:1,0,1;PNum:67;T:1699276044483;^") == "0xa13d0ac"


def test_implementations_agree_on_random_inputs():
    rng = random.Random(0xC3C32)
    for _ in range(10_000):
        data = rng.randbytes(rng.randrange(0, 64))
        expect = zlib.crc32(data)
        assert table_crc32(data) == expect
        assert bitwise_crc32(data) == expect
