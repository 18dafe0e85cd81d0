"""R4 wire datagram codec: grammar, CRC-32 framing, canonical formatting.

One datagram is an ASCII line of fields followed by a checksum trailer
and a carriage return:

    Name:el[,el ...];Name:el;...;PNum:<n>;T:<ms>;^0x<crc>^<CR>

A ':' ends the field name, ';' ends the field, ',' separates data
elements within a field. The trailer is a 32-bit CRC rendered in
lowercase hex with leading zeros suppressed (so seven-digit values such
as "0xd9b74e4" are legitimate) and wrapped in carets.

The checksum covers every byte of the datagram up to and including the
leading caret. That rule is not obvious from the firmware sources, so it
is pinned by resolve_coverage_rule() against a known-good heartbeat
captured from the board's serial log; parsing and serialization refuse
to run if the pinned rule stops reproducing the reference checksums.

This module knows nothing about transports or hardware semantics; all
functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import enum
import re
import zlib
from dataclasses import dataclass, field as dc_field

MAX_EMIT_BYTES = 512    # longest frame this codec will produce
MAX_PARSE_BYTES = 4096  # longest input the parser will look at

# Known-good frames from the board's serial log, used to pin the
# checksum coverage rule at build time. body excludes the trailer.
REFERENCE_VECTORS = (
    (b"H:R4-ROS2;PNum:0;T:0;", "0xb10b3a06"),   # link-establishment heartbeat
    (b"H:ROS2-R4;T:79201;", "0xf390d9ad"),      # host heartbeat reply
)


class FrameError(ValueError):
    """Base class for every codec failure."""


class MalformedFrame(FrameError):
    """Grammar violation: missing delimiter, empty name, bad token."""


class ChecksumMissing(FrameError):
    """No caret-delimited checksum trailer present."""


class ChecksumMismatch(FrameError):
    """Declared and computed checksums disagree."""

    def __init__(self, computed: int, declared: int):
        super().__init__(
            f"checksum mismatch: computed {hex(computed)}, declared {hex(declared)}"
        )
        self.computed = computed
        self.declared = declared


class Oversize(FrameError):
    """Frame longer than the applicable limit."""


class IllegalCharacter(FrameError):
    """A delimiter or control character inside a name or element."""


class CoverageRule(enum.Enum):
    """Candidate definitions of the CRC coverage region."""

    EXCLUDE_DELIMITER = "exclude-delimiter"  # bytes before the leading caret
    INCLUDE_DELIMITER = "include-delimiter"  # bytes through the leading caret


@dataclass(frozen=True)
class Field:
    """One `Name:a,b,c;` unit of a datagram."""

    name: str
    elements: tuple

    def __init__(self, name: str, elements):
        if isinstance(elements, str):
            elements = (elements,)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "elements", tuple(elements))


@dataclass(frozen=True)
class Frame:
    """A parsed or constructed datagram.

    `raw` keeps the exact received bytes for parsed frames and does not
    participate in equality, so a parse/serialize round trip compares
    equal on fields and checksum.
    """

    fields: tuple
    checksum: int = None
    raw: bytes = dc_field(default=None, compare=False, repr=False)

    def get(self, name: str) -> Field | None:
        """First field whose name matches case-insensitively."""
        wanted = name.lower()
        for f in self.fields:
            if f.name.lower() == wanted:
                return f
        return None

    def value(self, name: str) -> str | None:
        """First element of the named field, or None."""
        f = self.get(name)
        return f.elements[0] if f else None

    def int_value(self, name: str) -> int | None:
        """First element of the named field as int, None if absent or non-numeric."""
        v = self.value(name)
        if v is None:
            return None
        try:
            return int(v)
        except ValueError:
            return None

    @property
    def pnum(self) -> int | None:
        return self.int_value("PNum")

    @property
    def t(self) -> int | None:
        return self.int_value("T")


class FrameKind(enum.Enum):
    STATUS = "status"
    HEARTBEAT = "heartbeat"
    COMMAND = "command"


# Name: printable ASCII minus ':' ';' ',' '^'. Element: same but ':' allowed.
_NAME_RE = re.compile(r"[\x20-\x7e]+")
_NAME_BAD = set(":;,^")
_ELEMENT_RE = re.compile(r"[ -+\--:<-\]_-~]*")  # printable minus ; , ^
_BODY_ILLEGAL_RE = re.compile(rb"[^\x20-\x7e]")
_CHECKSUM_TOKEN_RE = re.compile(rb"0[xX][0-9a-fA-F]+")


def crc32_field(data: bytes) -> str:
    """CRC-32 of `data`, formatted the way the board prints it.

    ISO-HDLC parameterization; "0x" plus lowercase hex with leading
    zeros suppressed (minimum one digit).
    """
    return hex(zlib.crc32(data))


_resolved_rule: CoverageRule | None = None


def resolve_coverage_rule() -> CoverageRule:
    """Pin the checksum coverage rule against the reference vectors.

    Tries both candidates on the first reference heartbeat and adopts
    whichever reproduces the printed checksum, then re-checks the
    adopted rule on the second vector. Raises FrameError with both
    computed values if neither candidate matches.
    """
    global _resolved_rule
    if _resolved_rule is not None:
        return _resolved_rule

    body, want = REFERENCE_VECTORS[0]
    excl = crc32_field(body)
    incl = crc32_field(body + b"^")
    if incl == want:
        rule = CoverageRule.INCLUDE_DELIMITER
    elif excl == want:
        rule = CoverageRule.EXCLUDE_DELIMITER
    else:
        raise FrameError(
            f"coverage rule resolution failed: want {want}, "
            f"exclude-delimiter gives {excl}, include-delimiter gives {incl}"
        )

    body2, want2 = REFERENCE_VECTORS[1]
    cov2 = body2 + b"^" if rule is CoverageRule.INCLUDE_DELIMITER else body2
    got2 = crc32_field(cov2)
    if got2 != want2:
        raise FrameError(
            f"coverage rule {rule.value} failed cross-check: "
            f"want {want2}, got {got2}"
        )

    _resolved_rule = rule
    return rule


def _coverage(body: bytes) -> bytes:
    """The byte region the checksum covers, per the resolved rule."""
    if resolve_coverage_rule() is CoverageRule.INCLUDE_DELIMITER:
        return body + b"^"
    return body


def parse_frame(wire, verify: bool = True) -> Frame:
    """Parse one complete datagram.

    Accepts bytes-like input (str is encoded as ASCII) with an optional
    CR or CR LF terminator. Field names are matched case-insensitively
    by consumers but stored exactly as received; elements are kept as
    uninterpreted strings so round trips are lossless.

    With verify=False the declared checksum is extracted but not
    compared, which capture-analysis tools use to report mismatches
    themselves.

    Raises MalformedFrame, ChecksumMissing, ChecksumMismatch or
    Oversize; never anything else, for any input.
    """
    if isinstance(wire, str):
        try:
            wire = wire.encode("ascii")
        except UnicodeEncodeError as e:
            raise MalformedFrame(f"non-ASCII input: {e}") from None
    else:
        wire = bytes(wire)

    if len(wire) > MAX_PARSE_BYTES:
        raise Oversize(f"frame of {len(wire)} bytes exceeds {MAX_PARSE_BYTES}")

    raw = wire
    if wire.endswith(b"\r\n"):
        wire = wire[:-2]
    elif wire.endswith(b"\r") or wire.endswith(b"\n"):
        wire = wire[:-1]

    if not wire.endswith(b"^"):
        raise ChecksumMissing("no trailing checksum delimiter")
    lead = wire.rfind(b"^", 0, len(wire) - 1)
    if lead < 0:
        raise ChecksumMissing("no leading checksum delimiter")

    token = wire[lead + 1 : -1]
    body = wire[:lead]
    if b"^" in body:
        raise MalformedFrame("stray '^' inside frame body")
    if not _CHECKSUM_TOKEN_RE.fullmatch(token):
        raise MalformedFrame(f"bad checksum token {token!r}")
    declared = int(token, 16)

    if verify:
        computed = zlib.crc32(_coverage(body))
        if computed != declared:
            raise ChecksumMismatch(computed, declared)

    bad = _BODY_ILLEGAL_RE.search(body)
    if bad:
        raise MalformedFrame(f"illegal byte 0x{bad.group()[0]:02x} in frame body")

    parts = body.split(b";")
    if parts[-1] != b"":
        raise MalformedFrame("last field not terminated with ';'")
    parts = parts[:-1]
    if not parts:
        raise MalformedFrame("frame has no fields")

    fields = []
    for part in parts:
        name, sep, rest = part.partition(b":")
        if not sep:
            raise MalformedFrame(f"field {part!r} has no ':'")
        if not name:
            raise MalformedFrame("empty field name")
        if b"," in name:
            raise MalformedFrame(f"',' inside field name {name!r}")
        fields.append(
            Field(name.decode("ascii"), tuple(e.decode("ascii") for e in rest.split(b",")))
        )

    return Frame(fields=tuple(fields), checksum=declared, raw=raw)


def serialize_frame(fields) -> bytes:
    """Serialize fields into one canonical datagram.

    The last two fields must be the PNum / T trailer pair, in that
    order; emitters append them before calling here. Output ends with a
    single CR and always re-parses to an equal Frame.
    """
    fields = tuple(fields)
    if len(fields) < 2:
        raise MalformedFrame("frame needs at least the PNum and T trailer fields")
    if fields[-2].name.lower() != "pnum" or fields[-1].name.lower() != "t":
        raise MalformedFrame("canonical trailer order is PNum then T")

    chunks = []
    for f in fields:
        if not f.name or not _NAME_RE.fullmatch(f.name) or _NAME_BAD & set(f.name):
            raise IllegalCharacter(f"illegal field name {f.name!r}")
        if not f.elements:
            raise IllegalCharacter(f"field {f.name!r} has no elements")
        for el in f.elements:
            if _ELEMENT_RE.fullmatch(el) is None:
                raise IllegalCharacter(f"illegal element {el!r} in field {f.name!r}")
        chunks.append(f"{f.name}:{','.join(f.elements)};")

    body = "".join(chunks).encode("ascii")
    cov = _coverage(body)
    tail = crc32_field(cov).encode("ascii")
    if resolve_coverage_rule() is CoverageRule.INCLUDE_DELIMITER:
        out = cov + tail + b"^\r"
    else:
        out = cov + b"^" + tail + b"^\r"
    if len(out) > MAX_EMIT_BYTES:
        raise Oversize(f"serialized frame of {len(out)} bytes exceeds {MAX_EMIT_BYTES}")
    return out


def frame_crc(wire) -> int:
    """Computed CRC over the coverage region of a complete frame,
    ignoring the declared value (capture-analysis helper)."""
    if isinstance(wire, str):
        wire = wire.encode("ascii")
    wire = bytes(wire).rstrip(b"\r\n")
    if not wire.endswith(b"^"):
        raise ChecksumMissing("no trailing checksum delimiter")
    lead = wire.rfind(b"^", 0, len(wire) - 1)
    if lead < 0:
        raise ChecksumMissing("no leading checksum delimiter")
    return zlib.crc32(_coverage(wire[:lead]))


def classify(frame: Frame) -> FrameKind:
    """Heartbeat for a leading `H` field, Command for any other single
    letter, Status otherwise."""
    name = frame.fields[0].name
    if len(name) == 1:
        if name in ("H", "h"):
            return FrameKind.HEARTBEAT
        return FrameKind.COMMAND
    return FrameKind.STATUS
