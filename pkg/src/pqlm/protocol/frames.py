"""PQC3 wire framing.

Frame layout (little-endian):

    magic   4 bytes  b"PQC3"
    version u32
    type    u8       1=EvalKey 2=Plan 3=CiphertextBatch 4=Result 5=Error
    length  u64      payload byte count
    payload length bytes
    crc     u32      CRC32 over version|type|length|payload

The checksum covers the header fields after the magic, so any corruption
burst of four bytes or fewer anywhere in a frame is detected
deterministically (CRC32's burst guarantee), including bursts in the
length field itself. Payload size is capped by the
PQLM_MAX_PAYLOAD_BYTES environment variable (default 256 MiB), checked
before any allocation.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

MAGIC = b"PQC3"
VERSION = 1

TYPE_EVAL_KEY = 1
TYPE_PLAN = 2
TYPE_CIPHERTEXT_BATCH = 3
TYPE_RESULT = 4
TYPE_ERROR = 5

_TYPES = {TYPE_EVAL_KEY, TYPE_PLAN, TYPE_CIPHERTEXT_BATCH, TYPE_RESULT, TYPE_ERROR}

DEFAULT_MAX_PAYLOAD = 256 << 20
_HEADER = struct.Struct("<IBQ")  # version, type, length


class ProtocolError(ValueError):
    pass


def max_payload_bytes() -> int:
    raw = os.environ.get("PQLM_MAX_PAYLOAD_BYTES")
    if raw is None:
        return DEFAULT_MAX_PAYLOAD
    try:
        value = int(raw)
    except ValueError as exc:
        raise ProtocolError(f"PQLM_MAX_PAYLOAD_BYTES is not an integer: {raw!r}") from exc
    if value < 1:
        raise ProtocolError("PQLM_MAX_PAYLOAD_BYTES must be positive")
    return value


@dataclass(frozen=True)
class Frame:
    type: int
    payload: bytes

    def __post_init__(self):
        if self.type not in _TYPES:
            raise ProtocolError(f"unknown frame type {self.type}")


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > max_payload_bytes():
        raise ProtocolError(
            f"payload of {len(frame.payload)} bytes exceeds the configured cap")
    head = _HEADER.pack(VERSION, frame.type, len(frame.payload))
    crc = zlib.crc32(head + frame.payload) & 0xFFFFFFFF
    return MAGIC + head + frame.payload + struct.pack("<I", crc)


FRAME_OVERHEAD = len(MAGIC) + _HEADER.size + 4


def decode_frame(raw: bytes) -> Frame:
    """Decode one complete frame; raises ProtocolError on any corruption."""
    if len(raw) < FRAME_OVERHEAD:
        raise ProtocolError("frame truncated (shorter than fixed overhead)")
    if raw[:4] != MAGIC:
        raise ProtocolError("bad magic")
    version, ftype, length = _HEADER.unpack_from(raw, 4)
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if ftype not in _TYPES:
        raise ProtocolError(f"unknown frame type {ftype}")
    if length > max_payload_bytes():
        raise ProtocolError("declared payload exceeds the configured cap")
    if len(raw) != FRAME_OVERHEAD + length:
        raise ProtocolError("frame length mismatch")
    payload = raw[4 + _HEADER.size:-4]
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[4:len(raw) - 4]) & 0xFFFFFFFF != crc:
        raise ProtocolError("checksum mismatch")
    return Frame(ftype, payload)


# -- payload helpers ---------------------------------------------------------

def pack_labeled_blobs(position: int, blobs: dict[str, bytes]) -> bytes:
    out = [struct.pack("<II", position, len(blobs))]
    for label in sorted(blobs):
        enc = label.encode("utf-8")
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(struct.pack("<I", len(blobs[label])))
        out.append(blobs[label])
    return b"".join(out)


def unpack_labeled_blobs(payload: bytes) -> tuple[int, dict[str, bytes]]:
    if len(payload) < 8:
        raise ProtocolError("labeled blob payload truncated")
    position, count = struct.unpack_from("<II", payload, 0)
    off = 8
    blobs: dict[str, bytes] = {}
    for _ in range(count):
        if off + 2 > len(payload):
            raise ProtocolError("labeled blob payload truncated")
        (n,) = struct.unpack_from("<H", payload, off)
        off += 2
        label = payload[off:off + n].decode("utf-8")
        off += n
        if off + 4 > len(payload):
            raise ProtocolError("labeled blob payload truncated")
        (m,) = struct.unpack_from("<I", payload, off)
        off += 4
        if off + m > len(payload):
            raise ProtocolError("labeled blob payload truncated")
        blobs[label] = payload[off:off + m]
        off += m
    if off != len(payload):
        raise ProtocolError("trailing bytes in labeled blob payload")
    return position, blobs


def pack_result(position: int, blobs: dict[str, bytes], pbs_used: int,
                wall_s: float) -> bytes:
    return struct.pack("<Qd", pbs_used, wall_s) + pack_labeled_blobs(position, blobs)


def unpack_result(payload: bytes) -> tuple[int, dict[str, bytes], int, float]:
    if len(payload) < 16:
        raise ProtocolError("result payload truncated")
    pbs_used, wall_s = struct.unpack_from("<Qd", payload, 0)
    position, blobs = unpack_labeled_blobs(payload[16:])
    return position, blobs, pbs_used, wall_s


def pack_error(code: int, message: str) -> bytes:
    enc = message.encode("utf-8")
    return struct.pack("<IH", code, len(enc)) + enc


def unpack_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 6:
        raise ProtocolError("error payload truncated")
    code, n = struct.unpack_from("<IH", payload, 0)
    return code, payload[6:6 + n].decode("utf-8")
