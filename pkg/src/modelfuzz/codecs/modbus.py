"""Modbus/TCP request builder (MBAP header + PDU).

``truncate=True`` cuts the function-specific body below the fixed field
layout a decoder must unpack (``FIXED_LAYOUT``) while keeping the MBAP length
field consistent, so the short body reaches the server's decoder intact.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .types import CodecError, EncodedMessage

FUNCTION_CODES = {
    "READ_COILS": 0x01,
    "READ_HOLDING_REGISTERS": 0x03,
    "WRITE_SINGLE_REGISTER": 0x06,
    "WRITE_MULTIPLE_REGISTERS": 0x10,
    "READ_FILE_RECORD": 0x14,
    "READ_DEVICE_IDENTIFICATION": 0x2B,
}
FUNCTION_NAMES = {v: k for k, v in FUNCTION_CODES.items()}

# body bytes a decoder unpacks unconditionally, per function code
FIXED_LAYOUT = {
    0x01: 4,  # >HH address, quantity
    0x03: 4,  # >HH
    0x06: 4,  # >HH address, value
    0x10: 5,  # >HHB address, quantity, byte count
    0x14: 8,  # >B byte count, then >BHHH per sub-request
    0x2B: 3,  # >BBB MEI type, read code, object id
}

MEI_READ_DEVICE_ID = 0x0E


@dataclass
class ModbusParams:
    """Optional field overrides; ``None`` draws a seeded random value."""

    transaction_id: int | None = None
    unit_id: int = 1
    address: int | None = None
    count: int | None = None
    value: int | None = None
    values: list[int] | None = None
    sub_requests: list[tuple[int, int, int, int]] | None = None
    read_code: int | None = None
    object_id: int | None = None
    truncate: bool = False
    truncate_to: int | None = None


def resolve_function(function: str | int) -> int:
    if isinstance(function, int):
        if function not in FUNCTION_NAMES:
            raise CodecError(f"unsupported Modbus function code 0x{function:02X}")
        return function
    try:
        return FUNCTION_CODES[function.upper()]
    except KeyError:
        raise CodecError(f"unsupported Modbus function {function!r}") from None


def _address(rng: random.Random) -> int:
    return rng.choice((0, 1, 0xFFFF, rng.randint(0, 0xFFFF), rng.randint(0, 100)))


def _body(code: int, p: ModbusParams, rng: random.Random) -> bytes:
    if code in (0x01, 0x03):
        limit = 2000 if code == 0x01 else 125
        addr = p.address if p.address is not None else _address(rng)
        count = p.count if p.count is not None else rng.choice((1, limit, rng.randint(1, limit), 0, limit + 1))
        return struct.pack(">HH", addr & 0xFFFF, count & 0xFFFF)
    if code == 0x06:
        addr = p.address if p.address is not None else _address(rng)
        value = p.value if p.value is not None else rng.randint(0, 0xFFFF)
        return struct.pack(">HH", addr & 0xFFFF, value & 0xFFFF)
    if code == 0x10:
        addr = p.address if p.address is not None else _address(rng)
        if p.values is not None:
            values = list(p.values)
        else:
            values = [rng.randint(0, 0xFFFF) for _ in range(rng.randint(1, 16))]
        count = p.count if p.count is not None else len(values)
        return struct.pack(">HHB", addr & 0xFFFF, count & 0xFFFF, (2 * len(values)) & 0xFF) + b"".join(
            struct.pack(">H", v & 0xFFFF) for v in values
        )
    if code == 0x14:
        subs = p.sub_requests
        if subs is None:
            subs = [
                (6, rng.randint(1, 0xFFFF), rng.randint(0, 9999), rng.randint(1, 16))
                for _ in range(rng.randint(1, 3))
            ]
        payload = b"".join(struct.pack(">BHHH", *s) for s in subs)
        return struct.pack(">B", len(payload) & 0xFF) + payload
    if code == 0x2B:
        read_code = p.read_code if p.read_code is not None else rng.randint(1, 4)
        object_id = p.object_id if p.object_id is not None else rng.randint(0, 6)
        return bytes([MEI_READ_DEVICE_ID, read_code & 0xFF, object_id & 0xFF])
    raise CodecError(f"unsupported Modbus function code 0x{code:02X}")


def encode_modbus(function: str | int, params: ModbusParams | None, rng: random.Random) -> EncodedMessage:
    code = resolve_function(function)
    p = params or ModbusParams()
    body = _body(code, p, rng)
    if p.truncate:
        layout = FIXED_LAYOUT[code]
        cut = p.truncate_to if p.truncate_to is not None else rng.randrange(layout)
        if not 0 <= cut < layout:
            raise CodecError(f"truncate_to must be in [0, {layout}) for function 0x{code:02X}")
        body = body[:cut]
    pdu = bytes([code]) + body
    tid = p.transaction_id if p.transaction_id is not None else rng.randint(0, 0xFFFF)
    mbap = struct.pack(">HHHB", tid & 0xFFFF, 0, len(pdu) + 1, p.unit_id & 0xFF)
    return EncodedMessage(FUNCTION_NAMES[code], mbap + pdu)


def parse_mbap(frame: bytes) -> tuple[int, int, int, int]:
    """Return ``(transaction id, protocol id, length, unit id)``."""
    if len(frame) < 7:
        raise CodecError("frame shorter than the 7-byte MBAP header")
    return struct.unpack(">HHHB", frame[:7])
