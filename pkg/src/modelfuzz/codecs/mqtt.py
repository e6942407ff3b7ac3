"""MQTT 3.1.1 control-packet encoder and fixed-header decoder.

Every one of the 15 packet types can be encoded, including broker-to-client
types (CONNACK, SUBACK, ...) and the MQTT 5 AUTH packet.  Fields left as
``None`` in :class:`MqttPacketParams` are drawn from the caller's random
source, so the same seed always produces the same bytes.
"""

from __future__ import annotations

import random
import string
import struct
from dataclasses import dataclass

from .types import CodecError, EncodedMessage

PACKET_TYPES = {
    "CONNECT": 1,
    "CONNACK": 2,
    "PUBLISH": 3,
    "PUBACK": 4,
    "PUBREC": 5,
    "PUBREL": 6,
    "PUBCOMP": 7,
    "SUBSCRIBE": 8,
    "SUBACK": 9,
    "UNSUBSCRIBE": 10,
    "UNSUBACK": 11,
    "PINGREQ": 12,
    "PINGRESP": 13,
    "DISCONNECT": 14,
    "AUTH": 15,
}
PACKET_NAMES = {v: k for k, v in PACKET_TYPES.items()}

# reserved flag nibbles that MQTT 3.1.1 fixes to 0b0010
_FIXED_FLAGS = {"PUBREL": 0x2, "SUBSCRIBE": 0x2, "UNSUBSCRIBE": 0x2}

MAX_REMAINING_LENGTH = 268_435_455

_SPECIAL_STRINGS = ("#", "+/+", "$SYS/broker/load", "a//b", "/", "sensors/+/temp", "üñîçødë", "a\x00b")
_ALNUM = string.ascii_letters + string.digits


class MqttDecodeError(CodecError):
    pass


@dataclass
class MqttPacketParams:
    """Inputs for :func:`encode_mqtt`.

    Defaults: protocol name ``"MQTT"`` at level 4, connect flags ``0x02``
    (clean session), no DUP/RETAIN, canonical fixed-header flags.  ``None``
    means "draw a seeded random value": client id, topic, payload, QoS,
    packet identifier, keep-alive, CONNACK/SUBACK/AUTH return codes.
    ``flags`` overrides the whole fixed-header low nibble when set.
    """

    packet_type: str
    client_id: str | None = None
    topic: str | None = None
    payload: bytes | str | None = None
    qos: int | None = None
    packet_id: int | None = None
    protocol_level: int = 4
    protocol_name: str = "MQTT"
    keep_alive: int | None = None
    connect_flags: int = 0x02
    username: str | None = None
    password: bytes | str | None = None
    will_topic: str | None = None
    will_message: bytes | str | None = None
    dup: bool = False
    retain: bool = False
    session_present: int | None = None
    return_code: int | None = None
    flags: int | None = None


def encode_remaining_length(length: int) -> bytes:
    if not 0 <= length <= MAX_REMAINING_LENGTH:
        raise CodecError(f"remaining length {length} outside [0, {MAX_REMAINING_LENGTH}]")
    out = bytearray()
    while True:
        digit = length % 128
        length //= 128
        if length:
            digit |= 0x80
        out.append(digit)
        if not length:
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int = 1) -> tuple[int, int]:
    """Return ``(value, bytes_consumed)`` for the varint starting at ``offset``."""
    value = 0
    multiplier = 1
    for i in range(4):
        pos = offset + i
        if pos >= len(data):
            raise MqttDecodeError("truncated remaining length")
        byte = data[pos]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        multiplier *= 128
    raise MqttDecodeError("malformed remaining length: continuation bit set on 4th byte")


def decode_mqtt_header(data: bytes) -> tuple[str, int, int]:
    """Parse a fixed header into ``(packet type, remaining length, header size)``."""
    if len(data) < 2:
        raise MqttDecodeError(f"truncated fixed header ({len(data)} byte(s))")
    type_code = data[0] >> 4
    if type_code == 0:
        raise MqttDecodeError("reserved packet type 0")
    remaining, used = decode_remaining_length(data, 1)
    return PACKET_NAMES[type_code], remaining, 1 + used


def _utf8(value: str | bytes) -> bytes:
    raw = value.encode("utf-8") if isinstance(value, str) else value
    if len(raw) > 0xFFFF:
        raw = raw[:0xFFFF]
    return struct.pack(">H", len(raw)) + raw


def _binary(value: str | bytes) -> bytes:
    return _utf8(value)


def random_string(rng: random.Random, max_len: int = 23) -> str:
    """Seeded field value: mostly short valid strings, some empty, special or oversize."""
    r = rng.random()
    if r < 0.08:
        return ""
    if r < 0.12:
        return "x" * rng.randint(256, 1024)
    if r < 0.25:
        return rng.choice(_SPECIAL_STRINGS)
    return "".join(rng.choices(_ALNUM, k=rng.randint(1, max_len)))


def random_topic(rng: random.Random) -> str:
    r = rng.random()
    if r < 0.6:
        return "/".join("".join(rng.choices(string.ascii_lowercase, k=rng.randint(1, 8))) for _ in range(rng.randint(1, 3)))
    return random_string(rng)


def _random_payload(rng: random.Random) -> bytes:
    r = rng.random()
    if r < 0.1:
        return b""
    if r < 0.5:
        return random_string(rng, 48).encode("utf-8")
    return rng.randbytes(rng.randint(1, 64))


def _packet_id(params: MqttPacketParams, rng: random.Random) -> int:
    pid = params.packet_id if params.packet_id is not None else rng.randint(1, 0xFFFF)
    return pid & 0xFFFF


def _check_qos(qos: int) -> int:
    if qos not in (0, 1, 2):
        raise CodecError(f"QoS must be 0, 1 or 2, got {qos!r}")
    return qos


def encode_mqtt(params: MqttPacketParams, rng: random.Random) -> EncodedMessage:
    name = params.packet_type.upper()
    if name not in PACKET_TYPES:
        raise CodecError(f"unknown MQTT packet type {params.packet_type!r}")
    if params.qos is not None:
        _check_qos(params.qos)
    flags = _FIXED_FLAGS.get(name, 0)
    body = b""

    if name == "CONNECT":
        cflags = params.connect_flags & 0xFF
        keep_alive = params.keep_alive if params.keep_alive is not None else rng.choice((0, 10, 30, 60, 65535, rng.randint(1, 600)))
        client_id = params.client_id if params.client_id is not None else random_string(rng)
        body = _utf8(params.protocol_name) + bytes([params.protocol_level & 0xFF, cflags]) + struct.pack(">H", keep_alive & 0xFFFF)
        body += _utf8(client_id)
        if cflags & 0x04:
            body += _utf8(params.will_topic if params.will_topic is not None else random_topic(rng))
            body += _binary(params.will_message if params.will_message is not None else _random_payload(rng))
        if cflags & 0x80:
            body += _utf8(params.username if params.username is not None else random_string(rng))
        if cflags & 0x40:
            body += _binary(params.password if params.password is not None else random_string(rng))
    elif name == "CONNACK":
        sp = params.session_present if params.session_present is not None else rng.randint(0, 1)
        rc = params.return_code if params.return_code is not None else rng.choice((0, 0, 0, 1, 2, 3, 4, 5))
        body = bytes([sp & 0x01, rc & 0xFF])
    elif name == "PUBLISH":
        qos = params.qos if params.qos is not None else rng.randint(0, 2)
        flags = (int(params.dup) << 3) | (qos << 1) | int(params.retain)
        topic = params.topic if params.topic is not None else random_topic(rng)
        body = _utf8(topic)
        if qos > 0:
            body += struct.pack(">H", _packet_id(params, rng))
        payload = params.payload if params.payload is not None else _random_payload(rng)
        body += payload.encode("utf-8") if isinstance(payload, str) else payload
    elif name in ("PUBACK", "PUBREC", "PUBREL", "PUBCOMP", "UNSUBACK"):
        body = struct.pack(">H", _packet_id(params, rng))
    elif name == "SUBSCRIBE":
        qos = params.qos if params.qos is not None else rng.randint(0, 2)
        topic = params.topic if params.topic is not None else random_topic(rng)
        body = struct.pack(">H", _packet_id(params, rng)) + _utf8(topic) + bytes([qos])
    elif name == "SUBACK":
        rc = params.return_code if params.return_code is not None else rng.choice((0, 1, 2, 0x80))
        body = struct.pack(">H", _packet_id(params, rng)) + bytes([rc & 0xFF])
    elif name == "UNSUBSCRIBE":
        topic = params.topic if params.topic is not None else random_topic(rng)
        body = struct.pack(">H", _packet_id(params, rng)) + _utf8(topic)
    elif name == "AUTH":
        rc = params.return_code if params.return_code is not None else rng.choice((0x00, 0x18, 0x19))
        # reason code followed by an empty property block
        body = bytes([rc & 0xFF, 0x00])
    # PINGREQ, PINGRESP and DISCONNECT carry a fixed header only

    if params.flags is not None:
        flags = params.flags & 0x0F
    data = bytes([(PACKET_TYPES[name] << 4) | flags]) + encode_remaining_length(len(body)) + body
    return EncodedMessage(name, data)
