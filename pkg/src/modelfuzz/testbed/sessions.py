"""Per-connection protocol logic of the bundled buggy targets.

Sessions are plain objects fed raw bytes; they return what to send back and
whether to close.  Keeping them free of sockets lets tests (and the offline
simulator) drive them directly.

Seeded faults, each individually toggleable:

* ``B1``: a PINGREQ arriving before any CONNECT reaches a keep-alive
  handler that assumes a session exists.  The broker aborts.
* ``B2``: a PUBLISH whose remaining length is 0 is indexed without a length
  check.  Unhandled exception.
* ``B3``: Modbus request handlers unpack their fixed field layout without
  checking the body length first, so short bodies raise ``struct.error``.

With a fault disabled the same input is rejected gracefully.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

ALL_BUGS = frozenset({"B1", "B2", "B3"})

# upper bound on a single buffered MQTT packet; larger ones close the session
_MAX_PACKET = 1 << 20

_CONNECT, _CONNACK, _PUBLISH, _PUBACK, _PUBREC, _PUBREL, _PUBCOMP = 1, 2, 3, 4, 5, 6, 7
_SUBSCRIBE, _SUBACK, _UNSUBSCRIBE, _UNSUBACK, _PINGREQ, _PINGRESP, _DISCONNECT = 8, 9, 10, 11, 12, 13, 14


class TargetCrash(Exception):
    """A seeded fault fired; the hosting process must die."""

    def __init__(self, bug: str, detail: str):
        super().__init__(f"{bug}: {detail}")
        self.bug = bug
        self.detail = detail


@dataclass
class Reaction:
    reply: bytes = b""
    close: bool = False


def parse_bugs(text: str | None) -> frozenset[str]:
    if text is None or text.strip().lower() == "all":
        return ALL_BUGS
    if text.strip().lower() in ("", "none"):
        return frozenset()
    bugs = frozenset(b.strip().upper() for b in text.split(",") if b.strip())
    unknown = bugs - ALL_BUGS
    if unknown:
        raise ValueError(f"unknown bug ids: {sorted(unknown)}")
    return bugs


class EchoSession:
    def __init__(self, bugs: frozenset[str] = frozenset()):
        pass

    def feed(self, data: bytes) -> Reaction:
        return Reaction(bytes(data))


def _u16(buf: bytes | bytearray, offset: int) -> int:
    return (buf[offset] << 8) | buf[offset + 1]


def _read_string(body: bytes, offset: int) -> tuple[bytes, int]:
    if offset + 2 > len(body):
        raise ValueError("truncated string length")
    n = _u16(body, offset)
    end = offset + 2 + n
    if end > len(body):
        raise ValueError("string overruns packet")
    return body[offset + 2:end], end


class MqttBrokerSession:
    """A small MQTT 3.1.1 broker front end: CONNECT handshake, acks, pings."""

    def __init__(self, bugs: frozenset[str] = ALL_BUGS):
        self.bugs = bugs
        self.buf = bytearray()
        self.connected = False
        self.seen_packet = False

    def feed(self, data: bytes) -> Reaction:
        self.buf += data
        out = bytearray()
        while True:
            header = self._header()
            if header is None:
                break
            if header is False:
                return Reaction(bytes(out), True)
            first, remaining, size = header
            ptype = first >> 4
            if ptype == _PINGREQ and not self.seen_packet and "B1" in self.bugs:
                # seeded fault B1: ping handler dereferences the (absent) session
                raise TargetCrash("B1", "PINGREQ before CONNECT")
            if remaining > _MAX_PACKET:
                return Reaction(bytes(out), True)
            if len(self.buf) < size + remaining:
                break
            body = bytes(self.buf[size:size + remaining])
            del self.buf[:size + remaining]
            self.seen_packet = True
            reply, close = self._dispatch(first, body)
            out += reply
            if close:
                return Reaction(bytes(out), True)
        return Reaction(bytes(out))

    def _header(self):
        """(first byte, remaining length, header size); None if incomplete, False if malformed."""
        buf = self.buf
        if len(buf) < 2:
            return None
        if buf[0] >> 4 == 0:
            return False
        value, mult = 0, 1
        for i in range(1, 5):
            if i >= len(buf):
                return None
            value += (buf[i] & 0x7F) * mult
            if not buf[i] & 0x80:
                return buf[0], value, i + 1
            mult *= 128
        return False

    def _dispatch(self, first: int, body: bytes) -> tuple[bytes, bool]:
        ptype, flags = first >> 4, first & 0x0F
        if not self.connected:
            if ptype != _CONNECT:
                return b"", True
            return self._connect(body)
        if ptype == _PUBLISH:
            return self._publish(flags, body)
        if ptype in (_PUBACK, _PUBCOMP):
            return b"", len(body) < 2
        if ptype == _PUBREC:
            return (b"", True) if len(body) < 2 else (b"\x62\x02" + body[:2], False)
        if ptype == _PUBREL:
            return (b"", True) if len(body) < 2 else (b"\x70\x02" + body[:2], False)
        if ptype == _SUBSCRIBE:
            return self._subscribe(flags, body)
        if ptype == _UNSUBSCRIBE:
            if flags != 0x2 or len(body) < 4:
                return b"", True
            return b"\xb0\x02" + body[:2], False
        if ptype == _PINGREQ:
            return b"\xd0\x00", False
        # DISCONNECT, a second CONNECT, and server-to-client types all end the session
        return b"", True

    def _connect(self, body: bytes) -> tuple[bytes, bool]:
        try:
            name, off = _read_string(body, 0)
            if off + 4 > len(body):
                raise ValueError("truncated variable header")
            level, cflags = body[off], body[off + 1]
            off += 4
            client_id, off = _read_string(body, off)
            if cflags & 0x04:
                _, off = _read_string(body, off)
                _, off = _read_string(body, off)
            if cflags & 0x80:
                _, off = _read_string(body, off)
            if cflags & 0x40:
                _, off = _read_string(body, off)
        except ValueError:
            return b"\x20\x02\x00\x02", True
        if name != b"MQTT" or level != 4:
            return b"\x20\x02\x00\x01", True
        if cflags & 0x01 or (not client_id and not cflags & 0x02):
            return b"\x20\x02\x00\x02", True
        self.connected = True
        return b"\x20\x02\x00\x00", False

    def _publish(self, flags: int, body: bytes) -> tuple[bytes, bool]:
        qos = (flags >> 1) & 0x3
        if qos == 3:
            return b"", True
        if not body:
            if "B2" in self.bugs:
                # seeded fault B2: empty variable header indexed without a check
                raise TargetCrash("B2", "IndexError: PUBLISH with remaining length 0")
            return b"", True
        try:
            _, off = _read_string(body, 0)
        except ValueError:
            return b"", True
        if qos == 0:
            return b"", False
        if off + 2 > len(body):
            return b"", True
        pid = body[off:off + 2]
        return (b"\x40\x02" if qos == 1 else b"\x50\x02") + pid, False

    def _subscribe(self, flags: int, body: bytes) -> tuple[bytes, bool]:
        if flags != 0x2 or len(body) < 5:
            return b"", True
        codes = bytearray()
        off = 2
        try:
            while off < len(body):
                _, off = _read_string(body, off)
                if off >= len(body):
                    raise ValueError("missing requested QoS")
                qos = body[off]
                off += 1
                codes.append(qos if qos <= 2 else 0x80)
        except ValueError:
            return b"", True
        payload = body[:2] + bytes(codes)
        if len(payload) >= 128:
            return b"", True
        return bytes([0x90, len(payload)]) + payload, False


# fixed field layout each handler unpacks before looking at anything else
_MODBUS_LAYOUT = {
    0x01: ">HH",
    0x03: ">HH",
    0x06: ">HH",
    0x10: ">HHB",
    0x14: ">B",
    0x2B: ">BBB",
}
_FILE_SUBREQUEST = ">BHHH"

_DEVICE_OBJECTS = (b"modelfuzz", b"TB-1", b"1.0")


class ModbusSession:
    """Modbus/TCP server for the six supported function codes."""

    def __init__(self, bugs: frozenset[str] = ALL_BUGS):
        self.bugs = bugs
        self.buf = bytearray()
        self.registers = [0] * 0x10000

    def feed(self, data: bytes) -> Reaction:
        self.buf += data
        out = bytearray()
        while len(self.buf) >= 7:
            tid, proto, length, unit = struct.unpack(">HHHB", self.buf[:7])
            if proto != 0 or not 2 <= length <= 254:
                return Reaction(bytes(out), True)
            if len(self.buf) < 6 + length:
                break
            pdu = bytes(self.buf[7:6 + length])
            del self.buf[:6 + length]
            reply = self._handle(pdu[0], pdu[1:])
            out += struct.pack(">HHHB", tid, 0, len(reply) + 1, unit) + reply
        return Reaction(bytes(out))

    def _unpack(self, fmt: str, data: bytes, offset: int = 0) -> tuple | None:
        size = struct.calcsize(fmt)
        if "B3" in self.bugs:
            # seeded fault B3: no length check before unpacking
            try:
                return struct.unpack(fmt, data[offset:offset + size])
            except struct.error as exc:
                raise TargetCrash("B3", str(exc)) from exc
        if len(data) < offset + size:
            return None
        return struct.unpack(fmt, data[offset:offset + size])

    def _handle(self, fc: int, body: bytes) -> bytes:
        fmt = _MODBUS_LAYOUT.get(fc)
        if fmt is None:
            return bytes([fc | 0x80, 0x01])
        fields = self._unpack(fmt, body)
        if fields is None:
            return bytes([fc | 0x80, 0x03])
        if fc in (0x01, 0x03):
            addr, qty = fields
            limit = 2000 if fc == 0x01 else 125
            if not 1 <= qty <= limit:
                return bytes([fc | 0x80, 0x03])
            if addr + qty > 0x10000:
                return bytes([fc | 0x80, 0x02])
            if fc == 0x01:
                return bytes([fc, (qty + 7) // 8]) + bytes((qty + 7) // 8)
            regs = self.registers[addr:addr + qty]
            return bytes([fc, 2 * qty]) + b"".join(struct.pack(">H", r) for r in regs)
        if fc == 0x06:
            addr, value = fields
            self.registers[addr] = value
            return bytes([fc]) + body[:4]
        if fc == 0x10:
            addr, qty, count = fields
            if not 1 <= qty <= 123 or count != 2 * qty or len(body) < 5 + count:
                return bytes([fc | 0x80, 0x03])
            if addr + qty > 0x10000:
                return bytes([fc | 0x80, 0x02])
            for i in range(qty):
                self.registers[addr + i] = _u16(body, 5 + 2 * i)
            return bytes([fc]) + body[:4]
        if fc == 0x14:
            return self._read_file_record(fields[0], body)
        mei, read_code, _ = fields
        if mei != 0x0E:
            return bytes([fc | 0x80, 0x01])
        if not 1 <= read_code <= 4:
            return bytes([fc | 0x80, 0x03])
        objects = b"".join(bytes([i, len(v)]) + v for i, v in enumerate(_DEVICE_OBJECTS))
        return bytes([fc, 0x0E, read_code, 0x01, 0x00, 0x00, len(_DEVICE_OBJECTS)]) + objects

    def _read_file_record(self, count: int, body: bytes) -> bytes:
        if not 0x07 <= count <= 0xF5:
            return bytes([0x94, 0x03])
        parts = bytearray()
        offset = 1
        # walks the declared byte count, trusting it over the actual body size
        while offset < 1 + count:
            sub = self._unpack(_FILE_SUBREQUEST, body, offset)
            if sub is None:
                return bytes([0x94, 0x03])
            ref, _, _, length = sub
            if ref != 6 or length > 120:
                return bytes([0x94, 0x02])
            parts += bytes([1 + 2 * length, 6]) + bytes(2 * length)
            offset += 7
        if len(parts) > 250:
            return bytes([0x94, 0x03])
        return bytes([0x14, len(parts)]) + parts


SESSIONS = {"mqtt": MqttBrokerSession, "modbus": ModbusSession, "echo": EchoSession}


def session_factory(protocol: str):
    try:
        return SESSIONS[protocol.lower()]
    except KeyError:
        raise ValueError(f"unknown testbed protocol {protocol!r}; expected one of {sorted(SESSIONS)}") from None
