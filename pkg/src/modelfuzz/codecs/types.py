from __future__ import annotations

from dataclasses import dataclass


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class MutationRecord:
    kind: str  # insert | delete | mutate
    offset: int
    payload: bytes
    length: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset, "payload": self.payload.hex(), "length": self.length}

    @classmethod
    def from_dict(cls, d: dict) -> "MutationRecord":
        return cls(d["kind"], int(d["offset"]), bytes.fromhex(d["payload"]), int(d["length"]))


@dataclass(frozen=True)
class EncodedMessage:
    state: str
    bytes: bytes
    mutations: tuple[MutationRecord, ...] = ()
