"""Byte-level payload mutation: insertion, deletion and in-place overwrite."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Iterable

from .types import EncodedMessage, MutationRecord

INTERESTING_BYTES = (0x00, 0x01, 0x7F, 0x80, 0xFF)


@dataclass(frozen=True)
class MutationConfig:
    insert_probability: float = 0.1
    delete_probability: float = 0.1
    mutate_probability: float = 0.1
    max_mutations: int = 4
    max_insert: int = 8
    max_delete: int = 8
    max_overwrite: int = 4


def _fill(rng: random.Random, n: int) -> bytes:
    return bytes(rng.choice(INTERESTING_BYTES) if rng.random() < 0.5 else rng.randrange(256) for _ in range(n))


def mutate(message: EncodedMessage, rng: random.Random, config: MutationConfig) -> EncodedMessage:
    """Apply up to ``config.max_mutations`` operators, one draw per slot.

    Each slot picks insert / delete / overwrite with the configured
    probabilities (or nothing).  Deletion never shrinks the message below one
    byte.
    """
    data = bytearray(message.bytes)
    records = list(message.mutations)
    p_ins = config.insert_probability
    p_del = p_ins + config.delete_probability
    p_mut = p_del + config.mutate_probability
    for _ in range(config.max_mutations):
        r = rng.random()
        if r < p_ins:
            offset = rng.randint(0, len(data))
            payload = _fill(rng, rng.randint(1, config.max_insert))
            data[offset:offset] = payload
            records.append(MutationRecord("insert", offset, payload, len(payload)))
        elif r < p_del:
            if len(data) <= 1:
                continue
            offset = rng.randrange(len(data))
            length = min(rng.randint(1, config.max_delete), len(data) - offset, len(data) - 1)
            del data[offset:offset + length]
            records.append(MutationRecord("delete", offset, b"", length))
        elif r < p_mut:
            if not data:
                continue
            offset = rng.randrange(len(data))
            length = rng.randint(1, min(config.max_overwrite, len(data) - offset))
            payload = _fill(rng, length)
            data[offset:offset + length] = payload
            records.append(MutationRecord("mutate", offset, payload, length))
    if len(records) == len(message.mutations):
        return message
    return replace(message, bytes=bytes(data), mutations=tuple(records))


def replay_mutations(original: bytes, records: Iterable[MutationRecord]) -> bytes:
    data = bytearray(original)
    for rec in records:
        if rec.kind == "insert":
            data[rec.offset:rec.offset] = rec.payload
        elif rec.kind == "delete":
            del data[rec.offset:rec.offset + rec.length]
        elif rec.kind == "mutate":
            data[rec.offset:rec.offset + rec.length] = rec.payload
        else:
            raise ValueError(f"unknown mutation kind {rec.kind!r}")
    return bytes(data)
