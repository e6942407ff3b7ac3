"""Turn abstract state sequences into concrete, optionally mutated, wire messages."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..seeding import derive_seed
from ..seqgen import MessageSequence
from .modbus import ModbusParams, encode_modbus
from .mqtt import MqttPacketParams, encode_mqtt
from .mutation import MutationConfig, mutate
from .types import CodecError, EncodedMessage

# stream id separating the payload RNG from the sequence-sampling RNG
_PAYLOAD_STREAM = 0xC0DEC


@dataclass(frozen=True)
class PayloadGenerator:
    protocol: str
    mutation: MutationConfig = field(default_factory=MutationConfig)
    modbus_truncate_probability: float = 0.02
    modbus_unit_id: int = 1

    def encode_state(self, state: str, rng: random.Random) -> EncodedMessage:
        proto = self.protocol.lower()
        if proto == "mqtt":
            return encode_mqtt(MqttPacketParams(state), rng)
        if proto == "modbus":
            truncate = rng.random() < self.modbus_truncate_probability
            return encode_modbus(state, ModbusParams(unit_id=self.modbus_unit_id, truncate=truncate), rng)
        raise CodecError(f"no payload generator for protocol {self.protocol!r}")

    def encode_sequence(self, seq: MessageSequence) -> list[EncodedMessage]:
        rng = random.Random(derive_seed(seq.seed, _PAYLOAD_STREAM))
        return [mutate(self.encode_state(state, rng), rng, self.mutation) for state in seq.states]
