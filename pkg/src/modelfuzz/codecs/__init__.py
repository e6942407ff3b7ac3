from .modbus import FIXED_LAYOUT, FUNCTION_CODES, ModbusParams, encode_modbus, parse_mbap
from .mqtt import (
    PACKET_TYPES,
    MqttDecodeError,
    MqttPacketParams,
    decode_mqtt_header,
    decode_remaining_length,
    encode_mqtt,
    encode_remaining_length,
)
from .mutation import MutationConfig, mutate, replay_mutations
from .payload import PayloadGenerator
from .types import CodecError, EncodedMessage, MutationRecord

__all__ = [
    "CodecError",
    "EncodedMessage",
    "FIXED_LAYOUT",
    "FUNCTION_CODES",
    "ModbusParams",
    "MqttDecodeError",
    "MqttPacketParams",
    "MutationConfig",
    "MutationRecord",
    "PACKET_TYPES",
    "PayloadGenerator",
    "decode_mqtt_header",
    "decode_remaining_length",
    "encode_modbus",
    "encode_mqtt",
    "encode_remaining_length",
    "mutate",
    "parse_mbap",
    "replay_mutations",
]
