"""Bundled buggy targets: an MQTT broker and a Modbus/TCP server with seeded faults, plus an echo stub."""

from .sessions import ALL_BUGS, EchoSession, ModbusSession, MqttBrokerSession, Reaction, TargetCrash, parse_bugs
from .supervisor import Testbed, free_port

__all__ = [
    "ALL_BUGS",
    "EchoSession",
    "ModbusSession",
    "MqttBrokerSession",
    "Reaction",
    "TargetCrash",
    "Testbed",
    "free_port",
    "parse_bugs",
]
