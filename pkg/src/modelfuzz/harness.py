"""Drive a live target over TCP: send sequences, classify outcomes, probe liveness, store cases."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .codecs import EncodedMessage

log = logging.getLogger(__name__)

RESPONSE_RECEIVED = "ResponseReceived"
TIMEOUT = "Timeout"
CONNECTION_RESET = "ConnectionReset"
SEND_FAILED = "SendFailed"
TARGET_DOWN = "TargetDown"

OUTCOME_CLASSES = (RESPONSE_RECEIVED, TIMEOUT, CONNECTION_RESET, SEND_FAILED, TARGET_DOWN)
FAILURE_CLASSES = frozenset({TIMEOUT, CONNECTION_RESET, SEND_FAILED, TARGET_DOWN})
# classes after which the connection is unusable
_ABORTING = frozenset({CONNECTION_RESET, SEND_FAILED, TARGET_DOWN})

# abortive close: RST instead of FIN, so millions of short connections leave no TIME_WAIT
_LINGER_RST = struct.pack("ii", 1, 0)


class ConfigurationError(Exception):
    """Bad configuration (e.g. unresolvable endpoint); distinct from a dead target."""


class UnknownCaseError(KeyError):
    pass


class CorruptRecordError(ValueError):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
            raise ConfigurationError(f"endpoint must be host:port, got {text!r}")
        return cls(host.strip("[]"), int(port))

    def resolve(self) -> None:
        try:
            socket.getaddrinfo(self.host, self.port, type=socket.SOCK_STREAM)
        except socket.gaierror as exc:
            raise ConfigurationError(f"cannot resolve {self.host!r}: {exc}") from exc

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class TimeoutPolicy:
    connect_s: float = 1.0
    read_s: float = 0.2
    probe_retries: int = 3
    probe_backoff_s: float = 0.25


@dataclass(frozen=True)
class Outcome:
    cls: str
    response: bytes | None = None
    latency: float = 0.0

    def __post_init__(self) -> None:
        if self.cls not in OUTCOME_CLASSES:
            raise ValueError(f"unknown outcome class {self.cls!r}")
        if (self.response is not None) != (self.cls == RESPONSE_RECEIVED):
            raise ValueError("response bytes are present iff the class is ResponseReceived")

    @property
    def is_failure(self) -> bool:
        return self.cls in FAILURE_CLASSES

    @property
    def first_byte(self) -> int | None:
        return self.response[0] if self.response else None


@dataclass(frozen=True)
class SequenceOutcome:
    sequence_id: int
    results: tuple[tuple[str, Outcome], ...]
    crashed: bool = False

    def summary(self) -> dict:
        return {
            "classes": [o.cls for _, o in self.results],
            "first_bytes": [o.first_byte for _, o in self.results],
            "crashed": self.crashed,
        }


def _connect(endpoint: Endpoint, timeout: float) -> socket.socket:
    sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, _LINGER_RST)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def probe_liveness(endpoint: Endpoint, policy: TimeoutPolicy) -> bool:
    """True iff a fresh TCP connect succeeds within ``1 + probe_retries`` attempts."""
    for attempt in range(policy.probe_retries + 1):
        try:
            _connect(endpoint, policy.connect_s).close()
            return True
        except socket.gaierror as exc:
            raise ConfigurationError(f"cannot resolve {endpoint.host!r}: {exc}") from exc
        except OSError:
            if attempt < policy.probe_retries:
                time.sleep(policy.probe_backoff_s)
    return False


def _exchange(sock: socket.socket, data: bytes, read_s: float) -> Outcome:
    start = time.perf_counter()
    try:
        sock.sendall(data)
    except OSError:
        return Outcome(SEND_FAILED, latency=time.perf_counter() - start)
    sock.settimeout(read_s)
    try:
        chunk = sock.recv(65536)
    except socket.timeout:
        return Outcome(TIMEOUT, latency=time.perf_counter() - start)
    except OSError:
        return Outcome(CONNECTION_RESET, latency=time.perf_counter() - start)
    elapsed = time.perf_counter() - start
    if not chunk:
        return Outcome(CONNECTION_RESET, latency=elapsed)
    return Outcome(RESPONSE_RECEIVED, chunk, elapsed)


def run_sequence(
    endpoint: Endpoint,
    messages: Sequence[EncodedMessage],
    policy: TimeoutPolicy,
    sequence_id: int = 0,
    probe: bool = True,
    settle_s: float = 0.0,
) -> SequenceOutcome:
    """Send ``messages`` over one fresh connection, then probe the target.

    ``settle_s`` delays the probe, giving a slow target time to act on the
    last bytes before liveness is judged.
    """
    results: list[tuple[str, Outcome]] = []
    try:
        sock = _connect(endpoint, policy.connect_s)
    except socket.gaierror as exc:
        raise ConfigurationError(f"cannot resolve {endpoint.host!r}: {exc}") from exc
    except OSError:
        if messages:
            results.append((messages[0].state, Outcome(TARGET_DOWN)))
        sock = None
    if sock is not None:
        try:
            for msg in messages:
                outcome = _exchange(sock, msg.bytes, policy.read_s)
                results.append((msg.state, outcome))
                if outcome.cls in _ABORTING:
                    break
        finally:
            sock.close()
    if probe and settle_s > 0:
        time.sleep(settle_s)
    crashed = probe and not probe_liveness(endpoint, policy)
    return SequenceOutcome(sequence_id, tuple(results), crashed)


class TargetMonitor:
    """Shared view of target health for a pool of sequence workers.

    The first worker to see a failed probe marks the target down and waits for
    it to recover; the others block in :meth:`gate` until it is back up (or
    until the campaign gives up on it).
    """

    def __init__(self, endpoint: Endpoint, policy: TimeoutPolicy, recovery_wait_s: float):
        self.endpoint = endpoint
        self.policy = policy
        self.recovery_wait_s = recovery_wait_s
        self._cond = threading.Condition()
        self._down = False
        self._dead = False

    @property
    def dead(self) -> bool:
        return self._dead

    def gate(self) -> bool:
        """Block while the target is recovering; False if it was declared dead."""
        with self._cond:
            while self._down and not self._dead:
                self._cond.wait()
            return not self._dead

    def report_crash(self, wait_for_recovery: bool) -> bool:
        """Record a crash; optionally wait for a restart.  Returns True if the target is up."""
        with self._cond:
            if self._down or self._dead:
                # another worker owns recovery
                while self._down and not self._dead:
                    self._cond.wait()
                return not self._dead
            self._down = True
        up = wait_for_recovery and self.wait_until_up(self.recovery_wait_s)
        with self._cond:
            self._down = False
            self._dead = not up
            self._cond.notify_all()
        return up

    def wait_until_up(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            try:
                _connect(self.endpoint, min(self.policy.connect_s, 0.5)).close()
                return True
            except OSError:
                time.sleep(0.02)
        return False


@dataclass
class StoredCase:
    id: int
    seed: int
    states: list[str]
    messages: list[bytes]
    outcome: dict
    timestamp: float = field(default_factory=time.time)

    def _body(self) -> dict:
        return {
            "id": self.id,
            "seed": self.seed,
            "states": list(self.states),
            "messages": [m.hex() for m in self.messages],
            "outcome": self.outcome,
            "timestamp": self.timestamp,
        }

    def to_record(self) -> dict:
        body = self._body()
        body["checksum"] = _checksum(body)
        return body

    @classmethod
    def from_record(cls, record: dict) -> "StoredCase":
        body = {k: v for k, v in record.items() if k != "checksum"}
        if record.get("checksum") != _checksum(body):
            raise CorruptRecordError(f"checksum mismatch for case {record.get('id')!r}")
        return cls(
            id=int(body["id"]),
            seed=int(body["seed"]),
            states=list(body["states"]),
            messages=[bytes.fromhex(m) for m in body["messages"]],
            outcome=body["outcome"],
            timestamp=float(body["timestamp"]),
        )

    def encoded(self) -> list[EncodedMessage]:
        return [EncodedMessage(s, m) for s, m in zip(self.states, self.messages)]


def _checksum(body: dict) -> str:
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class CaseStore:
    """Append-only JSONL case store with per-record checksums.

    Appends go through one lock, so concurrent workers can share a store.
    Each append is flushed; :meth:`sync` forces the file to disk.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = None

    def append(self, case: StoredCase) -> None:
        line = json.dumps(case.to_record(), sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            if self._fh is None:
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(line)
            self._fh.flush()

    def sync(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "CaseStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __iter__(self) -> Iterator[StoredCase]:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield StoredCase.from_record(json.loads(line))

    def get(self, case_id: int) -> StoredCase:
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if record.get("id") == case_id:
                        return StoredCase.from_record(record)
        raise UnknownCaseError(case_id)


def store_case(store: CaseStore, case: StoredCase) -> None:
    store.append(case)


# pause before the post-replay probe; replays run alone, so this is cheap
REPLAY_SETTLE_S = 0.05


def replay_case(
    store: CaseStore, case_id: int, endpoint: Endpoint, policy: TimeoutPolicy, settle_s: float = REPLAY_SETTLE_S
) -> SequenceOutcome:
    """Re-send the exact stored bytes of ``case_id`` and return a fresh outcome."""
    case = store.get(case_id)
    return run_sequence(endpoint, case.encoded(), policy, sequence_id=case.id, settle_s=settle_s)
