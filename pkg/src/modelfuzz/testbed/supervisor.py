"""Run a testbed server as a child process and restart it when it dies."""

from __future__ import annotations

import json
import logging
import os
import socket
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path

from .sessions import ALL_BUGS, session_factory

log = logging.getLogger(__name__)


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


class Testbed:
    """Supervised testbed process.

    ``restart_delay_s`` is how long the target stays down after a crash; keep
    it above the fuzzer's probe budget (retries x backoff) or crashes go
    unnoticed.
    """

    __test__ = False  # not a pytest class despite the name

    def __init__(
        self,
        protocol: str,
        host: str = "127.0.0.1",
        port: int = 0,
        bugs: frozenset[str] = ALL_BUGS,
        auto_restart: bool = True,
        restart_delay_s: float = 0.3,
        bug_log: str | os.PathLike | None = None,
    ):
        session_factory(protocol)
        self.protocol = protocol.lower()
        self.host = host
        self.port = port or free_port(host)
        self.bugs = frozenset(bugs)
        self.auto_restart = auto_restart
        self.restart_delay_s = restart_delay_s
        self._tmpdir = None
        if bug_log is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="modelfuzz-testbed-")
            bug_log = Path(self._tmpdir.name) / "bugs.jsonl"
        self.bug_log = Path(bug_log)
        self.exit_codes: list[int] = []
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._stopping = False
        self._monitor: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def restarts(self) -> int:
        return len(self.exit_codes)

    def _spawn(self) -> None:
        cmd = [
            sys.executable, "-m", "modelfuzz.testbed", "serve", self.protocol,
            "--host", self.host, "--port", str(self.port),
            "--bugs", ",".join(sorted(self.bugs)) or "none",
            "--bug-log", str(self.bug_log),
        ]
        self._proc = subprocess.Popen(cmd, stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL)

    def _watch(self) -> None:
        while True:
            proc = self._proc
            code = proc.wait()
            with self._lock:
                if self._stopping:
                    return
                self.exit_codes.append(code)
                log.info("testbed exited with %d", code)
                if not self.auto_restart:
                    return
            time.sleep(self.restart_delay_s)
            with self._lock:
                if self._stopping:
                    return
                self._spawn()

    def start(self, ready_timeout: float = 10.0) -> "Testbed":
        with self._lock:
            self._spawn()
        self._monitor = threading.Thread(target=self._watch, name="testbed-monitor", daemon=True)
        self._monitor.start()
        if not self.wait_ready(ready_timeout):
            self.stop()
            raise RuntimeError(f"testbed did not come up on {self.endpoint}")
        return self

    def wait_ready(self, timeout: float = 10.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            try:
                socket.create_connection((self.host, self.port), timeout=0.5).close()
                return True
            except OSError:
                time.sleep(0.02)
        return False

    def kill(self) -> None:
        """Terminate the current process (it is restarted if auto_restart is on)."""
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.kill()

    def stop(self) -> None:
        with self._lock:
            self._stopping = True
            proc = self._proc
        if proc is not None and proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        if self._monitor is not None:
            self._monitor.join(5)

    def bug_events(self) -> list[dict]:
        if not self.bug_log.exists():
            return []
        return [json.loads(line) for line in self.bug_log.read_text().splitlines() if line.strip()]

    def bugs_seen(self) -> set[str]:
        return {e["bug"] for e in self.bug_events()}

    def __enter__(self) -> "Testbed":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
