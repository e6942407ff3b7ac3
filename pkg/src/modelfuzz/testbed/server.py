"""Asyncio TCP host for one testbed session type.

When a seeded fault fires the process appends a line to the bug log and
exits immediately, the way a real target dies: sockets drop, nothing is
cleaned up.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import time

from .sessions import TargetCrash, session_factory

log = logging.getLogger(__name__)

CRASH_EXIT_CODE = 70


def record_crash(bug_log: str | None, crash: TargetCrash) -> None:
    if not bug_log:
        return
    line = json.dumps({"bug": crash.bug, "detail": crash.detail, "pid": os.getpid(), "time": time.time()})
    fd = os.open(bug_log, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, (line + "\n").encode())
        os.fsync(fd)
    finally:
        os.close(fd)


async def serve(protocol: str, host: str, port: int, bugs: frozenset[str], bug_log: str | None = None) -> None:
    factory = session_factory(protocol)

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = factory(bugs)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                reaction = session.feed(data)
                if reaction.reply:
                    writer.write(reaction.reply)
                    await writer.drain()
                if reaction.close:
                    break
        except TargetCrash as crash:
            record_crash(bug_log, crash)
            os._exit(CRASH_EXIT_CODE)
        except (ConnectionError, OSError):
            pass
        finally:
            writer.close()

    server = await asyncio.start_server(handle, host, port, reuse_address=True)
    log.info("testbed %s listening on %s:%d (bugs: %s)", protocol, host, port, ",".join(sorted(bugs)) or "none")
    async with server:
        await server.serve_forever()


def run(protocol: str, host: str, port: int, bugs: frozenset[str], bug_log: str | None = None) -> None:
    try:
        asyncio.run(serve(protocol, host, port, bugs, bug_log))
    except KeyboardInterrupt:
        pass
