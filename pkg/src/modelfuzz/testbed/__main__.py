"""Child-process entry point used by :class:`~modelfuzz.testbed.Testbed`."""

import argparse
import logging

from .server import run
from .sessions import SESSIONS, parse_bugs


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="python -m modelfuzz.testbed")
    sub = parser.add_subparsers(dest="command", required=True)
    serve = sub.add_parser("serve")
    serve.add_argument("protocol", choices=sorted(SESSIONS))
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, required=True)
    serve.add_argument("--bugs", default="all")
    serve.add_argument("--bug-log")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    run(args.protocol, args.host, args.port, parse_bugs(args.bugs), args.bug_log)


if __name__ == "__main__":
    main()
