"""Command-line entry point.

Campaigns run in-process by default; ``fuzz --server URL`` submits the
campaign to a running ``modelfuzz serve`` instance instead and polls it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import CampaignConfig, config_from_dict, dump_toml, load_config
from .harness import (
    CaseStore,
    ConfigurationError,
    CorruptRecordError,
    Endpoint,
    UnknownCaseError,
    replay_case,
)
from .model import ModelFormatError, StateModel, validate_model
from .orchestrator import CASES_FILE, REPORT_FILE, run_campaign
from .protocols import PROFILES

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_CONFIG = 2

log = logging.getLogger("modelfuzz")


def _load_report(path: str) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_FILE
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read report {p}: {exc}") from exc


def cmd_init(args) -> int:
    prof = PROFILES[args.protocol]
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    config_path = out / f"{args.protocol}.toml"
    states_path = out / f"{args.protocol}-states.json"
    for path in (config_path, states_path):
        if path.exists() and not args.force:
            print(f"{path} exists; use --force to overwrite", file=sys.stderr)
            return EXIT_CONFIG
    port = 1883 if args.protocol == "mqtt" else 502
    config = CampaignConfig(protocol=args.protocol, endpoint=f"127.0.0.1:{port}",
                            output_dir=f"{args.protocol}-campaign")
    config_path.write_text(dump_toml(config), encoding="utf-8")
    states = [
        {"state": s, "priority": prof.rank(s), "initial": s == prof.initial_state, "reason": prof.reasons.get(s, "")}
        for s in prof.candidates
    ]
    states_path.write_text(json.dumps({"protocol": prof.name, "candidates": states}, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {config_path}")
    print(f"wrote {states_path}")
    return EXIT_OK


def _print_summary(report: dict) -> None:
    totals = report.get("totals", {})
    print(f"stop reason: {report.get('stop_reason')}")
    print(f"batches: {totals.get('batches')}  cases: {totals.get('total_cases')}  "
          f"attempted: {totals.get('attempted')}  aborted: {totals.get('aborted')}  restarts: {totals.get('restarts')}")
    for crash in report.get("crashes", []):
        print(f"crash: case {crash['case_id']} (batch {crash['batch']}, confirmed={crash['confirmed']}) "
              f"states={' '.join(crash['states'])}")
    ledger = report.get("ledger", {})
    print(f"advisor calls: {ledger.get('calls', 0)}  tokens: {ledger.get('total_tokens', 0)}")


def _fuzz_remote(config: CampaignConfig, server: str, poll_s: float) -> dict:
    import httpx

    base = server.rstrip("/")
    with httpx.Client(timeout=30) as client:
        resp = client.post(f"{base}/campaigns", json={"config": config.model_dump()})
        if resp.status_code == 422:
            raise ConfigurationError(resp.text)
        resp.raise_for_status()
        job = resp.json()
        while job["state"] == "running":
            time.sleep(poll_s)
            job = client.get(f"{base}/campaigns/{job['id']}").json()
        if job["state"] == "failed":
            raise RuntimeError(f"campaign failed on the server: {job['error']}")
        report = client.get(f"{base}/campaigns/{job['id']}/report").json()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def cmd_fuzz(args) -> int:
    overrides = {
        "seed": args.seed,
        "endpoint": args.endpoint,
        "output_dir": args.output,
        "max_batches": args.batches,
        "batch_size": args.batch_size,
    }
    config = load_config(args.config, **overrides) if args.config else config_from_dict(
        {k: v for k, v in overrides.items() if v is not None})
    testbed = None
    if args.testbed:
        from .testbed import Testbed

        testbed = Testbed(config.protocol, restart_delay_s=args.restart_delay).start()
        config = config.model_copy(update={"endpoint": testbed.endpoint})
        print(f"bundled {config.protocol} testbed on {testbed.endpoint}")
    try:
        if args.server:
            report = _fuzz_remote(config, args.server, args.poll)
        else:
            report = run_campaign(config).to_dict()
    finally:
        if testbed is not None:
            testbed.stop()
    _print_summary(report)
    print(f"report: {Path(config.output_dir) / REPORT_FILE}")
    return EXIT_CRASH if report.get("crashes") else EXIT_OK


def cmd_replay(args) -> int:
    store_path = Path(args.store) if args.store else Path(args.output) / CASES_FILE
    endpoint = Endpoint.parse(args.endpoint)
    endpoint.resolve()
    if args.config:
        policy = load_config(args.config).timeouts.build()
    else:
        from .harness import TimeoutPolicy

        policy = TimeoutPolicy(read_s=args.read_timeout)
    try:
        outcome = replay_case(CaseStore(store_path), args.case_id, endpoint, policy)
    except UnknownCaseError:
        print(f"no case {args.case_id} in {store_path}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptRecordError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    for i, (state, result) in enumerate(outcome.results):
        resp = result.response.hex() if result.response is not None else "-"
        print(f"{i}: {state} -> {result.cls} {resp}")
    print(f"crashed: {str(outcome.crashed).lower()}")
    return EXIT_CRASH if outcome.crashed else EXIT_OK


def cmd_stats(args) -> int:
    report = _load_report(args.report)
    rows = [(str(b["index"]), b["batch_stats"]) for b in report.get("batches", [])]
    print(f"{'batch':>5}  {'total':>8}  {'unique':>8}  {'avg_len':>9}")
    for name, s in rows:
        print(f"{name:>5}  {s['total_cases']:>8}  {s['unique_cases']:>8}  {s['avg_length']:>9.2f}")
    if rows:
        total = sum(s["total_cases"] for _, s in rows)
        avg = sum(s["avg_length"] * s["total_cases"] for _, s in rows) / total
        # per-batch unique counts are not additive across batches
        print(f"{'all':>5}  {total:>8}  {'-':>8}  {avg:>9.2f}")
    return EXIT_OK


def cmd_tokens(args) -> int:
    ledger = _load_report(args.report).get("ledger", {})
    print(f"calls: {ledger.get('calls', 0)}")
    print(f"prompt tokens: {ledger.get('prompt_tokens', 0)}")
    print(f"completion tokens: {ledger.get('completion_tokens', 0)}")
    print(f"total tokens: {ledger.get('total_tokens', 0)}")
    per: dict[str, list[int]] = {}
    for rec in ledger.get("records", []):
        entry = per.setdefault(rec["template_id"], [0, 0])
        entry[0] += 1
        entry[1] += rec["prompt_tokens"] + rec["completion_tokens"]
    for template, (calls, tokens) in sorted(per.items()):
        print(f"  {template}: {calls} call(s), {tokens} tokens")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        model = StateModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    except (OSError, ModelFormatError) as exc:
        print(f"invalid model document: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = validate_model(model)
    for rule, message in report.violations:
        print(f"{rule}: {message}")
    print("ok" if report.ok else f"{len(report.violations)} violation(s)")
    return EXIT_OK if report.ok else EXIT_CONFIG


def cmd_testbed(args) -> int:
    from .testbed import Testbed, parse_bugs

    try:
        bugs = parse_bugs(args.bugs)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    tb = Testbed(args.protocol, host=args.host, port=args.port, bugs=bugs, auto_restart=not args.no_restart,
                 restart_delay_s=args.restart_delay, bug_log=args.bug_log)
    tb.start()
    print(f"{args.protocol} testbed listening on {tb.endpoint} (bugs: {','.join(sorted(bugs)) or 'none'})")
    print(f"bug log: {tb.bug_log}")
    try:
        while True:
            time.sleep(1)
            if not args.no_restart:
                continue
            if tb._proc is not None and tb._proc.poll() is not None:
                return EXIT_CRASH
    except KeyboardInterrupt:
        pass
    finally:
        tb.stop()
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.workdir), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelfuzz", description="Generation-guided, model-based protocol fuzzer")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a default config and candidate-state fixture")
    p.add_argument("protocol", choices=sorted(PROFILES))
    p.add_argument("--dir", default=".")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("fuzz", help="run a campaign")
    p.add_argument("--config", help="TOML campaign config")
    p.add_argument("--seed", type=int)
    p.add_argument("--endpoint", help="target host:port")
    p.add_argument("--output", help="output directory")
    p.add_argument("--batches", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--testbed", action="store_true", help="launch the bundled testbed and fuzz it")
    p.add_argument("--restart-delay", type=float, default=0.5, help="testbed restart delay (with --testbed)")
    p.add_argument("--server", help="submit to a running modelfuzz service instead of running in-process")
    p.add_argument("--poll", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("replay", help="re-send a stored case")
    p.add_argument("case_id", type=int)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--store", help="case store (default: <output>/cases.jsonl)")
    p.add_argument("--output", default="campaign-out")
    p.add_argument("--config", help="take timeouts from this config")
    p.add_argument("--read-timeout", type=float, default=0.2)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("stats", help="print per-batch case statistics from a report")
    p.add_argument("report")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tokens", help="print the advisor token ledger from a report")
    p.add_argument("report")
    p.set_defaults(func=cmd_tokens)

    p = sub.add_parser("validate", help="check a model document")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("testbed", help="run the bundled buggy target")
    p.add_argument("protocol", choices=["mqtt", "modbus", "echo"])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--bugs", default="all", help="comma-separated bug ids, 'all' or 'none'")
    p.add_argument("--no-restart", action="store_true")
    p.add_argument("--restart-delay", type=float, default=0.5)
    p.add_argument("--bug-log")
    p.set_defaults(func=cmd_testbed)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workdir", default="modelfuzz-service")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
