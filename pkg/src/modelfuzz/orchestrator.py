"""The feedback-guided fuzzing loop.

One campaign: build the initial model with the advisor, then per batch
generate sequences, encode and mutate them, run them against the target,
fold the outcomes into failure statistics and let the advisor adjust the
model (or randomly restart from the initial snapshot) before the next batch.
"""

from __future__ import annotations

import json
import logging
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

from .advisor import (
    Advisor,
    AdvisorDecision,
    AdvisorError,
    BudgetExceeded,
    HeuristicAdvisor,
    HeuristicThresholds,
    LLMAdvisor,
    OpenAIChatBackend,
    ScriptedBackend,
    SelectionResult,
    TokenLedger,
)
from .codecs import FUNCTION_CODES, PACKET_TYPES, PayloadGenerator
from .config import CampaignConfig
from .feedback import FailureStats, accumulate, summarize
from .harness import (
    REPLAY_SETTLE_S,
    CaseStore,
    ConfigurationError,
    SequenceOutcome,
    StoredCase,
    TargetMonitor,
    probe_liveness,
    run_sequence,
)
from .model import AdjustmentError, StateModel, apply_adjustment, reset_to_initial, validate_model
from .protocols import get_profile
from .seeding import derive_seed
from .seqgen import batch_stats, generate_batch, write_jsonl

log = logging.getLogger(__name__)

# seed streams, kept apart so e.g. restart draws never shift sequence seeds
_BATCH_STREAM = 1
_RESTART_STREAM = 2

# report keys that vary between otherwise identical runs
TIMING_KEYS = frozenset({"started_at", "finished_at", "duration_s", "wall_time_s", "timestamp"})

REPORT_FILE = "report.json"
CASES_FILE = "cases.jsonl"
SEQUENCES_FILE = "sequences.jsonl"


@dataclass
class CrashRecord:
    sequence_id: int
    case_id: int
    batch: int
    states: list[str]
    # True: serial replay crashed again; False: replay did not crash; None: not checked
    confirmed: bool | None

    @property
    def counts(self) -> bool:
        return self.confirmed is not False


@dataclass
class BatchRecord:
    index: int
    model: dict
    batch_stats: dict
    failure_stats: dict
    summary: str
    attempted: int
    aborted: int
    crashes: list[CrashRecord] = field(default_factory=list)
    restart: bool = False
    decision: dict | None = None
    reproposed: bool = False
    duration_s: float = 0.0


@dataclass
class CampaignReport:
    protocol: str
    seed: int
    config: dict
    construction: dict
    initial_model: dict
    batches: list[BatchRecord] = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    stop_reason: str = "max_batches"
    started_at: float = 0.0
    finished_at: float = 0.0
    duration_s: float = 0.0

    @property
    def crashes(self) -> list[CrashRecord]:
        return [c for b in self.batches for c in b.crashes if c.counts]

    @property
    def restarts(self) -> int:
        return sum(b.restart for b in self.batches)

    @property
    def crash_found(self) -> bool:
        return bool(self.crashes)

    def to_dict(self) -> dict:
        data = asdict(self)
        total = sum(b.batch_stats["total_cases"] for b in self.batches)
        data["totals"] = {
            "batches": len(self.batches),
            "total_cases": total,
            "attempted": sum(b.attempted for b in self.batches),
            "aborted": sum(b.aborted for b in self.batches),
            "restarts": self.restarts,
            "crashes": len(self.crashes),
        }
        data["crashes"] = [asdict(c) for c in self.crashes]
        return data

    def write(self, path: str | os.PathLike) -> None:
        write_json_atomic(path, self.to_dict())


def write_json_atomic(path: str | os.PathLike, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def strip_timing(value):
    """Drop wall-clock fields so two reports can be compared for equality."""
    if isinstance(value, dict):
        return {k: strip_timing(v) for k, v in value.items() if k not in TIMING_KEYS}
    if isinstance(value, list):
        return [strip_timing(v) for v in value]
    return value


def build_advisor(config: CampaignConfig) -> Advisor:
    settings = config.advisor
    if settings.backend == "heuristic":
        return HeuristicAdvisor(HeuristicThresholds(
            settings.delete_failure_rate, settings.delete_min_requests, settings.add_overall_rate))
    ledger = TokenLedger(settings.max_calls, settings.max_tokens)
    if settings.backend == "mock":
        if not settings.script:
            raise ConfigurationError("the mock advisor backend needs advisor.script")
        try:
            backend = ScriptedBackend.from_file(settings.script, ledger)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot load advisor script {settings.script}: {exc}") from exc
    else:
        try:
            backend = OpenAIChatBackend(
                model=settings.model,
                base_url=settings.base_url,
                api_key_env=settings.api_key_env,
                temperature=settings.temperature,
                max_completion_tokens=settings.max_completion_tokens,
                max_retries=settings.max_retries,
                ledger=ledger,
            )
        except AdvisorError as exc:
            raise ConfigurationError(str(exc)) from exc
    return LLMAdvisor(backend, settings.max_candidates)


def _encodable(protocol: str) -> Callable[[str], bool]:
    known = PACKET_TYPES if protocol == "mqtt" else FUNCTION_CODES
    return lambda state: state in known


def _group_ids(ids: list[int], gap: int) -> list[list[int]]:
    groups: list[list[int]] = []
    for i in sorted(ids):
        if groups and i - groups[-1][-1] <= gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _firewall(decision: AdvisorDecision, model: StateModel) -> AdvisorDecision:
    """Reject decisions that name states outside what the model allows."""
    kind = decision.kind.upper()
    if kind == "KEEP":
        return decision
    ok = (
        kind == "ADD" and decision.state in model.candidate_states and decision.state not in model.selected_states
    ) or (
        kind == "DELETE" and decision.state in model.selected_states and decision.state != model.initial_state
    )
    if ok:
        return decision
    return AdvisorDecision("KEEP", None, f"rejected {kind} {decision.state!r}: not applicable to the current model",
                           raw_reply=decision.raw_reply, source="firewall", reprompts=decision.reprompts)


class Campaign:
    """State for one run; use :func:`run_campaign` unless you need hooks."""

    def __init__(
        self,
        config: CampaignConfig,
        advisor: Advisor | None = None,
        cancel: threading.Event | None = None,
        on_batch: Callable[[BatchRecord], None] | None = None,
    ):
        self.config = config
        self.profile = get_profile(config.protocol)
        self.endpoint = config.parsed_endpoint()
        self.policy = config.timeouts.build()
        self.advisor = advisor or build_advisor(config)
        self.cancel = cancel or threading.Event()
        self.on_batch = on_batch
        self.generator = PayloadGenerator(
            config.protocol,
            config.mutation.build(),
            modbus_truncate_probability=config.modbus.truncate_probability,
            modbus_unit_id=config.modbus.unit_id,
        )
        self.out_dir = Path(config.output_dir)

    # model construction ------------------------------------------------

    def _construct(self) -> tuple[StateModel, dict]:
        prof = self.profile
        info: dict = {"advisor": self.advisor.name, "fallback": None}
        candidates = prof.candidates
        doc_path = self.config.advisor.documentation
        if doc_path:
            try:
                text = Path(doc_path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigurationError(f"cannot read documentation {doc_path}: {exc}") from exc
            try:
                candidates = self.advisor.augment_states(candidates, prof.name, text, _encodable(self.config.protocol))
            except (AdvisorError, BudgetExceeded) as exc:
                info["augment_error"] = str(exc)
        info["candidates"] = list(candidates)
        k = min(self.config.advisor.select_count or prof.default_select, len(candidates))
        fallback = HeuristicAdvisor()
        try:
            selection = self.advisor.select_states(candidates, k, prof.name)
        except (AdvisorError, BudgetExceeded) as exc:
            log.warning("state selection failed (%s); using the heuristic selection", exc)
            info["fallback"] = f"select_states: {exc}"
            selection = fallback.select_states(candidates, k, prof.name)
        info["selection"] = selection.to_dict()["states"]
        try:
            model = self.advisor.propose_model(selection, prof.name)
        except (AdvisorError, BudgetExceeded) as exc:
            log.warning("model proposal failed (%s); using the fixed topology", exc)
            info["fallback"] = (info["fallback"] + "; " if info["fallback"] else "") + f"propose_model: {exc}"
            model = fallback.propose_model(selection, prof.name)
        return model, info

    # one batch ---------------------------------------------------------

    def _run_batch(self, encoded, batch, deadline: float) -> tuple[list[SequenceOutcome | None], bool]:
        monitor = TargetMonitor(self.endpoint, self.policy, self.config.recovery_wait_s)
        stop = threading.Event()
        timed_out = threading.Event()
        wait = not self.config.stop_on_crash

        def work(i: int) -> SequenceOutcome | None:
            if stop.is_set() or self.cancel.is_set():
                return None
            if time.monotonic() > deadline:
                timed_out.set()
                return None
            if not monitor.gate():
                return None
            out = run_sequence(self.endpoint, encoded[i], self.policy, batch[i].id)
            if out.crashed:
                log.warning("target unreachable after sequence %d", batch[i].id)
                up = monitor.report_crash(wait_for_recovery=wait)
                if not wait or not up:
                    stop.set()
            return out

        with ThreadPoolExecutor(max_workers=self.config.workers, thread_name_prefix="seq") as pool:
            outcomes = list(pool.map(work, range(len(batch))))
        return outcomes, timed_out.is_set()

    def _confirm(self, cases: dict[int, StoredCase], suspects: list[int]) -> dict[int, bool | None]:
        """Replay suspects serially against a live target.

        Concurrent workers all see the same outage, and a target may only
        process the fatal bytes after the culprit's own probe succeeded.  So
        when no suspect of a crash group reproduces, the sequences that
        finished just before the group are replayed too, newest first.
        """
        if not self.config.confirm_crashes:
            return {sid: None for sid in suspects}
        result: dict[int, bool | None] = {}
        monitor = TargetMonitor(self.endpoint, self.policy, self.config.recovery_wait_s)
        window = 2 * self.config.workers

        def replay(sid: int) -> bool | None:
            if not monitor.wait_until_up(self.config.recovery_wait_s):
                log.warning("target did not come back; crash of sequence %d left unconfirmed", sid)
                return None
            return run_sequence(self.endpoint, cases[sid].encoded(), self.policy, sid, settle_s=REPLAY_SETTLE_S).crashed

        for group in _group_ids(suspects, window):
            for sid in group:
                result[sid] = replay(sid)
            if any(result[sid] is not False for sid in group):
                continue
            earlier = [i for i in sorted(cases, reverse=True) if group[0] - window <= i < group[-1] and i not in result]
            for sid in earlier:
                if replay(sid):
                    result[sid] = True
                    break
        # leave the target up for the next batch when it restarts itself
        if not self.config.stop_on_crash:
            monitor.wait_until_up(self.config.recovery_wait_s)
        return result

    # decisions ---------------------------------------------------------

    def _adjust(self, model: StateModel, summary, record: BatchRecord) -> tuple[StateModel, bool]:
        """Returns the next model and whether the advisor budget ran out."""
        try:
            decision = self.advisor.decide_adjustment(summary, model)
        except BudgetExceeded as exc:
            record.decision = AdvisorDecision("KEEP", None, f"budget exhausted: {exc}", source="budget").to_dict()
            return model, True
        except AdvisorError as exc:
            decision = AdvisorDecision("KEEP", None, f"advisor error: {exc}", source="fallback")
        decision = _firewall(decision, model)
        try:
            adjusted = apply_adjustment(model, decision)
        except AdjustmentError as exc:
            decision = AdvisorDecision("KEEP", None, f"adjustment rejected: {exc}", raw_reply=decision.raw_reply,
                                       source="fallback", reprompts=decision.reprompts)
            adjusted = model
        record.decision = decision.to_dict()
        if adjusted.selected_states == model.selected_states:
            return adjusted, False
        selection = SelectionResult(
            tuple((s, "") for s in adjusted.selected_states), adjusted.candidate_states, self.profile.name)
        try:
            proposed = self.advisor.propose_model(selection, self.profile.name)
        except BudgetExceeded:
            return adjusted, True
        except AdvisorError as exc:
            log.info("re-proposal failed (%s); keeping the adjusted transitions", exc)
            return adjusted, False
        if validate_model(proposed).ok and set(proposed.selected_states) == set(adjusted.selected_states):
            record.reproposed = True
            return proposed, False
        return adjusted, False

    # main loop ---------------------------------------------------------

    def run(self) -> CampaignReport:
        cfg = self.config
        self.endpoint.resolve()
        if not probe_liveness(self.endpoint, self.policy):
            raise ConfigurationError(f"target {self.endpoint} is not accepting connections")
        started = time.time()
        deadline = time.monotonic() + cfg.max_wall_time_s
        model, info = self._construct()
        snapshot = model
        report = CampaignReport(
            protocol=cfg.protocol,
            seed=cfg.seed,
            config=cfg.model_dump(),
            construction=info,
            initial_model=snapshot.to_document(),
            started_at=started,
        )
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in (CASES_FILE, SEQUENCES_FILE):
            (self.out_dir / name).unlink(missing_ok=True)
        store = CaseStore(self.out_dir / CASES_FILE)
        next_id = 0
        try:
            with open(self.out_dir / SEQUENCES_FILE, "w", encoding="utf-8") as seq_fh:
                for b in range(cfg.max_batches):
                    if self.cancel.is_set():
                        report.stop_reason = "cancelled"
                        break
                    if time.monotonic() > deadline:
                        report.stop_reason = "wall_time"
                        break
                    t0 = time.monotonic()
                    batch = generate_batch(model, cfg.batch_size, derive_seed(cfg.seed, _BATCH_STREAM, b), next_id)
                    next_id += len(batch)
                    encoded = [self.generator.encode_sequence(s) for s in batch]
                    write_jsonl(batch, seq_fh)
                    seq_fh.flush()
                    bstats = batch_stats(batch, [sum(len(m.bytes) for m in msgs) for msgs in encoded])

                    outcomes, timed_out = self._run_batch(encoded, batch, deadline)

                    cases: dict[int, StoredCase] = {}
                    for seq, msgs, out in zip(batch, encoded, outcomes):
                        if out is None:
                            continue
                        case = StoredCase(seq.id, seq.seed, list(seq.states), [m.bytes for m in msgs], out.summary())
                        cases[seq.id] = case
                        store.append(case)
                    store.sync()

                    suspects = [o.sequence_id for o in outcomes if o is not None and o.crashed]
                    confirmed = self._confirm(cases, suspects) if suspects else {}

                    stats = FailureStats.empty(model.selected_states)
                    for seq, out in zip(batch, outcomes):
                        if out is not None:
                            stats = accumulate(stats, seq, replace(out, crashed=seq.id in confirmed and confirmed[seq.id] is not False))
                    summary = summarize(stats) if stats.messages else None
                    attempted = sum(o is not None for o in outcomes)
                    record = BatchRecord(
                        index=b,
                        model=model.to_document(),
                        batch_stats=bstats.to_dict(),
                        failure_stats=stats.to_dict(),
                        summary=summary.text if summary else "",
                        attempted=attempted,
                        aborted=len(batch) - attempted,
                        crashes=[
                            CrashRecord(sid, sid, b, list(cases[sid].states), confirmed[sid]) for sid in sorted(confirmed)
                        ],
                    )
                    report.batches.append(record)
                    crash_now = any(c.counts for c in record.crashes)
                    log.info(
                        "batch %d: %d cases (%d unique), %d attempted, failure rate %.4f, %d crash(es)",
                        b, bstats.total_cases, bstats.unique_cases, attempted, stats.overall_failure_rate,
                        sum(c.counts for c in record.crashes),
                    )

                    stop_reason = None
                    if crash_now and cfg.stop_on_crash:
                        stop_reason = "crash"
                    elif self.cancel.is_set():
                        stop_reason = "cancelled"
                    elif timed_out or time.monotonic() > deadline:
                        stop_reason = "wall_time"
                    elif b == cfg.max_batches - 1:
                        stop_reason = "max_batches"

                    if stop_reason is None:
                        restart_draw = random.Random(derive_seed(cfg.seed, _RESTART_STREAM, b)).random()
                        if restart_draw < cfg.restart_probability:
                            model = reset_to_initial(model, snapshot)
                            record.restart = True
                        elif summary is not None:
                            model, exhausted = self._adjust(model, summary, record)
                            if exhausted:
                                stop_reason = "budget"
                    record.duration_s = time.monotonic() - t0
                    if self.on_batch is not None:
                        self.on_batch(record)
                    if stop_reason is not None:
                        report.stop_reason = stop_reason
                        break
        finally:
            store.close()
            report.ledger = self.advisor.ledger.to_dict()
            report.finished_at = time.time()
            report.duration_s = report.finished_at - started
            report.write(self.out_dir / REPORT_FILE)
        return report


def run_campaign(
    config: CampaignConfig,
    advisor: Advisor | None = None,
    cancel: threading.Event | None = None,
    on_batch: Callable[[BatchRecord], None] | None = None,
) -> CampaignReport:
    """Run one campaign and write its report, case store and corpus to ``config.output_dir``."""
    return Campaign(config, advisor, cancel, on_batch).run()


def check_target(config: CampaignConfig) -> bool:
    endpoint = config.parsed_endpoint()
    endpoint.resolve()
    return probe_liveness(endpoint, config.timeouts.build())


__all__ = [
    "BatchRecord",
    "Campaign",
    "CampaignReport",
    "CrashRecord",
    "build_advisor",
    "check_target",
    "run_campaign",
    "strip_timing",
    "write_json_atomic",
]
