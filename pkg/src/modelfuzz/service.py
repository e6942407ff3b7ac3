"""HTTP API over the fuzzing core.

Campaigns run in background threads; each gets its own output directory
under the service's working directory.  Model validation and sequence
generation are synchronous.
"""

from __future__ import annotations

import threading
import time
import uuid
from pathlib import Path
from typing import Any, Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .codecs import PayloadGenerator
from .config import CampaignConfig
from .harness import (
    CaseStore,
    ConfigurationError,
    CorruptRecordError,
    Endpoint,
    TimeoutPolicy,
    UnknownCaseError,
    replay_case,
)
from .model import ModelFormatError, StateModel, validate_model
from .orchestrator import CASES_FILE, CampaignReport, run_campaign
from .protocols import PROFILES
from .seqgen import InvalidModelError, batch_stats, generate_batch

MAX_SEQUENCES_PER_REQUEST = 100_000


class Health(BaseModel):
    status: str = "ok"
    version: str = __version__


class ProtocolInfo(BaseModel):
    name: str
    candidates: list[str]
    initial_state: str
    terminal_state: Optional[str]
    default_select: int


class Violation(BaseModel):
    rule: str
    message: str


class ValidateRequest(BaseModel):
    model: dict[str, Any]


class ValidateResponse(BaseModel):
    ok: bool
    violations: list[Violation]


class SequenceRequest(BaseModel):
    model: dict[str, Any]
    n: int = Field(1, ge=1, le=MAX_SEQUENCES_PER_REQUEST)
    seed: int = 0
    # include hex wire bytes (with the default mutation settings)
    encode: bool = False


class SequenceItem(BaseModel):
    id: int
    seed: int
    states: list[str]
    messages: Optional[list[str]] = None


class BatchStatsModel(BaseModel):
    total_cases: int
    unique_cases: int
    avg_length: float


class SequenceResponse(BaseModel):
    sequences: list[SequenceItem]
    stats: Optional[BatchStatsModel] = None


class CampaignRequest(BaseModel):
    config: CampaignConfig


class CampaignStatus(BaseModel):
    id: str
    state: Literal["running", "finished", "failed", "cancelled"]
    protocol: str
    output_dir: str
    batches_done: int = 0
    crashes: int = 0
    stop_reason: Optional[str] = None
    error: Optional[str] = None
    submitted_at: float


class ReplayRequest(BaseModel):
    case_id: int
    endpoint: str
    campaign_id: Optional[str] = None
    store: Optional[str] = None
    read_s: float = Field(0.2, gt=0)
    connect_s: float = Field(1.0, gt=0)
    probe_retries: int = Field(3, ge=0)
    probe_backoff_s: float = Field(0.25, ge=0)


class ReplayResponse(BaseModel):
    case_id: int
    crashed: bool
    classes: list[str]
    responses: list[Optional[str]]


class _Job:
    def __init__(self, job_id: str, config: CampaignConfig):
        self.id = job_id
        self.config = config
        self.cancel = threading.Event()
        self.state = "running"
        self.batches_done = 0
        self.crashes = 0
        self.report: CampaignReport | None = None
        self.error: str | None = None
        self.submitted_at = time.time()
        self.thread: threading.Thread | None = None

    def status(self) -> CampaignStatus:
        return CampaignStatus(
            id=self.id,
            state=self.state,
            protocol=self.config.protocol,
            output_dir=self.config.output_dir,
            batches_done=self.batches_done,
            crashes=self.crashes,
            stop_reason=self.report.stop_reason if self.report else None,
            error=self.error,
            submitted_at=self.submitted_at,
        )

    def run(self) -> None:
        def progress(record) -> None:
            self.batches_done += 1
            self.crashes += sum(c.counts for c in record.crashes)

        try:
            self.report = run_campaign(self.config, cancel=self.cancel, on_batch=progress)
            self.state = "cancelled" if self.report.stop_reason == "cancelled" else "finished"
        except Exception as exc:  # reported through the status endpoint
            self.error = f"{type(exc).__name__}: {exc}"
            self.state = "failed"


def create_app(workdir: str | Path = "modelfuzz-service") -> FastAPI:
    workdir = Path(workdir)
    jobs: dict[str, _Job] = {}
    lock = threading.Lock()
    app = FastAPI(title="modelfuzz", version=__version__)

    def job_or_404(job_id: str) -> _Job:
        with lock:
            job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown campaign {job_id!r}")
        return job

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health()

    @app.get("/protocols", response_model=list[ProtocolInfo])
    def protocols() -> list[ProtocolInfo]:
        return [
            ProtocolInfo(name=p.name, candidates=list(p.candidates), initial_state=p.initial_state,
                         terminal_state=p.terminal_state, default_select=p.default_select)
            for p in PROFILES.values()
        ]

    @app.post("/models/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        try:
            model = StateModel.from_document(req.model)
        except ModelFormatError as exc:
            return ValidateResponse(ok=False, violations=[Violation(rule="format", message=str(exc))])
        report = validate_model(model)
        return ValidateResponse(ok=report.ok, violations=[Violation(rule=r, message=m) for r, m in report.violations])

    @app.post("/sequences", response_model=SequenceResponse)
    def sequences(req: SequenceRequest) -> SequenceResponse:
        try:
            model = StateModel.from_document(req.model)
            batch = generate_batch(model, req.n, req.seed)
        except (ModelFormatError, InvalidModelError) as exc:
            raise HTTPException(422, str(exc)) from exc
        if not req.encode:
            return SequenceResponse(sequences=[SequenceItem(**s.to_dict()) for s in batch])
        gen = PayloadGenerator(model.protocol)
        encoded = [gen.encode_sequence(s) for s in batch]
        stats = batch_stats(batch, [sum(len(m.bytes) for m in msgs) for msgs in encoded])
        return SequenceResponse(
            sequences=[
                SequenceItem(**s.to_dict(), messages=[m.bytes.hex() for m in msgs]) for s, msgs in zip(batch, encoded)
            ],
            stats=BatchStatsModel(**stats.to_dict()),
        )

    @app.post("/campaigns", response_model=CampaignStatus, status_code=202)
    def start_campaign(req: CampaignRequest) -> CampaignStatus:
        job_id = uuid.uuid4().hex[:12]
        config = req.config.model_copy(update={"output_dir": str(workdir / job_id)})
        try:
            config.parsed_endpoint().resolve()
        except ConfigurationError as exc:
            raise HTTPException(422, str(exc)) from exc
        job = _Job(job_id, config)
        with lock:
            jobs[job_id] = job
        job.thread = threading.Thread(target=job.run, name=f"campaign-{job_id}", daemon=True)
        job.thread.start()
        return job.status()

    @app.get("/campaigns", response_model=list[CampaignStatus])
    def list_campaigns() -> list[CampaignStatus]:
        with lock:
            return [j.status() for j in jobs.values()]

    @app.get("/campaigns/{job_id}", response_model=CampaignStatus)
    def campaign_status(job_id: str) -> CampaignStatus:
        return job_or_404(job_id).status()

    @app.get("/campaigns/{job_id}/report")
    def campaign_report(job_id: str) -> dict:
        job = job_or_404(job_id)
        if job.report is None:
            raise HTTPException(409, f"campaign {job_id} has no report yet (state: {job.state})")
        return job.report.to_dict()

    @app.delete("/campaigns/{job_id}", response_model=CampaignStatus)
    def cancel_campaign(job_id: str) -> CampaignStatus:
        job = job_or_404(job_id)
        job.cancel.set()
        return job.status()

    @app.post("/replay", response_model=ReplayResponse)
    def replay(req: ReplayRequest) -> ReplayResponse:
        if req.campaign_id is not None:
            path = Path(job_or_404(req.campaign_id).config.output_dir) / CASES_FILE
        elif req.store is not None:
            path = Path(req.store)
        else:
            raise HTTPException(422, "give either campaign_id or store")
        try:
            endpoint = Endpoint.parse(req.endpoint)
            endpoint.resolve()
            policy = TimeoutPolicy(req.connect_s, req.read_s, req.probe_retries, req.probe_backoff_s)
            outcome = replay_case(CaseStore(path), req.case_id, endpoint, policy)
        except ConfigurationError as exc:
            raise HTTPException(422, str(exc)) from exc
        except UnknownCaseError:
            raise HTTPException(404, f"unknown case id {req.case_id}") from None
        except CorruptRecordError as exc:
            raise HTTPException(500, str(exc)) from exc
        return ReplayResponse(
            case_id=req.case_id,
            crashed=outcome.crashed,
            classes=[o.cls for _, o in outcome.results],
            responses=[o.response.hex() if o.response is not None else None for _, o in outcome.results],
        )

    app.state.jobs = jobs
    return app
