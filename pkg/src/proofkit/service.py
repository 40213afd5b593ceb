"""HTTP API over the reward engine, judge harness, and audit store.

Request schemas are strict: unknown fields are rejected with a 400 so a
drifting trainer or UI fails loudly instead of being silently ignored.
Audit assignment is lease-based; a pending sample handed to one reviewer
stays invisible to others until the lease expires or the score lands.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass

from fastapi import Depends, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .audit import (
    AlreadyScoredError,
    AuditStore,
    NoScoredSamplesError,
    OutOfRangeScoreError,
    UnknownSampleError,
    calibration_report,
)
from .gateway import ChatGateway, GatewayError
from .judge import UnparseableVerdictError, aggregate, judge_proof
from .reward import VerifierConfig, score_rollout_group

logger = logging.getLogger("proofkit.service")

DEFAULT_GROUP_SIZE = 16
DEFAULT_LEASE_SECONDS = 300.0


@dataclass(frozen=True)
class ServiceConfig:
    verifier_model: str
    group_size: int = DEFAULT_GROUP_SIZE
    max_group_size: int = 64
    max_verifier_in_flight: int = 8
    lease_seconds: float = DEFAULT_LEASE_SECONDS
    bearer_token: str | None = None
    cors_origins: tuple[str, ...] = ("*",)
    judge_max_tokens: int = 2048

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be at least 1")
        if self.max_group_size < 1:
            raise ValueError("max_group_size must be at least 1")
        if self.lease_seconds <= 0:
            raise ValueError("lease_seconds must be positive")


class LeaseManager:
    """In-memory sample leases; one active lease per sample and at most
    one per reviewer, expiring after the configured idle time."""

    def __init__(self, ttl_seconds: float, clock=time.monotonic):
        self._ttl = ttl_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._leases: dict[str, tuple[str, float]] = {}

    def _prune(self, now: float):
        expired = [sid for sid, (_, expiry) in self._leases.items() if expiry <= now]
        for sid in expired:
            del self._leases[sid]

    def acquire(self, reviewer: str, pending_ids: list[str]) -> str | None:
        """Renew the reviewer's existing lease or grant the oldest
        unleased pending sample; None when everything is taken."""
        now = self._clock()
        with self._lock:
            self._prune(now)
            for sid, (holder, _) in self._leases.items():
                if holder == reviewer and sid in pending_ids:
                    self._leases[sid] = (reviewer, now + self._ttl)
                    return sid
            for sid in pending_ids:
                if sid not in self._leases:
                    self._leases[sid] = (reviewer, now + self._ttl)
                    return sid
        return None

    def release(self, sample_id: str):
        with self._lock:
            self._leases.pop(sample_id, None)

    def active(self) -> dict[str, str]:
        now = self._clock()
        with self._lock:
            self._prune(now)
            return {sid: holder for sid, (holder, _) in self._leases.items()}


# --- request schemas ------------------------------------------------------------


class _HttpError(Exception):
    """Carries a status code and JSON detail out of a route handler."""

    def __init__(self, status: int, detail):
        self.status = status
        self.detail = detail


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RewardGroupRequest(StrictModel):
    question: str = Field(min_length=1)
    responses: list[str] = Field(min_length=1)


class JudgeRequest(StrictModel):
    question: str = Field(min_length=1)
    proof: str = Field(min_length=1)
    judges: list[str] = Field(min_length=1)


class AuditScoreRequest(StrictModel):
    sample_id: str
    reviewer: str = Field(min_length=1)
    scores: list[float] = Field(min_length=4, max_length=4)
    replace: bool = False


def create_app(config: ServiceConfig, gateway: ChatGateway, store: AuditStore) -> FastAPI:
    app = FastAPI(title="proofkit", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    leases = LeaseManager(config.lease_seconds)
    app.state.leases = leases

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.monotonic()
        response = await call_next(request)
        logger.info(
            "request",
            extra={
                "method": request.method,
                "path": request.url.path,
                "status": response.status_code,
                "duration_ms": round((time.monotonic() - started) * 1000, 3),
            },
        )
        return response

    def check_auth(request: Request):
        if config.bearer_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.bearer_token}":
            raise _HttpError(401, "missing or invalid bearer token")

    @app.exception_handler(_HttpError)
    async def http_error_handler(request: Request, exc: _HttpError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/reward/group")
    def reward_group(body: RewardGroupRequest, _=Depends(check_auth)):
        if len(body.responses) > config.max_group_size:
            raise _HttpError(400, f"at most {config.max_group_size} responses per group")
        verifier = VerifierConfig(
            model=config.verifier_model, max_in_flight=config.max_verifier_in_flight
        )
        group, scores = score_rollout_group(
            "request", body.question, body.responses, gateway, verifier
        )
        if all(s.failed for s in scores):
            raise _HttpError(503, "verifier unreachable: every response failed to score")
        breakdowns = []
        for s in scores:
            entry = {"reward": s.reward, "failed": s.failed, "failure_detail": s.failure_detail}
            if s.breakdown is not None:
                b = s.breakdown
                entry.update(
                    insight=b.insight,
                    validity=b.validity,
                    completeness=b.completeness,
                    clarity=b.clarity,
                    raw_total=b.raw_total,
                    snapped_total=b.snapped_total,
                    extraction_mode=b.extraction_mode.value,
                    verifier_literal_total=b.verifier_literal_total,
                    literal_mismatch=b.literal_mismatch,
                )
            breakdowns.append(entry)
        return {
            "rewards": list(group.rewards),
            "advantages": list(group.advantages),
            "breakdowns": breakdowns,
        }

    @app.post("/v1/judge")
    def judge(body: JudgeRequest, _=Depends(check_auth)):
        verdicts = []
        failures = []
        for model in body.judges:
            try:
                verdicts.append(
                    judge_proof(
                        body.question,
                        body.proof,
                        model,
                        gateway,
                        max_tokens=config.judge_max_tokens,
                    )
                )
            except (UnparseableVerdictError, GatewayError) as exc:
                failures.append({"judge": model, "error": str(exc)})
        if not verdicts:
            raise _HttpError(502, {"message": "all judges failed", "failures": failures})
        agg = aggregate(verdicts)
        return {
            "mean_total": agg.mean_total,
            "mean_validity": agg.mean_validity,
            "mean_completeness": agg.mean_completeness,
            "mean_clarity": agg.mean_clarity,
            "partial": bool(failures),
            "failures": failures,
            "verdicts": [
                {
                    "judge": v.judge_id,
                    "validity": v.validity,
                    "completeness": v.completeness,
                    "clarity": v.clarity,
                    "total": v.total,
                    "literal_total": v.literal_total,
                    "literal_mismatch": v.literal_mismatch,
                }
                for v in verdicts
            ],
        }

    @app.get("/v1/audit/next")
    def audit_next(reviewer: str = Query(min_length=1), _=Depends(check_auth)):
        pending = [s.sample_id for s in store.pending()]
        sample_id = leases.acquire(reviewer, pending)
        if sample_id is None:
            raise _HttpError(404, "no pending samples available")
        sample = store.get(sample_id)
        # The reviewer scores blind: the verifier's numbers stay out of
        # the assignment payload.
        return {
            "sample_id": sample.sample_id,
            "item_id": sample.item_id,
            "model_family": sample.model_family,
            "benchmark": sample.benchmark,
            "question": sample.question,
            "response": sample.response,
        }

    @app.post("/v1/audit/score")
    def audit_score(body: AuditScoreRequest, _=Depends(check_auth)):
        try:
            sample = store.ingest_human_score(
                body.sample_id, body.reviewer, body.scores, replace_existing=body.replace
            )
        except UnknownSampleError:
            raise _HttpError(404, f"unknown sample {body.sample_id}")
        except AlreadyScoredError as exc:
            raise _HttpError(409, str(exc))
        except OutOfRangeScoreError as exc:
            raise _HttpError(400, str(exc))
        leases.release(body.sample_id)
        return {
            "sample_id": sample.sample_id,
            "status": sample.status.value,
            "human_total": sample.human_total,
        }

    @app.get("/v1/audit/report")
    def audit_report(_=Depends(check_auth)):
        try:
            report = calibration_report(store)
        except NoScoredSamplesError:
            return {"rows": [], "total_scored": 0, "overall_correlation": None}
        return report.as_dict()

    return app


class ThreadedServer:
    """Run an app on a loopback port in a background thread.

    Used by tests, demos, and the audit-UI end-to-end harness; the CLI
    `serve` command runs uvicorn in the foreground instead.
    """

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        import uvicorn

        self._config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread: threading.Thread | None = None

    def start(self, timeout: float = 10.0) -> ThreadedServer:
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("service did not start in time")
            time.sleep(0.01)
        return self

    @property
    def url(self) -> str:
        servers = self._server.servers
        host, port = servers[0].sockets[0].getsockname()[:2]
        return f"http://{host}:{port}"

    def stop(self):
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
