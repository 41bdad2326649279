"""HTTP interface to the tracing server.

JSON bodies, lowercase hex for binary values, ISO-8601 dates, and errors
shaped as {code, message, retry_after?}. The server keeps no record of
client addresses; deployments that need transport anonymity are expected
to sit behind an anonymizing proxy.
"""

from __future__ import annotations

import datetime as dt
from typing import Optional

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import psi, tcn
from .backend import (
    MEDICAL,
    AuthError,
    NotFound,
    RateLimited,
    ReportRejected,
    TracingServer,
)


class TanRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    credential: Optional[str] = None


class ReportKeyEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")
    date: str
    key_hex: str


class ReportRequest(BaseModel):
    # extra="forbid" is load-bearing: payloads carrying raw TCNs or
    # ceTCNs instead of (or besides) keys must fail at the door.
    model_config = ConfigDict(extra="forbid")
    tan: str
    keys: list[ReportKeyEntry]


class Round1Request(BaseModel):
    model_config = ConfigDict(extra="forbid")
    client_token: str
    batch_id: int
    elements: list[str]


class RefineRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    session_id: str
    blocks: list[list[str]]


class ProofResponseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    challenge_id: str
    macs: list[str]


def _hex_to_bytes(value: str, what: str) -> bytes:
    try:
        return bytes.fromhex(value)
    except ValueError:
        raise psi.ProtocolError(f"{what} is not valid hex")


def _auth_payload(auth) -> dict:
    return {
        "tan": auth.tan,
        "kind": auth.kind,
        "issued_at": auth.issued_at.isoformat(),
        "validity_s": auth.validity_s,
    }


def create_app(server: Optional[TracingServer] = None) -> FastAPI:
    app = FastAPI(title="contact tracing server", docs_url=None, redoc_url=None)
    app.state.server = server if server is not None else TracingServer()

    def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message, **extra})

    @app.exception_handler(AuthError)
    async def _on_auth(_, exc):
        return _error(401, "unauthorized", str(exc))

    @app.exception_handler(RateLimited)
    async def _on_rate(_, exc):
        return _error(429, "rate_limited", str(exc), retry_after=exc.retry_after_s)

    @app.exception_handler(ReportRejected)
    async def _on_report(_, exc):
        return _error(400, "report_rejected", str(exc))

    @app.exception_handler(psi.QueryTooSmall)
    async def _on_small(_, exc):
        return _error(400, "query_too_small", str(exc))

    @app.exception_handler(psi.ProtocolError)
    async def _on_protocol(_, exc):
        return _error(400, "protocol_error", str(exc))

    @app.exception_handler(NotFound)
    async def _on_missing(_, exc):
        return _error(404, "not_found", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _on_invalid(_, exc):
        detail = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        return _error(400, "invalid_request", detail)

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/tan")
    def issue_tan(body: TanRequest):
        if body.kind != MEDICAL:
            # Second-order authorizations exist, but only the proof
            # endpoints may mint them.
            raise AuthError("this endpoint issues MEDICAL authorizations only")
        auth = app.state.server.issue_tan(body.kind, body.credential)
        return _auth_payload(auth)

    @app.post("/v1/report")
    def submit_report(body: ReportRequest):
        keys = []
        for entry in body.keys:
            try:
                date = dt.date.fromisoformat(entry.date)
                data = bytes.fromhex(entry.key_hex)
                keys.append(tcn.DailyKey(data=data, date=date))
            except ValueError as exc:
                raise ReportRejected(f"malformed key entry: {exc}")
        count = app.state.server.accept_report(body.tan, keys)
        return {"verified_ce_tcns": count}

    @app.get("/v1/batches")
    def batches(since: int = 0, mode: str = "direct"):
        if mode not in ("direct", "psi"):
            raise ReportRejected("mode must be direct or psi")
        out = []
        for batch in app.state.server.release_batches(since):
            summary = {"batch_id": batch.batch_id, "sealed_at": batch.sealed_at.isoformat()}
            if mode == "direct":
                summary["entries"] = [
                    {"ce_tcn": ce.hex(), "order": order} for ce, order in batch.entries
                ]
            else:
                summary["filter"] = batch.filter.encode().hex()
                summary["filter_second_order"] = batch.filter_second_order.encode().hex()
            out.append(summary)
        return {"batches": out}

    @app.post("/v1/psi/round1")
    def psi_round1(body: Round1Request):
        elements = [_hex_to_bytes(e, "element") for e in body.elements]
        session_id, echo, batch = app.state.server.psi_round1(
            body.client_token, body.batch_id, elements
        )
        return {
            "session_id": session_id,
            "elements": [e.hex() for e in echo],
            "filter": batch.filter.encode().hex(),
        }

    @app.post("/v1/psi/refine")
    def psi_refine(body: RefineRequest):
        blocks = [[_hex_to_bytes(e, "element") for e in block] for block in body.blocks]
        echo = app.state.server.psi_refine(body.session_id, blocks)
        return {"blocks": [[e.hex() for e in block] for block in echo]}

    @app.post("/v1/proof/challenge")
    def proof_challenge():
        challenge_id, nonce = app.state.server.proof_challenge()
        return {"challenge_id": challenge_id, "nonce": nonce.hex()}

    @app.post("/v1/proof/response")
    def proof_response(body: ProofResponseRequest):
        macs = [_hex_to_bytes(m, "mac") for m in body.macs]
        auth = app.state.server.proof_response(body.challenge_id, macs)
        return _auth_payload(auth)

    return app
