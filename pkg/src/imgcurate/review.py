"""HTTP service driving the human-verification stage.

Hands candidate images to reviewers, records approve/reject verdicts with
the two-reviewer rule (third reviewer breaks ties by majority), and persists
every acknowledged verdict to the store before responding. Assignment leases
expire so abandoned work returns to the queue.
"""

from __future__ import annotations

import mimetypes
import os
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, Header, HTTPException, Query, Response
from pydantic import BaseModel

from .corpus import ReviewVerdict, Store, review_status


@dataclass(frozen=True)
class ReviewServiceConfig:
    reviewers: dict  # bearer token -> reviewer name
    lease_ttl_s: float = 600.0
    aesthetic_metric: str = "aesthetic"
    expose_scores: bool = True


class VerdictBody(BaseModel):
    record_id: str
    decision: str
    note: str = ""


@dataclass
class _Lease:
    record_id: str
    reviewer: str
    expires: float


@dataclass
class _State:
    leases: dict = field(default_factory=dict)  # (record_id, reviewer) -> _Lease
    lock: threading.Lock = field(default_factory=threading.Lock)


def _candidates(store: Store):
    out = []
    for rec in store.records():
        v = rec.stage_verdicts.get("aesthetic")
        if v is not None and v.status == "pass":
            out.append(rec)
    return out


def create_app(store: Store, image_root: str, cfg: ReviewServiceConfig) -> FastAPI:
    app = FastAPI(title="review-service")
    state = _State()

    def reviewer_from_token(token: str | None) -> str:
        if not token or token not in cfg.reviewers:
            raise HTTPException(status_code=401, detail="unknown reviewer token")
        return cfg.reviewers[token]

    def prune_leases(now: float):
        dead = [k for k, l in state.leases.items() if l.expires <= now]
        for k in dead:
            del state.leases[k]

    @app.get("/api/health")
    def health():
        return {"ok": True}

    @app.get("/api/assignment")
    def next_assignment(reviewer: str = Query(...)):
        name = reviewer_from_token(reviewer)
        now = time.monotonic()
        with state.lock:
            prune_leases(now)
            judged = set()
            pool = []
            for rec in _candidates(store):
                reviewers_seen = {v.reviewer_id for v in rec.review}
                if name in reviewers_seen:
                    continue
                if review_status(rec.review) in ("approved", "rejected"):
                    continue
                if (rec.id, name) in state.leases:
                    continue
                pool.append((len(rec.review), -rec.scores.get(cfg.aesthetic_metric, 0.0), rec.id, rec))
            if not pool:
                return Response(status_code=204)
            pool.sort(key=lambda t: t[:3])
            rec = pool[0][3]
            state.leases[(rec.id, name)] = _Lease(rec.id, name, now + cfg.lease_ttl_s)
        payload = {
            "record_id": rec.id,
            "image_url": f"/api/image/{rec.id}",
            "reviewer_id": name,
            "issued_at": time.time(),
        }
        if cfg.expose_scores:
            payload["scores"] = rec.scores
        return payload

    @app.post("/api/verdict")
    def submit_verdict(body: VerdictBody, x_reviewer_token: str | None = Header(default=None)):
        name = reviewer_from_token(x_reviewer_token)
        if body.decision not in ("approve", "reject"):
            raise HTTPException(status_code=422, detail="decision must be approve|reject")
        with state.lock:
            try:
                rec = store.get(body.record_id)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown record {body.record_id}")
            if any(v.reviewer_id == name for v in rec.review):
                raise HTTPException(
                    status_code=409, detail=f"{name} already judged {body.record_id}"
                )
            rec.review.append(
                ReviewVerdict(
                    record_id=body.record_id,
                    reviewer_id=name,
                    decision=body.decision,
                    note=body.note,
                    submitted_at=time.time(),
                )
            )
            store.upsert_record(rec)  # durable before ack
            state.leases.pop((body.record_id, name), None)
            status = review_status(rec.review)
        return {"status": status}

    @app.get("/api/progress")
    def progress():
        counts = {"pending": 0, "approved": 0, "rejected": 0, "conflicted": 0}
        throughput: dict[str, int] = {}
        total = 0
        for rec in _candidates(store):
            total += 1
            counts[review_status(rec.review)] += 1
            for v in rec.review:
                throughput[v.reviewer_id] = throughput.get(v.reviewer_id, 0) + 1
        return {"total": total, "counts": counts, "per_reviewer": throughput}

    @app.get("/api/image/{record_id}")
    def image(record_id: str):
        try:
            rec = store.get(record_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown record {record_id}")
        path = os.path.join(image_root, rec.path)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail=f"missing file for {record_id}")
        media_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        with open(path, "rb") as f:
            return Response(content=f.read(), media_type=media_type)

    return app


def serve(store: Store, image_root: str, cfg: ReviewServiceConfig, host: str, port: int):
    """Blocking uvicorn server around the review app."""
    import uvicorn

    app = create_app(store, image_root, cfg)
    uvicorn.run(app, host=host, port=port, log_level="warning")
