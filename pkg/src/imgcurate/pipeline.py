"""Four-stage selection funnel over a record store.

Stages: per-image cleaning checks, joint metric-percentile quality gating,
aesthetic-score gating, and the two-reviewer human verification gate. Each
stage persists its verdicts immediately, so a run is resumable; every stage
is a deterministic function of (store contents, config).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .corpus import Store, Verdict, review_status
from .imgproc import ImagePlane, decode_image, is_grayscale, laplacian_variance, to_luma
from .iqa import NiqeModel, niqe_score

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricChannel:
    metric: str
    direction: str  # "higher-better" | "lower-better"
    percentile_keep: float  # keep this top share, in (0, 100]

    def __post_init__(self):
        if self.direction not in ("higher-better", "lower-better"):
            raise ValueError(f"bad direction {self.direction!r}")
        if not 0.0 < self.percentile_keep <= 100.0:
            raise ValueError("percentile_keep must be in (0, 100]")


@dataclass(frozen=True)
class PipelineConfig:
    min_short_side: int = 512
    max_aspect_ratio: float = 3.0
    grayscale_tol: float = 2.0 / 255.0
    laplacian_min: float = 0.0
    metric_channels: tuple = (
        MetricChannel("maniqa", "higher-better", 50.0),
        MetricChannel("clipiqa", "higher-better", 50.0),
        MetricChannel("niqe", "lower-better", 50.0),
    )
    aesthetic_metric: str = "aesthetic"
    aesthetic_min_score: float = 0.0
    target_k: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.target_k < 1:
            raise ValueError("target_k must be >= 1")

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["metric_channels"] = [asdict(c) for c in self.metric_channels]
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        if "metric_channels" in obj:
            obj["metric_channels"] = tuple(
                MetricChannel(**c) for c in obj["metric_channels"]
            )
        return cls(**obj)

    def digest(self) -> str:
        text = json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def stage1_clean(img: ImagePlane, cfg: PipelineConfig) -> Verdict:
    """First-failure cleaning verdict: grayscale, size, aspect, sharpness."""
    if is_grayscale(img, cfg.grayscale_tol):
        return Verdict("reject", "grayscale", "clean")
    if min(img.width, img.height) < cfg.min_short_side:
        return Verdict("reject", "too_small", "clean")
    ratio = max(img.width, img.height) / min(img.width, img.height)
    if ratio > cfg.max_aspect_ratio:
        return Verdict("reject", "bad_aspect", "clean")
    if laplacian_variance(to_luma(img)) < cfg.laplacian_min:
        return Verdict("reject", "low_sharpness", "clean")
    return Verdict("pass", "", "clean")


def _survivors(store: Store, upto_stage: str) -> list:
    order = ["clean", "quality", "aesthetic"]
    need = order[: order.index(upto_stage)]
    out = []
    for rec in store.records():
        if all(
            s in rec.stage_verdicts and rec.stage_verdicts[s].status == "pass"
            for s in need
        ):
            out.append(rec)
    return out


def run_stage1(store: Store, cfg: PipelineConfig, image_root: str, workers: int = 1) -> dict:
    """Decode and clean-check every record; persists clean verdicts."""
    records = store.records()

    def check(rec):
        try:
            with open(os.path.join(image_root, rec.path), "rb") as f:
                img = decode_image(f.read())
        except Exception as exc:
            logger.warning("decode failed for %s: %s", rec.id, exc)
            return rec.id, Verdict("reject", "decode_failed", "clean")
        return rec.id, stage1_clean(img, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(check, records))
    else:
        results = dict(check(r) for r in records)
    for rid in sorted(results):
        rec = store.get(rid)
        rec.stage_verdicts["clean"] = results[rid]
        store.upsert_record(rec)
    return _count_results(results)


def stage2_quality(store: Store, cfg: PipelineConfig) -> dict:
    """Joint percentile gate: a record passes iff it clears every channel.

    Cutoffs are direction-aware percentiles over the stage-1 survivors; ties
    at a cutoff are kept.
    """
    survivors = _survivors(store, "quality")
    results = {}
    if not survivors:
        return _count_results(results)
    cutoffs = {}
    for ch in cfg.metric_channels:
        missing = [r.id for r in survivors if ch.metric not in r.scores]
        if missing:
            raise ValueError(f"missing {ch.metric} scores for records: {missing[:10]}")
        vals = np.array([r.scores[ch.metric] for r in survivors])
        if ch.direction == "higher-better":
            cutoffs[ch.metric] = float(np.percentile(vals, 100.0 - ch.percentile_keep))
        else:
            cutoffs[ch.metric] = float(np.percentile(vals, ch.percentile_keep))
    for rec in survivors:
        verdict = Verdict("pass", "", "quality")
        for ch in cfg.metric_channels:
            v = rec.scores[ch.metric]
            ok = v >= cutoffs[ch.metric] if ch.direction == "higher-better" else v <= cutoffs[ch.metric]
            if not ok:
                verdict = Verdict("reject", f"below_cutoff:{ch.metric}", "quality")
                break
        results[rec.id] = verdict
    for rid in sorted(results):
        rec = store.get(rid)
        rec.stage_verdicts["quality"] = results[rid]
        store.upsert_record(rec)
    return _count_results(results)


def stage3_aesthetic(store: Store, cfg: PipelineConfig) -> dict:
    """Threshold gate on the aesthetic channel score."""
    survivors = _survivors(store, "aesthetic")
    results = {}
    for rec in survivors:
        if cfg.aesthetic_metric not in rec.scores:
            raise ValueError(f"record {rec.id} missing {cfg.aesthetic_metric} score")
        ok = rec.scores[cfg.aesthetic_metric] >= cfg.aesthetic_min_score
        results[rec.id] = (
            Verdict("pass", "", "aesthetic")
            if ok
            else Verdict("reject", "below_min_score", "aesthetic")
        )
    for rid in sorted(results):
        rec = store.get(rid)
        rec.stage_verdicts["aesthetic"] = results[rid]
        store.upsert_record(rec)
    return _count_results(results)


def stage4_finalize(store: Store, cfg: PipelineConfig) -> tuple[list[str], dict]:
    """Apply the two-reviewer rule and truncate to target_k by aesthetic score.

    Returns (selected ids, status counts). Records with too few reviews stay
    pending; conflicted records need a tie-breaking majority.
    """
    candidates = [r for r in store.records() if _passed(r, "aesthetic")]
    statuses = {}
    for rec in candidates:
        statuses[rec.id] = review_status(rec.review)
    approved = [r for r in candidates if statuses[r.id] == "approved"]
    approved.sort(key=lambda r: (-r.scores.get(cfg.aesthetic_metric, 0.0), r.id))
    selected = [r.id for r in approved[: cfg.target_k]]
    selected_set = set(selected)
    for rec in candidates:
        if statuses[rec.id] in ("approved", "rejected"):
            status = "pass" if rec.id in selected_set else "reject"
            reason = "" if status == "pass" else (
                "review_rejected" if statuses[rec.id] == "rejected" else "over_quota"
            )
            rec.stage_verdicts["human"] = Verdict(status, reason, "human")
            store.upsert_record(rec)
    counts = {"pending": 0, "approved": 0, "rejected": 0, "conflicted": 0}
    for s in statuses.values():
        counts[s] += 1
    return selected, counts


def _passed(rec, stage: str) -> bool:
    v = rec.stage_verdicts.get(stage)
    return v is not None and v.status == "pass"


def _count_results(results: dict) -> dict:
    out = {"input": len(results), "passed": 0, "rejected": 0, "reject_reasons": {}}
    for v in results.values():
        if v.status == "pass":
            out["passed"] += 1
        else:
            out["rejected"] += 1
            out["reject_reasons"][v.reason] = out["reject_reasons"].get(v.reason, 0) + 1
    return out


def score_niqe(
    store: Store, model: NiqeModel, image_root: str, workers: int = 1, metric: str = "niqe"
) -> int:
    """Compute the native blind-quality score for every record; persists scores."""
    records = store.records()

    def score(rec):
        with open(os.path.join(image_root, rec.path), "rb") as f:
            img = decode_image(f.read())
        return rec.id, niqe_score(img, model)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(score, records))
    else:
        results = dict(score(r) for r in records)
    for rid in sorted(results):
        rec = store.get(rid)
        rec.scores[metric] = float(results[rid])
        store.upsert_record(rec)
    return len(results)


def score_laplacian(store: Store, image_root: str, workers: int = 1, metric: str = "laplacian") -> int:
    """Persist the Laplacian-variance sharpness score for every record."""
    records = store.records()

    def score(rec):
        with open(os.path.join(image_root, rec.path), "rb") as f:
            img = decode_image(f.read())
        return rec.id, laplacian_variance(to_luma(img))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(score, records))
    else:
        results = dict(score(r) for r in records)
    for rid in sorted(results):
        rec = store.get(rid)
        rec.scores[metric] = float(results[rid])
        store.upsert_record(rec)
    return len(results)


def calibrate_laplacian_min(images: list[ImagePlane], percentile: float = 20.0) -> float:
    """Sharpness floor: the given percentile of a clean set's Laplacian variance."""
    vals = [laplacian_variance(to_luma(img)) for img in images]
    return float(np.percentile(vals, percentile))


def run_pipeline(
    store: Store,
    cfg: PipelineConfig,
    stages: list[int],
    image_root: str | None = None,
    workers: int | None = None,
) -> dict:
    """Run the requested stages in order; returns the funnel report."""
    workers = workers or cfg.workers
    t0 = time.monotonic()
    report = {
        "config_digest": cfg.digest(),
        "stages": {},
        "selected": [],
        "review_counts": None,
    }
    for stage in sorted(stages):
        if stage == 1:
            if image_root is None:
                raise ValueError("stage 1 needs an image root")
            report["stages"]["clean"] = run_stage1(store, cfg, image_root, workers)
        elif stage == 2:
            report["stages"]["quality"] = stage2_quality(store, cfg)
        elif stage == 3:
            report["stages"]["aesthetic"] = stage3_aesthetic(store, cfg)
        elif stage == 4:
            selected, counts = stage4_finalize(store, cfg)
            report["selected"] = selected
            report["review_counts"] = counts
        else:
            raise ValueError(f"unknown stage {stage}")
    report["wall_time_s"] = time.monotonic() - t0
    return report
