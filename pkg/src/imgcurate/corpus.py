"""Persistent image-record store and manifest import/export.

The store is a directory holding a JSON-Lines record log: append-friendly,
diffable, compacted on close. Records are content-addressed by a truncated
SHA-256 of the raw image bytes, so duplicate bytes collapse to one record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field, asdict

from . import __version__
from .imgproc import decode_image

logger = logging.getLogger(__name__)

STORE_FILE = "records.jsonl"
MANIFEST_VERSION = "1"
STAGE_NAMES = ("clean", "quality", "aesthetic", "human")

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".webp"}


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class Verdict:
    status: str  # "pass" | "reject"
    reason: str = ""
    stage: str = ""

    def __post_init__(self):
        if self.status not in ("pass", "reject"):
            raise ValueError(f"bad verdict status {self.status!r}")
        if self.status == "reject" and not self.reason:
            raise ValueError("reject verdicts need a reason code")


@dataclass(frozen=True)
class ReviewVerdict:
    record_id: str
    reviewer_id: str
    decision: str  # "approve" | "reject"
    note: str = ""
    submitted_at: float = 0.0

    def __post_init__(self):
        if self.decision not in ("approve", "reject"):
            raise ValueError(f"bad review decision {self.decision!r}")


@dataclass
class ImageRecord:
    id: str
    path: str
    width: int
    height: int
    caption: str | None = None
    scores: dict = field(default_factory=dict)
    stage_verdicts: dict = field(default_factory=dict)  # stage -> Verdict
    review: list = field(default_factory=list)  # list[ReviewVerdict]

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"record {self.id}: non-positive dimensions")
        bad = set(self.stage_verdicts) - set(STAGE_NAMES)
        if bad:
            raise ValueError(f"record {self.id}: unknown stages {sorted(bad)}")

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["stage_verdicts"] = {k: asdict(v) for k, v in self.stage_verdicts.items()}
        obj["review"] = [asdict(v) for v in self.review]
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ImageRecord":
        rec = cls(
            id=obj["id"],
            path=obj["path"],
            width=int(obj["width"]),
            height=int(obj["height"]),
            caption=obj.get("caption"),
            scores=dict(obj.get("scores", {})),
            stage_verdicts={k: Verdict(**v) for k, v in obj.get("stage_verdicts", {}).items()},
            review=[ReviewVerdict(**v) for v in obj.get("review", [])],
        )
        rec.validate()
        return rec


def review_status(verdicts) -> str:
    """Pure status from a verdict multiset: approved, rejected, conflicted, pending.

    Two agreeing reviewers decide; a split goes to a third whose vote forms a
    majority. Duplicate (record, reviewer) pairs count once (first wins).
    """
    seen = {}
    for v in verdicts:
        seen.setdefault(v.reviewer_id, v.decision)
    approvals = sum(1 for d in seen.values() if d == "approve")
    rejects = sum(1 for d in seen.values() if d == "reject")
    if approvals >= 2 and rejects == 0:
        return "approved"
    if rejects >= 2 and approvals == 0:
        return "rejected"
    if approvals >= 1 and rejects >= 1:
        if approvals + rejects >= 3 and approvals != rejects:
            return "approved" if approvals > rejects else "rejected"
        return "conflicted"
    return "pending"


def content_id(data: bytes) -> str:
    """Lowercase hex SHA-256 of the bytes, truncated to 32 hex chars."""
    return hashlib.sha256(data).hexdigest()[:32]


class Store:
    """Directory-backed record store; many readers, one serialized writer."""

    def __init__(self, root: str):
        self.root = root
        self._lock = threading.Lock()
        self._records: dict[str, ImageRecord] = {}
        self._load()

    def _log_path(self) -> str:
        return os.path.join(self.root, STORE_FILE)

    def _load(self):
        path = self._log_path()
        if not os.path.exists(path):
            return
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    rec = ImageRecord.from_json_obj(obj)
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    rid = "?"
                    try:
                        rid = json.loads(line).get("id", "?")
                    except Exception:
                        pass
                    raise StoreError(
                        f"corrupt store line {lineno} (record {rid}): {exc}"
                    ) from exc
                self._records[rec.id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def get(self, record_id: str) -> ImageRecord:
        return self._records[record_id]

    def ids(self) -> list[str]:
        return sorted(self._records)

    def records(self) -> list[ImageRecord]:
        return [self._records[i] for i in self.ids()]

    def upsert_record(self, record: ImageRecord) -> str:
        record.validate()
        with self._lock:
            existing = {r.path: r.id for r in self._records.values()}
            if record.path in existing and existing[record.path] != record.id:
                logger.warning(
                    "path %s already maps to record %s (new id %s)",
                    record.path,
                    existing[record.path],
                    record.id,
                )
            self._records[record.id] = record
            with open(self._log_path(), "a", encoding="utf-8") as f:
                f.write(json.dumps(record.to_json_obj(), sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
        return record.id

    def close(self):
        """Compact the log: one line per record, sorted by id."""
        with self._lock:
            tmp = self._log_path() + ".tmp"
            with open(tmp, "w", encoding="utf-8") as f:
                for rec in self.records():
                    f.write(json.dumps(rec.to_json_obj(), sort_keys=True) + "\n")
            os.replace(tmp, self._log_path())


def open_store(path: str) -> Store:
    if os.path.exists(path) and not os.path.isdir(path):
        raise StoreError(f"not a directory: {path}")
    os.makedirs(path, exist_ok=True)
    return Store(path)


def ingest_directory(store: Store, root: str) -> int:
    """Add every decodable image under root; returns count of new records."""
    added = 0
    paths = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in sorted(filenames):
            if os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS:
                paths.append(os.path.join(dirpath, name))
    for path in sorted(paths):
        with open(path, "rb") as f:
            data = f.read()
        rid = content_id(data)
        if rid in store._records:
            logger.info("duplicate bytes: %s collapses into %s", path, rid)
            continue
        try:
            img = decode_image(data)
        except Exception as exc:
            logger.warning("skipping undecodable %s: %s", path, exc)
            continue
        rel = os.path.relpath(path, root)
        store.upsert_record(
            ImageRecord(id=rid, path=rel, width=img.width, height=img.height)
        )
        added += 1
    return added


def import_captions(store: Store, sidecar_path: str) -> tuple[int, list[str]]:
    """Apply a caption sidecar (JSONL of {"id", "caption"}).

    Returns (updated count, unmatched ids). Malformed lines raise with the
    line number; duplicate ids in the sidecar apply last-wins with a warning.
    """
    captions: dict[str, str] = {}
    with open(sidecar_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid, caption = obj["id"], obj["caption"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise StoreError(f"malformed sidecar line {lineno}: {exc}") from exc
            if rid in captions:
                logger.warning("duplicate sidecar id %s at line %d (last wins)", rid, lineno)
            captions[rid] = caption
    updated, unmatched = 0, []
    for rid, caption in captions.items():
        if rid in store._records:
            rec = store.get(rid)
            rec.caption = caption
            store.upsert_record(rec)
            updated += 1
        else:
            unmatched.append(rid)
    return updated, sorted(unmatched)


def merge_scores(store: Store, scores_path: str, metric: str | None = None) -> int:
    """Apply an External Scores file (JSONL of {"id", "metric", "score"}).

    Non-finite scores and unknown ids are skipped with a warning. If `metric`
    is given, lines for other metrics are ignored. Re-merge overwrites.
    """
    updated = 0
    with open(scores_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid, name, score = obj["id"], obj["metric"], obj["score"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise StoreError(f"malformed scores line {lineno}: {exc}") from exc
            if metric is not None and name != metric:
                continue
            if not isinstance(score, (int, float)) or not math.isfinite(score):
                logger.warning("line %d: non-finite score for %s, skipped", lineno, rid)
                continue
            if rid not in store._records:
                logger.warning("line %d: unknown id %s, skipped", lineno, rid)
                continue
            rec = store.get(rid)
            rec.scores[name] = float(score)
            store.upsert_record(rec)
            updated += 1
    return updated


def _manifest_entry(rec: ImageRecord) -> dict:
    return {
        "id": rec.id,
        "path": rec.path,
        "caption": rec.caption,
        "scores": {k: rec.scores[k] for k in sorted(rec.scores)},
        "verdicts": {
            k: asdict(rec.stage_verdicts[k]) for k in sorted(rec.stage_verdicts)
        },
    }


def export_manifest(store: Store, out_path: str, predicate=None, provenance=None) -> dict:
    """Write a deterministic manifest of records matching `predicate` (default all).

    Same store + filter yields byte-identical output.
    """
    entries = [
        _manifest_entry(rec)
        for rec in store.records()
        if predicate is None or predicate(rec)
    ]
    manifest = {
        "version": MANIFEST_VERSION,
        "provenance": dict(provenance or {"tool_version": __version__}),
        "entries": entries,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    return manifest


def read_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise StoreError(f"unsupported manifest version {manifest.get('version')!r}")
    return manifest
