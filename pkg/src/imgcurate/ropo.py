"""Identifier-tagged diffusion training-data construction.

Turns a curated selection into positive / negative / unconditional training
samples: positives keep the original image and gain the positive identifier
prefix, negatives get a seeded degraded derivative and the negative
identifier, and a small independent dropout empties the caption entirely
for guidance consistency.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

from .corpus import Store, ImageRecord
from .degrade import DegradationConfig, degrade, derive_seed, make_rng
from .imgproc import ImagePlane, decode_image, encode_png, resize


@dataclass(frozen=True)
class RopoConfig:
    positive_identifier: str = "[X]"
    negative_identifier: str = "[V]"
    ratio_r: float = 0.8
    empty_caption_prob: float = 0.05
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    resize_long_side: int = 512

    def __post_init__(self):
        if not 0.0 <= self.ratio_r <= 1.0:
            raise ValueError("ratio_r must lie in [0, 1]")
        if not 0.0 <= self.empty_caption_prob <= 1.0:
            raise ValueError("empty_caption_prob must lie in [0, 1]")
        if not self.positive_identifier or not self.negative_identifier:
            raise ValueError("identifiers must be non-empty")
        if self.positive_identifier == self.negative_identifier:
            raise ValueError("identifiers must be distinct")

    def digest(self) -> str:
        obj = asdict(self)
        text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RopoSample:
    record_id: str
    image_path: str
    caption: str
    klass: str  # "positive" | "negative" | "unconditional"
    seed_used: int

    def to_json_obj(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_path": self.image_path,
            "caption": self.caption,
            "class": self.klass,
            "seed_used": self.seed_used,
        }


def preprocess(img: ImagePlane, long_side: int) -> ImagePlane:
    """Resize the longer side to `long_side`, then center-crop to a square."""
    if img.width >= img.height:
        w = long_side
        h = max(1, round(img.height * long_side / img.width))
    else:
        h = long_side
        w = max(1, round(img.width * long_side / img.height))
    out = resize(img, w, h, "bilinear")
    side = min(w, h)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    return ImagePlane(out.data[y0 : y0 + side, x0 : x0 + side, :])


def assign_class(u: float, v: float, cfg: RopoConfig) -> str:
    """Class from the branch draw u and the independent dropout draw v."""
    if v < cfg.empty_caption_prob:
        return "unconditional"
    return "positive" if u < cfg.ratio_r else "negative"


def build_training_sample(
    record: ImageRecord,
    image: ImagePlane | None,
    seed: int,
    cfg: RopoConfig,
    out_dir: str | None,
) -> RopoSample:
    """One training sample for a record; negatives write a degraded PNG.

    `image` may be None only when out_dir is None (manifest-only mode, used
    for statistical verification without touching pixels).
    """
    if record.caption is None:
        raise ValueError(f"record {record.id} has no caption")
    sample_seed = derive_seed(seed, record.id)
    rng = make_rng(sample_seed)
    u = float(rng.uniform())
    v = float(rng.uniform())
    negative = u >= cfg.ratio_r
    klass = assign_class(u, v, cfg)

    if negative:
        image_path = f"derived/{record.id}.png"
        if out_dir is not None:
            if image is None:
                raise ValueError("image required when materializing derivatives")
            pre = preprocess(image, cfg.resize_long_side)
            degraded = degrade(pre, derive_seed(seed, record.id + ":deg"), cfg.degradation)
            full = os.path.join(out_dir, image_path)
            os.makedirs(os.path.dirname(full), exist_ok=True)
            with open(full, "wb") as f:
                f.write(encode_png(degraded))
        prefix = cfg.negative_identifier
    else:
        image_path = record.path
        prefix = cfg.positive_identifier

    caption = "" if klass == "unconditional" else f"{prefix} {record.caption}"
    return RopoSample(
        record_id=record.id,
        image_path=image_path,
        caption=caption,
        klass=klass,
        seed_used=sample_seed,
    )


def build_manifest(
    store: Store,
    selected: list[str],
    cfg: RopoConfig,
    seed: int,
    out_dir: str,
    image_root: str | None = None,
    materialize: bool = True,
) -> str:
    """Write the training manifest (JSONL with a header line) for `selected`.

    With materialize=False no derivative images are produced; sample paths
    still name where derivatives would go. Aborts before writing anything if
    any selected record lacks a caption.
    """
    records = [store.get(rid) for rid in sorted(selected)]
    missing = [r.id for r in records if r.caption is None]
    if missing:
        raise ValueError(f"records missing captions: {missing}")
    os.makedirs(out_dir, exist_ok=True)
    samples = []
    for rec in records:
        image = None
        if materialize and image_root is not None:
            with open(os.path.join(image_root, rec.path), "rb") as f:
                image = decode_image(f.read())
        samples.append(
            build_training_sample(rec, image, seed, cfg, out_dir if materialize else None)
        )
    counts = {"positive": 0, "negative": 0, "unconditional": 0}
    for s in samples:
        counts[s.klass] += 1
    header = {
        "config_digest": cfg.digest(),
        "seed": seed,
        "counts": counts,
        "ratio_r": cfg.ratio_r,
        "empty_caption_prob": cfg.empty_caption_prob,
        "positive_identifier": cfg.positive_identifier,
        "negative_identifier": cfg.negative_identifier,
    }
    path = os.path.join(out_dir, "ropo_manifest.jsonl")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for s in samples:
            f.write(json.dumps(s.to_json_obj(), sort_keys=True, separators=(",", ":")) + "\n")
    return path


def read_manifest(path: str) -> tuple[dict, list[RopoSample]]:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in (l.strip() for l in f) if ln]
    if not lines:
        raise ValueError("empty manifest")
    header = json.loads(lines[0])
    samples = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        samples.append(
            RopoSample(
                record_id=obj["record_id"],
                image_path=obj["image_path"],
                caption=obj["caption"],
                klass=obj["class"],
                seed_used=obj["seed_used"],
            )
        )
    return header, samples


def verify_ratio(path: str) -> dict:
    """Class counts, empirical fractions, and 3-sigma binomial bands.

    The branch ratio is measured over conditional samples only (the caption
    dropout is an independent event layered on top of the branch draw).
    """
    header, samples = read_manifest(path)
    n = len(samples)
    counts = {"positive": 0, "negative": 0, "unconditional": 0}
    for s in samples:
        if s.klass not in counts:
            raise ValueError(f"unknown class {s.klass!r} for record {s.record_id}")
        counts[s.klass] += 1
    r = float(header["ratio_r"])
    p = float(header["empty_caption_prob"])
    conditional = counts["positive"] + counts["negative"]
    pos_frac = counts["positive"] / conditional if conditional else float("nan")
    unc_frac = counts["unconditional"] / n if n else float("nan")
    band_r = 3.0 * (r * (1.0 - r) / n) ** 0.5 if n else float("nan")
    band_p = 3.0 * (p * (1.0 - p) / n) ** 0.5 if n else float("nan")
    in_band = True
    if n:
        if conditional and abs(pos_frac - r) > band_r and 0.0 < r < 1.0:
            in_band = False
        if abs(unc_frac - p) > band_p and 0.0 < p < 1.0:
            in_band = False
    return {
        "n": n,
        "counts": counts,
        "positive_fraction": pos_frac,
        "unconditional_fraction": unc_frac,
        "band_positive": band_r,
        "band_unconditional": band_p,
        "in_band": in_band,
    }


def check_prefix_law(path: str) -> bool:
    """True iff every sample's caption matches its class's identifier rule."""
    header, samples = read_manifest(path)
    pos, neg = header["positive_identifier"], header["negative_identifier"]
    for s in samples:
        if s.klass == "unconditional":
            if s.caption != "":
                return False
        elif s.klass == "positive":
            if not s.caption.startswith(pos + " "):
                return False
        else:
            if not s.caption.startswith(neg + " "):
                return False
    return True
