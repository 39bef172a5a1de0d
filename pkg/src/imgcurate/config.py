"""Global JSON configuration: parsing, defaults, and digests."""

from __future__ import annotations

import hashlib
import json

from .degrade import BlurConfig, DegradationConfig, JpegConfig, NoiseConfig, ResizeConfig
from .pipeline import PipelineConfig
from .ropo import RopoConfig


def _tup(v):
    return tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v


def degradation_from_obj(obj: dict | None) -> DegradationConfig:
    obj = dict(obj or {})
    kwargs = {}
    if "blur" in obj:
        kwargs["blur"] = BlurConfig(**{k: _tup(v) for k, v in obj["blur"].items()})
    if "resize" in obj:
        kwargs["resize"] = ResizeConfig(**{k: _tup(v) for k, v in obj["resize"].items()})
    if "noise" in obj:
        kwargs["noise"] = NoiseConfig(**{k: _tup(v) for k, v in obj["noise"].items()})
    if "jpeg" in obj:
        kwargs["jpeg"] = JpegConfig(**{k: _tup(v) for k, v in obj["jpeg"].items()})
    for key in ("orders", "final_sinc_prob"):
        if key in obj:
            kwargs[key] = obj[key]
    if obj.get("final_size") is not None:
        kwargs["final_size"] = tuple(obj["final_size"])
    return DegradationConfig(**kwargs)


def ropo_from_obj(obj: dict | None) -> RopoConfig:
    obj = dict(obj or {})
    if "degradation" in obj:
        obj["degradation"] = degradation_from_obj(obj["degradation"])
    return RopoConfig(**obj)


def pipeline_from_obj(obj: dict | None) -> PipelineConfig:
    return PipelineConfig.from_json_obj(dict(obj or {}))


DEFAULTS = {
    "store": "store",
    "image_root": ".",
    "seed": 0,
    "workers": 1,
    "pipeline": {},
    "degradation": {},
    "ropo": {},
    "schedule": {"kind": "linear", "T": 50, "beta_min": 2e-3, "beta_max": 0.4},
    "scorers": {},
    "review": {"reviewers": {}, "lease_ttl_s": 600.0},
    "niqe_model": None,
}


def load_global_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        with open(path, encoding="utf-8") as f:
            user = json.load(f)
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def config_digest(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
