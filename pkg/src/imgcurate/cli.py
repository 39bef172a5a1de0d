"""Command-line entry point wiring the modules into end-to-end workflows."""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import numpy as np

from . import __version__, corpus, degrade as degrade_mod, diffmath, iqa, pipeline as pipeline_mod, ropo as ropo_mod
from .imgproc import decode_image
from .config import (
    config_digest,
    degradation_from_obj,
    load_global_config,
    pipeline_from_obj,
    ropo_from_obj,
)

logger = logging.getLogger("imgcurate")


class DomainError(click.ClickException):
    exit_code = 1


def _load_ctx(ctx) -> dict:
    opts = ctx.obj
    path = opts.get("config") or os.environ.get("IMGCURATE_CONFIG")
    cfg = load_global_config(path)
    for key in ("store", "seed", "workers"):
        if opts.get(key) is not None:
            cfg[key] = opts[key]
    cfg["_digest"] = config_digest({k: v for k, v in cfg.items() if not k.startswith("_")})
    cfg["_dry_run"] = bool(opts.get("dry_run"))
    logger.info("config digest %s seed %s", cfg["_digest"], cfg["seed"])
    return cfg


@click.group()
@click.option("--config", type=click.Path(), default=None, help="global JSON config")
@click.option("--store", type=click.Path(), default=None, help="store directory override")
@click.option("--seed", type=int, default=None, help="seed override")
@click.option("--workers", type=int, default=None, help="worker count override")
@click.option("--dry-run", is_flag=True, help="report actions without writing")
@click.option("-v", "--verbose", count=True)
@click.version_option(__version__)
@click.pass_context
def main(ctx, config, store, seed, workers, dry_run, verbose):
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")
    ctx.obj = {
        "config": config,
        "store": store,
        "seed": seed,
        "workers": workers,
        "dry_run": dry_run,
    }


def _open_store(cfg) -> corpus.Store:
    try:
        return corpus.open_store(cfg["store"])
    except corpus.StoreError as exc:
        raise DomainError(str(exc))


@main.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.pass_context
def ingest(ctx, directory):
    """Add every decodable image under DIRECTORY to the store."""
    cfg = _load_ctx(ctx)
    if cfg["_dry_run"]:
        click.echo(json.dumps({"would_ingest": directory}))
        return
    store = _open_store(cfg)
    added = corpus.ingest_directory(store, directory)
    store.close()
    click.echo(json.dumps({"added": added, "total": len(store)}))


@main.command("fit-niqe")
@click.argument("pristine_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(), default="niqe_model.json")
@click.pass_context
def fit_niqe(ctx, pristine_dir, out):
    """Fit the blind-quality pristine model from a directory of clean images."""
    cfg = _load_ctx(ctx)
    images = []
    for name in sorted(os.listdir(pristine_dir)):
        if os.path.splitext(name)[1].lower() in corpus.IMAGE_EXTENSIONS:
            with open(os.path.join(pristine_dir, name), "rb") as f:
                images.append(decode_image(f.read()))
    try:
        model = iqa.fit_niqe_model(images)
    except ValueError as exc:
        raise DomainError(str(exc))
    if cfg["_dry_run"]:
        click.echo(json.dumps({"would_write": out}))
        return
    with open(out, "w", encoding="utf-8") as f:
        f.write(model.to_json())
    click.echo(json.dumps({"model": out, "images": len(images)}))


@main.command()
@click.option("--metric", default=None, help="native metric: niqe or laplacian")
@click.option("--external", default=None, help="external scorer name from config")
@click.option("--niqe-model", type=click.Path(exists=True), default=None)
@click.pass_context
def score(ctx, metric, external, niqe_model):
    """Compute or ingest per-record metric scores."""
    cfg = _load_ctx(ctx)
    store = _open_store(cfg)
    image_root = cfg["image_root"]
    if metric == "niqe":
        model_path = niqe_model or cfg.get("niqe_model")
        if not model_path:
            raise DomainError("niqe scoring needs --niqe-model or config niqe_model")
        with open(model_path, encoding="utf-8") as f:
            model = iqa.NiqeModel.from_json(f.read())
        n = pipeline_mod.score_niqe(store, model, image_root, workers=cfg["workers"])
    elif metric == "laplacian":
        n = pipeline_mod.score_laplacian(store, image_root, workers=cfg["workers"])
    elif external is not None:
        command = cfg["scorers"].get(external)
        if not command:
            raise DomainError(f"no scorer {external!r} in config scorer table")
        manifest_path = os.path.join(cfg["store"], "scoring_manifest.json")
        corpus.export_manifest(store, manifest_path)
        out_path = os.path.join(cfg["store"], f"scores_{external}.jsonl")
        try:
            iqa.run_external_scorer(manifest_path, command, external, out_path)
        except iqa.ScorerError as exc:
            raise DomainError(str(exc))
        n = corpus.merge_scores(store, out_path, metric=external)
    else:
        raise DomainError("nothing to do: pass --metric or --external")
    store.close()
    click.echo(json.dumps({"scored": n}))


@main.command()
@click.option("--stages", default="1,2,3,4", help="comma-separated stage numbers")
@click.pass_context
def select(ctx, stages):
    """Run the selection funnel and print the report."""
    cfg = _load_ctx(ctx)
    store = _open_store(cfg)
    pcfg = pipeline_from_obj(cfg["pipeline"])
    try:
        stage_list = [int(s) for s in stages.split(",") if s]
    except ValueError:
        raise click.UsageError(f"bad --stages value {stages!r}")
    try:
        report = pipeline_mod.run_pipeline(
            store, pcfg, stage_list, image_root=cfg["image_root"], workers=cfg["workers"]
        )
    except ValueError as exc:
        raise DomainError(str(exc))
    store.close()
    report["seed"] = cfg["seed"]
    click.echo(json.dumps(report, sort_keys=True))


@main.command("degrade-corpus")
@click.argument("clean_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path())
@click.pass_context
def degrade_corpus(ctx, clean_dir, out_dir):
    """Build a labeled clean + degraded-twin test corpus."""
    cfg = _load_ctx(ctx)
    dcfg = degradation_from_obj(cfg["degradation"])
    if cfg["_dry_run"]:
        click.echo(json.dumps({"would_write": out_dir}))
        return
    try:
        path = degrade_mod.build_synthetic_corpus(
            clean_dir, out_dir, cfg["seed"], dcfg, workers=cfg["workers"]
        )
    except ValueError as exc:
        raise DomainError(str(exc))
    click.echo(json.dumps({"manifest": path}))


@main.command("ropo-build")
@click.option("--out", type=click.Path(), required=True)
@click.option("--selected", type=click.Path(exists=True), default=None,
              help="JSON file with a list of record ids (default: all human-pass records)")
@click.option("--manifest-only", is_flag=True, help="skip writing degraded derivatives")
@click.pass_context
def ropo_build(ctx, out, selected, manifest_only):
    """Build the identifier-tagged training manifest from the curated selection."""
    cfg = _load_ctx(ctx)
    store = _open_store(cfg)
    rcfg = ropo_from_obj(cfg["ropo"])
    if selected:
        with open(selected, encoding="utf-8") as f:
            ids = json.load(f)
    else:
        ids = [
            r.id
            for r in store.records()
            if r.stage_verdicts.get("human") and r.stage_verdicts["human"].status == "pass"
        ]
    if cfg["_dry_run"]:
        click.echo(json.dumps({"would_build": len(ids)}))
        return
    try:
        path = ropo_mod.build_manifest(
            store,
            ids,
            rcfg,
            cfg["seed"],
            out,
            image_root=cfg["image_root"],
            materialize=not manifest_only,
        )
    except (ValueError, FileNotFoundError) as exc:
        raise DomainError(str(exc))
    click.echo(json.dumps({"manifest": path, "count": len(ids)}))


@main.command("ropo-verify")
@click.argument("manifest", type=click.Path(exists=True))
@click.pass_context
def ropo_verify(ctx, manifest):
    """Check class counts and identifier prefixes of a training manifest."""
    _load_ctx(ctx)
    try:
        stats = ropo_mod.verify_ratio(manifest)
        stats["prefix_law"] = ropo_mod.check_prefix_law(manifest)
    except (ValueError, KeyError) as exc:
        raise DomainError(f"malformed manifest: {exc}")
    click.echo(json.dumps(stats, sort_keys=True))
    if not stats["in_band"] or not stats["prefix_law"]:
        raise DomainError("manifest out of statistical band or prefix law violated")


@main.command("serve-review")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8321, type=int)
@click.pass_context
def serve_review(ctx, host, port):
    """Serve the human-verification HTTP API."""
    from .review import ReviewServiceConfig, serve

    cfg = _load_ctx(ctx)
    store = _open_store(cfg)
    rcfg = ReviewServiceConfig(
        reviewers=cfg["review"].get("reviewers", {}),
        lease_ttl_s=cfg["review"].get("lease_ttl_s", 600.0),
    )
    serve(store, cfg["image_root"], rcfg, host, port)


@main.command()
@click.option("--out", type=click.Path(), default=None, help="write manifest here too")
@click.pass_context
def report(ctx, out):
    """Export the current store as a manifest to stdout (and optionally a file)."""
    cfg = _load_ctx(ctx)
    store = _open_store(cfg)
    path = out or os.path.join(cfg["store"], "report_manifest.json")
    manifest = corpus.export_manifest(
        store, path, provenance={"tool_version": __version__, "config_digest": cfg["_digest"]}
    )
    click.echo(json.dumps(manifest, sort_keys=True))


@main.command("demo-sample")
@click.option("--n", default=1000, type=int)
@click.option("--mean", default=1.0, type=float)
@click.option("--std", default=0.5, type=float)
@click.pass_context
def demo_sample(ctx, n, mean, std):
    """Toy ancestral sampler against the analytic Gaussian-data denoiser."""
    cfg = _load_ctx(ctx)
    sched_cfg = cfg["schedule"]
    sched = diffmath.make_schedule(
        sched_cfg["kind"], sched_cfg["T"], sched_cfg["beta_min"], sched_cfg["beta_max"]
    )
    den = diffmath.gaussian_analytic_denoiser(mean, std, sched)
    rng = np.random.default_rng(cfg["seed"])
    samples = np.array([diffmath.ddpm_sample(den, sched, None, rng, (1,))[0] for _ in range(n)])
    click.echo(
        json.dumps(
            {
                "n": n,
                "target_mean": mean,
                "target_std": std,
                "sample_mean": float(samples.mean()),
                "sample_std": float(samples.std()),
            }
        )
    )


if __name__ == "__main__":
    main()
