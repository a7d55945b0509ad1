"""Command-line entry point wiring corpus generation, training, sampling,
evaluation, summarization and the ablation ladder into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys

import click
import numpy as np
import yaml
from PIL import Image

from . import data as data_mod
from .config import ConfigError, load_config, write_resolved
from .features import FeatureExtractor, PatchClassifier
from .metrics import MetricReport, fid
from .pipeline import LatentDiffusion
from .summarize import summarize_multi, transport_from_env, write_summary_records, read_summary_records
from .conditioning import BpeTokenizer
from .viz import plot_guidance_sweep, save_image_grid
from .vqvae import VqVae

SLIDES_FILE = "slides.jsonl"
PATCHES_FILE = "patches.jsonl"
GENPARAMS_FILE = "genparams.jsonl"
SUMMARIES_FILE = "summaries.jsonl"
EXTRACTOR_FILE = "extractor.pt"
RESULTS_FILE = "results.jsonl"
TOKENIZER_FILE = "tokenizer.merges.txt"


# ---------------------------------------------------------------------------
# small artifact helpers
# ---------------------------------------------------------------------------


def _require(path, hint):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing prerequisite artifact {path} ({hint})")
    return path


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _load_slides(corpus_dir):
    rows = _read_jsonl(_require(os.path.join(corpus_dir, SLIDES_FILE), "run gen-corpus"))
    return [data_mod.SlideRecord(**row) for row in rows]


def _load_patches(corpus_dir, manifest=None):
    path = manifest or os.path.join(corpus_dir, PATCHES_FILE)
    return data_mod.read_manifest(_require(path, "run gen-corpus / build-manifests"))


def _split(patches, split):
    return [p for p in patches if p.split == split]


def _append_result(corpus_dir, report: MetricReport):
    with open(os.path.join(corpus_dir, RESULTS_FILE), "a", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")


def _corpus_tokenizer(corpus_dir, cfg):
    """Tokenizer trained on the corpus report texts (cached as a merges file)."""
    path = os.path.join(corpus_dir, TOKENIZER_FILE)
    if os.path.exists(path):
        return BpeTokenizer.load(path)
    slides = _load_slides(corpus_dir)
    tok = BpeTokenizer(vocab_size=cfg["ldm"]["vocab_size"]).fit(
        [s.report_text for s in slides]
    )
    tok.save(path)
    return tok


def _get_extractor(corpus_dir, cfg) -> FeatureExtractor:
    """Load the frozen toy feature extractor, fitting it on the real train
    split (class id + background-tint bucket heads) the first time."""
    path = os.path.join(corpus_dir, EXTRACTOR_FILE)
    if os.path.exists(path):
        return FeatureExtractor.load(path)
    slides = {s.slide_id: s for s in _load_slides(corpus_dir)}
    patches = _split(_load_patches(corpus_dir), "train")
    images = data_mod.load_images(patches, corpus_dir)
    labels = np.stack([
        [p.class_id, data_mod.HUE_NAMES.index(slides[p.slide_id].hue_name)]
        for p in patches
    ])
    extractor = FeatureExtractor(**cfg["extractor"]).fit(images, labels)
    extractor.save(path)
    return extractor


def _sample_batched(ldm: LatentDiffusion, conds, sampler_cfg) -> np.ndarray:
    """Generate len(conds) images in seeded batches (seed advances per batch)."""
    batch = int(sampler_cfg["batch"])
    out = []
    for i, start in enumerate(range(0, len(conds), batch)):
        out.append(ldm.sample(
            conds[start : start + batch],
            num_steps=sampler_cfg["num_steps"],
            guidance_scale=sampler_cfg["guidance_scale"],
            eta=sampler_cfg["eta"],
            seed=int(sampler_cfg["seed"]) + i,
        ))
    return np.concatenate(out, axis=0)


def _draw_conditions(records, n, seed, mode):
    """Conditions for sampling, drawn uniformly from training-set records."""
    rng = np.random.default_rng(seed)
    picks = [records[int(i)] for i in rng.integers(len(records), size=n)]
    if mode == "text":
        return [p.caption for p in picks], np.array([p.class_id for p in picks])
    return np.array([p.class_id for p in picks]), np.array([p.class_id for p in picks])


def _save_samples(out_dir, images, class_ids, conds):
    os.makedirs(out_dir, exist_ok=True)
    np.savez_compressed(os.path.join(out_dir, "samples.npz"),
                        images=images.astype(np.float32), class_ids=class_ids)
    _write_jsonl(os.path.join(out_dir, "conditions.jsonl"),
                 [{"index": i, "condition": str(c), "class_id": int(k)}
                  for i, (c, k) in enumerate(zip(conds, class_ids))])
    save_image_grid(images[:64], os.path.join(out_dir, "grid.png"))


def _load_samples(path):
    payload = np.load(path)
    return payload["images"].astype(np.float64), payload["class_ids"]


# ---------------------------------------------------------------------------
# click group
# ---------------------------------------------------------------------------


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML config file; defaults are desk-scale.")
@click.option("--seed", type=int, default=None, help="override run.seed")
@click.option("--out", type=click.Path(), default=None, help="override run.out")
@click.option("--set", "assignments", multiple=True, metavar="SECTION.KEY=VALUE",
              help="override any config key")
@click.pass_context
def cli(ctx, config_path, seed, out, assignments):
    """Desk-scale text-conditioned latent diffusion toolkit."""
    overrides = {}
    for item in assignments:
        key, _, raw = item.partition("=")
        if not raw:
            raise click.UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        try:
            overrides[key] = yaml.safe_load(raw)
        except yaml.YAMLError as err:
            raise click.UsageError(f"cannot parse value in {item!r}: {err}")
    if seed is not None:
        overrides["run.seed"] = seed
    if out is not None:
        overrides["run.out"] = out
    try:
        ctx.obj = load_config(config_path, overrides)
    except ConfigError as err:
        raise click.UsageError(str(err))


@cli.command("gen-corpus")
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True,
              help="output corpus directory")
@click.pass_obj
def gen_corpus(cfg, corpus_dir):
    """Generate the procedural toy corpus (images, slides, patches, ground truth)."""
    os.makedirs(corpus_dir, exist_ok=True)
    c = cfg["corpus"]
    corpus = data_mod.make_toy_corpus(
        n_slides=c["n_slides"], patches_per_slide=c["patches_per_slide"],
        image_size=c["image_size"], seed=c["seed"], train_fraction=c["train_fraction"],
    )
    data_mod.save_images(corpus.images, corpus_dir, corpus.patches)
    _write_jsonl(os.path.join(corpus_dir, SLIDES_FILE),
                 [dataclasses.asdict(s) for s in corpus.slides])
    data_mod.write_manifest(corpus.patches, os.path.join(corpus_dir, PATCHES_FILE))
    _write_jsonl(os.path.join(corpus_dir, GENPARAMS_FILE), corpus.generation_params)
    write_resolved(cfg, os.path.join(corpus_dir, "resolved_config.yaml"))
    n_train = len(_split(corpus.patches, "train"))
    click.echo(f"corpus: {len(corpus.slides)} slides, {len(corpus.patches)} patches "
               f"({n_train} train) -> {corpus_dir}")


@cli.command("summarize")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--n-variants", type=int, default=None, help="summaries per slide")
@click.pass_obj
def summarize_cmd(cfg, corpus_dir, n_variants):
    """Summarize every slide report through the configured chat transport."""
    s = cfg["summarize"]
    n = n_variants if n_variants is not None else s["n_variants"]
    transport = transport_from_env()
    tokenizer = _corpus_tokenizer(corpus_dir, cfg)
    slides = _load_slides(corpus_dir)
    records = []
    failures = []
    for slide in slides:
        recs, errs = summarize_multi(
            slide.report_text, n, transport, tokenizer=tokenizer,
            slide_id=slide.slide_id, model=s["model"], temperature=s["temperature"],
        )
        records.extend(recs)
        failures.extend(errs)
    if failures:
        raise RuntimeError(f"{len(failures)} summarization calls failed: {failures[0]}")
    write_summary_records(records, os.path.join(corpus_dir, SUMMARIES_FILE))
    cap = max(r.token_count for r in records)
    click.echo(f"summaries: {len(records)} records ({n} per slide), "
               f"max tokens {cap} -> {SUMMARIES_FILE}")


@cli.command("build-manifests")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--policy", type=click.Choice(["matched", "shuffled"]), default=None)
@click.option("--assignment", type=click.Choice(["fixed", "random"]), default=None)
@click.pass_obj
def build_manifests_cmd(cfg, corpus_dir, policy, assignment):
    """Fuse patch statistics with slide summaries into a training manifest."""
    m = cfg["manifest"]
    policy = policy or m["policy"]
    assignment = assignment or m["assignment"]
    slides = _load_slides(corpus_dir)
    patches = _load_patches(corpus_dir)
    summaries = read_summary_records(
        _require(os.path.join(corpus_dir, SUMMARIES_FILE), "run summarize")
    )
    records = data_mod.build_manifests(slides, patches, summaries, policy=policy,
                                       assignment=assignment, seed=m["seed"])
    out = os.path.join(corpus_dir, f"manifest_{policy}.jsonl")
    data_mod.write_manifest(records, out)
    click.echo(f"manifest: {len(records)} records ({policy}/{assignment}) -> {out}")


@cli.command("train-vae")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--ckpt", "ckpt_path", type=click.Path(), required=True)
@click.option("--f", "factor", type=click.Choice(["4", "8"]), default=None,
              help="downsampling factor (8 switches to the 4-channel latent)")
@click.pass_obj
def train_vae_cmd(cfg, corpus_dir, ckpt_path, factor):
    """Train the VQ autoencoder on the corpus train split."""
    params = dict(cfg["vae"])
    if factor is not None:
        params["downsample_factor"] = int(factor)
        params["latent_channels"] = 3 if factor == "4" else 4
    patches = _split(_load_patches(corpus_dir), "train")
    images = data_mod.load_images(patches, corpus_dir)
    vae = VqVae(**params).fit(images)
    vae.save(ckpt_path)
    _write_jsonl(ckpt_path + ".losses.jsonl", vae.loss_curve_)
    write_resolved(cfg, ckpt_path + ".config.yaml")
    click.echo(f"vae f={params['downsample_factor']}: {len(images)} images, "
               f"final loss {vae.loss_curve_[-1]['loss']:.5f} -> {ckpt_path}")


@cli.command("eval-recon")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--vae", "vae_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test")
@click.pass_obj
def eval_recon_cmd(cfg, corpus_dir, vae_path, split):
    """Reconstruction SSIM/MSE of a trained VAE on a corpus split."""
    vae = VqVae.load(vae_path)
    patches = _split(_load_patches(corpus_dir), split)
    images = data_mod.load_images(patches, corpus_dir)
    rep = vae.reconstruction_report(images)
    report = MetricReport(ssim=rep.ssim, mse=rep.mse,
                          provenance={"op": "eval-recon", "split": split,
                                      "n_images": rep.n_images, "vae": rep.config})
    _append_result(corpus_dir, report)
    click.echo(f"recon[{split}] f={vae.downsample_factor}: ssim={rep.ssim:.4f} mse={rep.mse:.2f}")


@cli.command("train-ldm")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="caption manifest; required for text mode")
@click.option("--vae", "vae_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--ckpt", "ckpt_path", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["text", "class"]), default=None)
@click.option("--init", "init_from", type=click.Path(), default=None,
              help='"scratch" or a denoiser checkpoint to finetune from')
@click.pass_obj
def train_ldm_cmd(cfg, corpus_dir, manifest_path, vae_path, ckpt_path, mode, init_from):
    """Train the conditioned latent diffusion model over a frozen VAE."""
    params = dict(cfg["ldm"])
    if mode is not None:
        params["conditioning_mode"] = mode
    if init_from is not None:
        params["init"] = init_from
    vae = VqVae.load(vae_path)
    patches = _split(_load_patches(corpus_dir, manifest=manifest_path), "train")
    images = data_mod.load_images(patches, corpus_dir)
    if params["conditioning_mode"] == "text":
        if manifest_path is None:
            raise RuntimeError("text conditioning requires --manifest with captions")
        if any(p.caption is None for p in patches):
            raise RuntimeError("manifest has no captions; run build-manifests")
        y = [p.caption for p in patches]
    else:
        y = np.array([p.class_id for p in patches])
    ldm = LatentDiffusion(**params).fit(images, y, vae=vae)
    ldm.save(ckpt_path)
    _write_jsonl(ckpt_path + ".losses.jsonl", ldm.loss_curve_)
    write_resolved(cfg, ckpt_path + ".config.yaml")
    click.echo(f"ldm[{params['conditioning_mode']}]: {len(images)} patches, "
               f"{params['max_steps']} steps, final loss "
               f"{ldm.loss_curve_[-1]['loss']:.4f} -> {ckpt_path}")


@cli.command("sample")
@click.option("--ldm", "ldm_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--vae", "vae_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="conditions are drawn from this manifest's train split")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--n-samples", type=int, default=None)
@click.option("--guidance", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--eta", type=float, default=None)
@click.pass_obj
def sample_cmd(cfg, ldm_path, vae_path, manifest_path, corpus_dir, out_dir,
               n_samples, guidance, steps, eta):
    """Sample images from a trained LDM and emit a grid plus an image archive."""
    s = dict(cfg["sampler"])
    if n_samples is not None:
        s["n_samples"] = n_samples
    if guidance is not None:
        s["guidance_scale"] = guidance
    if steps is not None:
        s["num_steps"] = steps
    if eta is not None:
        s["eta"] = eta
    vae = VqVae.load(vae_path)
    ldm = LatentDiffusion.load(ldm_path, vae)
    records = _split(_load_patches(corpus_dir, manifest=manifest_path), "train")
    conds, class_ids = _draw_conditions(records, s["n_samples"], s["seed"],
                                        ldm.conditioning_mode)
    images = _sample_batched(ldm, conds, s)
    _save_samples(out_dir, images, class_ids, conds)
    write_resolved(cfg, os.path.join(out_dir, "resolved_config.yaml"))
    click.echo(f"samples: {len(images)} images at guidance {s['guidance_scale']}, "
               f"{s['num_steps']} steps -> {out_dir}")


@cli.command("eval-fid")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--fake", "fake_path", type=click.Path(exists=True), required=True,
              help="samples.npz archive or a directory of PNG images")
@click.option("--n", "n_cap", type=int, default=None, help="cap both sides at n images")
@click.pass_obj
def eval_fid_cmd(cfg, corpus_dir, fake_path, n_cap):
    """FID between the corpus test split and a set of generated images."""
    extractor = _get_extractor(corpus_dir, cfg)
    patches = _split(_load_patches(corpus_dir), "test")
    real = data_mod.load_images(patches, corpus_dir)
    if os.path.isdir(fake_path):
        names = sorted(n for n in os.listdir(fake_path) if n.endswith(".png"))
        fake = np.stack([
            np.asarray(Image.open(os.path.join(fake_path, name)).convert("RGB"),
                       dtype=np.float64) / 255.0
            for name in names
        ])
    else:
        fake, _ = _load_samples(fake_path)
    n = n_cap or cfg["eval"]["n_fid"]
    report = fid(real[:n], fake[:n], extractor)
    report.provenance.update({"op": "eval-fid", "fake": str(fake_path)})
    _append_result(corpus_dir, report)
    click.echo(f"fid: {report.fid:.4f} "
               f"(real n={report.provenance['n_real']}, fake n={report.provenance['n_fake']})")


@cli.command("eval-cas")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--synthetic", "synthetic_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="samples.npz with class_ids")
@click.option("--baseline/--no-baseline", default=True,
              help="also train the real-data reference classifier")
@click.pass_obj
def eval_cas_cmd(cfg, corpus_dir, synthetic_path, baseline):
    """Classification accuracy score: train on synthetic, test on real."""
    from .metrics import cas

    synth_images, synth_labels = _load_samples(synthetic_path)
    patches_val = _split(_load_patches(corpus_dir), "test")
    real_val = data_mod.load_images(patches_val, corpus_dir)
    val_labels = np.array([p.class_id for p in patches_val])
    report = cas(synth_images, synth_labels, real_val, val_labels,
                 classifier_config=cfg["classifier"])
    report.provenance.update({"op": "eval-cas", "synthetic": str(synthetic_path)})
    _append_result(corpus_dir, report)
    line = f"cas: synthetic-trained accuracy {report.cas:.4f}"
    if baseline:
        patches_train = _split(_load_patches(corpus_dir), "train")
        real_train = data_mod.load_images(patches_train, corpus_dir)
        train_labels = np.array([p.class_id for p in patches_train])
        clf = PatchClassifier(**cfg["classifier"]).fit(real_train, train_labels)
        real_acc = float(np.mean(clf.predict(real_val) == val_labels))
        _append_result(corpus_dir, MetricReport(
            cas=real_acc, provenance={"op": "eval-cas", "source": "real-baseline"}))
        line += f", real-trained baseline {real_acc:.4f}"
    click.echo(line)


# ---------------------------------------------------------------------------
# ablation ladder
# ---------------------------------------------------------------------------

LADDER_VARIANTS = ("f8-class-scratch", "f4-class-scratch", "f4-class-finetune",
                   "f4-text", "matched", "shuffled", "multi5", "guidance-sweep")


def _ensure_vae(cfg, corpus_dir, out_dir, factor):
    path = os.path.join(out_dir, f"vae_f{factor}.pt")
    if not os.path.exists(path):
        params = dict(cfg["vae"])
        params["downsample_factor"] = factor
        params["latent_channels"] = 3 if factor == 4 else 4
        patches = _split(_load_patches(corpus_dir), "train")
        images = data_mod.load_images(patches, corpus_dir)
        VqVae(**params).fit(images).save(path)
    return VqVae.load(path)


def _ensure_manifest(cfg, corpus_dir, policy, assignment="fixed"):
    path = os.path.join(corpus_dir, f"manifest_{policy}.jsonl")
    if not os.path.exists(path):
        slides = _load_slides(corpus_dir)
        patches = _load_patches(corpus_dir)
        summaries = read_summary_records(
            _require(os.path.join(corpus_dir, SUMMARIES_FILE), "run summarize"))
        records = data_mod.build_manifests(slides, patches, summaries, policy=policy,
                                           assignment=assignment, seed=cfg["manifest"]["seed"])
        data_mod.write_manifest(records, path)
    return path


def _train_ladder_ldm(cfg, corpus_dir, out_dir, name, vae, mode, manifest=None, init="scratch"):
    path = os.path.join(out_dir, f"ldm_{name}.pt")
    if os.path.exists(path):
        return LatentDiffusion.load(path, vae)
    params = dict(cfg["ldm"])
    params.update(conditioning_mode=mode, init=init)
    patches = _split(_load_patches(corpus_dir, manifest=manifest), "train")
    images = data_mod.load_images(patches, corpus_dir)
    y = [p.caption for p in patches] if mode == "text" else \
        np.array([p.class_id for p in patches])
    ldm = LatentDiffusion(**params).fit(images, y, vae=vae)
    ldm.save(path)
    return ldm


def _ladder_fid(cfg, corpus_dir, ldm, manifest, n):
    extractor = _get_extractor(corpus_dir, cfg)
    test = _split(_load_patches(corpus_dir), "test")
    real = data_mod.load_images(test, corpus_dir)[:n]
    train_records = _split(_load_patches(corpus_dir, manifest=manifest), "train")
    conds, _ = _draw_conditions(train_records, min(n, len(real)),
                                cfg["sampler"]["seed"], ldm.conditioning_mode)
    fake = _sample_batched(ldm, conds, cfg["sampler"])
    return fid(real, fake, extractor).fid


@cli.command("ablate")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--variants", default="matched,shuffled",
              help=f"comma list from {', '.join(LADDER_VARIANTS)}")
@click.pass_obj
def ablate_cmd(cfg, corpus_dir, out_dir, variants):
    """Run the requested ablation ladder variants and emit a comparison table."""
    requested = [v.strip() for v in variants.split(",") if v.strip()]
    unknown = [v for v in requested if v not in LADDER_VARIANTS]
    if unknown:
        raise click.UsageError(f"unknown variants {unknown}; choose from {LADDER_VARIANTS}")
    os.makedirs(out_dir, exist_ok=True)
    n_fid = cfg["eval"]["n_fid"]
    rows = []

    for name in requested:
        if name == "guidance-sweep":
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = _ensure_manifest(cfg, corpus_dir, "matched")
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, "f4-text", vae, "text", manifest)
            sweep = []
            for idx, scale in enumerate(cfg["ablate"]["guidance_grid"]):
                local = dict(cfg)
                local["sampler"] = dict(cfg["sampler"], guidance_scale=float(scale))
                value = _ladder_fid(local, corpus_dir, ldm, manifest,
                                    cfg["ablate"]["sweep_samples"])
                sweep.append({"index": idx, "guidance_scale": float(scale), "fid": value})
                rows.append({"variant": f"guidance={scale}", "fid": value,
                             "index": idx, "n": cfg["ablate"]["sweep_samples"]})
            _write_jsonl(os.path.join(out_dir, "guidance_sweep.jsonl"), sweep)
            plot_guidance_sweep([r["guidance_scale"] for r in sweep],
                                [r["fid"] for r in sweep],
                                os.path.join(out_dir, "guidance_sweep.png"))
            continue
        if name in ("f4-text", "matched"):
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = _ensure_manifest(cfg, corpus_dir, "matched")
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, "f4-text", vae, "text", manifest)
        elif name == "shuffled":
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = _ensure_manifest(cfg, corpus_dir, "shuffled")
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, "shuffled", vae, "text", manifest)
        elif name == "multi5":
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = _ensure_manifest(cfg, corpus_dir, "matched", assignment="random")
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, "multi5", vae, "text", manifest)
        elif name == "f8-class-scratch":
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 8)
            manifest = None
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, name, vae, "class")
        elif name == "f4-class-scratch":
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = None
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, name, vae, "class")
        else:  # f4-class-finetune: init from the scratch class model
            vae = _ensure_vae(cfg, corpus_dir, out_dir, 4)
            manifest = None
            base = os.path.join(out_dir, "ldm_f4-class-scratch.pt")
            if not os.path.exists(base):
                _train_ladder_ldm(cfg, corpus_dir, out_dir, "f4-class-scratch", vae, "class")
            ldm = _train_ladder_ldm(cfg, corpus_dir, out_dir, name, vae, "class", init=base)
        value = _ladder_fid(cfg, corpus_dir, ldm, manifest, n_fid)
        rows.append({"variant": name, "fid": value, "n": n_fid})

    _write_jsonl(os.path.join(out_dir, "ablation.jsonl"), rows)
    width = max(len(r["variant"]) for r in rows) + 2
    table = ["variant".ljust(width) + "fid", "-" * (width + 8)]
    table += [r["variant"].ljust(width) + f"{r['fid']:.4f}" for r in rows]
    text = "\n".join(table)
    with open(os.path.join(out_dir, "ablation_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    click.echo(text)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False, obj=None)
    except click.ClickException as err:
        err.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except Exception as err:  # noqa: BLE001 - boundary: report and set exit code
        click.echo(f"error: {type(err).__name__}: {err}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
