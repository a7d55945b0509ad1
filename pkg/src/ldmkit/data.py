"""Dataset plumbing: tiling, slide-level splits, the procedural toy corpus and
manifest construction.

The toy corpus stands in for a slide archive: each synthetic "slide" owns a
background tint and a nodule shape, both written into its report text, and each
patch renders large nodules in proportion to its tumor probability and small
dots in proportion to its TIL probability. Generation parameters are returned
as ground truth so tests can audit the generator against its contract.
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, asdict, replace

import numpy as np
from PIL import Image

from .conditioning import build_caption, class_label

HUE_NAMES = (
    "crimson", "amber", "gold", "olive", "emerald", "teal",
    "azure", "cobalt", "violet", "magenta", "rose", "coral",
)
NODULE_SHAPES = ("rounded", "elongated")
MANIFEST_FIELDS = (
    "patch_id", "slide_id", "image_path", "tumor_prob", "til_prob",
    "class_id", "caption", "split",
)

_REPORT_TEMPLATE = (
    "Gross description: the specimen presents a {hue} staining background "
    "throughout the sampled region. Microscopic examination reveals {shape} "
    "nodular aggregates of varying density distributed across the tissue. "
    "The intervening stroma is unremarkable with scattered supporting cells. "
    "Margins appear clear of atypical structures and no necrosis is identified. "
    "Additional levels were examined with no unexpected findings. "
    "Final interpretation: {hue} background tint with {shape} nodules; "
    "clinical correlation is recommended."
)

_NODULE_COLOR = np.array([0.35, 0.18, 0.42])
_DOT_COLOR = np.array([0.10, 0.12, 0.38])
MAX_NODULES = 10
MAX_DOTS = 20


@dataclass(frozen=True)
class SlideRecord:
    """One synthetic slide: style parameters plus its report text."""

    slide_id: str
    hue_name: str
    nodule_shape: str
    report_text: str


@dataclass(frozen=True)
class PatchRecord:
    """One training patch; caption is attached by build_manifests."""

    patch_id: str
    slide_id: str
    image_path: str
    tumor_prob: float
    til_prob: float
    class_id: int
    caption: str | None
    split: str

    def to_manifest_line(self) -> str:
        record = asdict(self)
        return json.dumps({k: record[k] for k in MANIFEST_FIELDS})


# ---------------------------------------------------------------------------
# tiling and splitting
# ---------------------------------------------------------------------------


def tile_image(image, tile_size: int, stride: int | None = None):
    """Row-major tiles plus (y, x) offsets; partial border tiles are dropped."""
    image = np.asarray(image)
    if stride is None:
        stride = tile_size
    if tile_size < 1 or stride < 1:
        raise ValueError("tile_size and stride must be positive")
    h, w = image.shape[:2]
    if h < tile_size or w < tile_size:
        raise ValueError(f"image {h}x{w} smaller than tile size {tile_size}")
    tiles = []
    for y in range(0, h - tile_size + 1, stride):
        for x in range(0, w - tile_size + 1, stride):
            tiles.append((image[y : y + tile_size, x : x + tile_size].copy(), (y, x)))
    return tiles


def split_by_slide(slide_ids, train_fraction: float, seed: int = 0) -> dict[str, str]:
    """Seeded train/test assignment at slide granularity."""
    ids = [s.slide_id if isinstance(s, SlideRecord) else str(s) for s in slide_ids]
    if len(ids) < 2:
        raise ValueError("need at least 2 slides to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(ids)))
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train = {ids[i] for i in order[:n_train]}
    return {sid: ("train" if sid in train else "test") for sid in ids}


# ---------------------------------------------------------------------------
# procedural toy corpus
# ---------------------------------------------------------------------------


def _background(hue_idx: int, size: int, rng) -> np.ndarray:
    rgb = colorsys.hsv_to_rgb(hue_idx / len(HUE_NAMES), 0.30, 0.88)
    img = np.broadcast_to(np.asarray(rgb), (size, size, 3)).copy()
    img += rng.normal(0.0, 0.015, size=(size, size, 1))
    return img


def _paint_ellipse(img, cy, cx, ry, rx, angle, color):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = (ca * dx + sa * dy) / rx
    v = (-sa * dx + ca * dy) / ry
    q = u**2 + v**2
    alpha = np.clip(1.8 * (1.0 - q), 0.0, 1.0)[..., None]
    img *= 1.0 - alpha
    img += alpha * color


def render_patch(hue_idx: int, nodule_shape: str, tumor_prob: float, til_prob: float,
                 image_size: int, rng) -> tuple[np.ndarray, dict]:
    """Render one patch; returns the image and its generation parameters."""
    img = _background(hue_idx, image_size, rng)
    n_nodules = int(round(tumor_prob * MAX_NODULES))
    n_dots = int(round(til_prob * MAX_DOTS))
    aspect_lo, aspect_hi = (1.0, 1.3) if nodule_shape == "rounded" else (2.2, 3.0)
    scale = image_size / 32.0
    for _ in range(n_nodules):
        r = rng.uniform(2.6, 4.2) * scale
        aspect = rng.uniform(aspect_lo, aspect_hi)
        _paint_ellipse(
            img,
            rng.uniform(2, image_size - 2), rng.uniform(2, image_size - 2),
            r / np.sqrt(aspect), r * np.sqrt(aspect),
            rng.uniform(0, np.pi), _NODULE_COLOR,
        )
    for _ in range(n_dots):
        r = rng.uniform(1.1, 1.7) * scale
        _paint_ellipse(
            img,
            rng.uniform(1, image_size - 1), rng.uniform(1, image_size - 1),
            r, r, 0.0, _DOT_COLOR,
        )
    params = {"hue_idx": hue_idx, "nodule_shape": nodule_shape,
              "n_nodules": n_nodules, "n_dots": n_dots}
    return np.clip(img, 0.0, 1.0), params


def _draw_probability(rng) -> float:
    # half low, half high, with a margin around the 0.5 threshold
    if rng.random() < 0.5:
        return float(rng.uniform(0.05, 0.42))
    return float(rng.uniform(0.58, 0.95))


@dataclass
class ToyCorpus:
    slides: list[SlideRecord]
    patches: list[PatchRecord]
    images: np.ndarray  # (N, size, size, 3) aligned with patches
    generation_params: list[dict]

    def split_arrays(self, split: str):
        idx = [i for i, p in enumerate(self.patches) if p.split == split]
        return [self.patches[i] for i in idx], self.images[idx]


def make_toy_corpus(n_slides: int, patches_per_slide: int, image_size: int = 32,
                    seed: int = 0, train_fraction: float = 2 / 3) -> ToyCorpus:
    """Procedurally generate slides, patches and per-patch ground truth."""
    if image_size not in (32, 64):
        raise ValueError(f"image_size must be 32 or 64, got {image_size}")
    if n_slides < 2:
        raise ValueError("need at least 2 slides")
    rng = np.random.default_rng(seed)
    slides = []
    for i in range(n_slides):
        hue_idx = int(rng.integers(len(HUE_NAMES)))
        shape = NODULE_SHAPES[int(rng.integers(len(NODULE_SHAPES)))]
        slides.append(SlideRecord(
            slide_id=f"S{i:03d}", hue_name=HUE_NAMES[hue_idx], nodule_shape=shape,
            report_text=_REPORT_TEMPLATE.format(hue=HUE_NAMES[hue_idx], shape=shape),
        ))
    splits = split_by_slide(slides, train_fraction, seed=seed)

    patches, images, gen_params = [], [], []
    for slide in slides:
        hue_idx = HUE_NAMES.index(slide.hue_name)
        for j in range(patches_per_slide):
            tumor_prob = _draw_probability(rng)
            til_prob = _draw_probability(rng)
            img, params = render_patch(hue_idx, slide.nodule_shape, tumor_prob,
                                       til_prob, image_size, rng)
            params["tumor_prob"], params["til_prob"] = tumor_prob, til_prob
            pid = f"{slide.slide_id}_P{j:04d}"
            patches.append(PatchRecord(
                patch_id=pid, slide_id=slide.slide_id, image_path=f"images/{pid}.png",
                tumor_prob=tumor_prob, til_prob=til_prob,
                class_id=class_label(tumor_prob, til_prob).id,
                caption=None, split=splits[slide.slide_id],
            ))
            images.append(img)
            gen_params.append(params)
    return ToyCorpus(slides=slides, patches=patches,
                     images=np.stack(images), generation_params=gen_params)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def build_manifests(slides, patches, summaries: dict[str, list], policy: str = "matched",
                    assignment: str = "fixed", seed: int = 0) -> list[PatchRecord]:
    """Attach rendered captions to patches using per-slide summary pools.

    policy "matched" uses each patch's own slide summary; "shuffled" wires each
    patch to a summary from a uniformly drawn *other* slide (the degradation
    ablation). assignment picks the variant within a pool: "fixed" always takes
    variant 0, "random" draws uniformly per patch with the given seed.
    """
    if policy not in ("matched", "shuffled"):
        raise ValueError(f"unknown policy {policy!r}")
    slide_ids = [s.slide_id if isinstance(s, SlideRecord) else str(s) for s in slides]
    for sid in slide_ids:
        if not summaries.get(sid):
            raise ValueError(f"slide {sid} has no summary; summarize before building manifests")
    rng = np.random.default_rng(seed)
    records = []
    for patch in patches:
        source = patch.slide_id
        if policy == "shuffled":
            others = [sid for sid in slide_ids if sid != patch.slide_id]
            source = others[int(rng.integers(len(others)))]
        pool = summaries[source]
        pick = 0 if assignment == "fixed" else int(rng.integers(len(pool)))
        summary_text = pool[pick].summary if hasattr(pool[pick], "summary") else str(pool[pick])
        caption = build_caption(patch.tumor_prob, patch.til_prob, summary_text)
        if class_label(patch.tumor_prob, patch.til_prob).id != patch.class_id:
            raise ValueError(f"patch {patch.patch_id} class_id inconsistent with probabilities")
        records.append(replace(patch, caption=caption.rendered))
    return records


def write_manifest(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_manifest_line() + "\n")


def read_manifest(path) -> list[PatchRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(PatchRecord(**json.loads(line)))
    return records


def read_probability_table(path) -> dict[str, float]:
    """Two-column `patch_id<TAB or ,>probability` table."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", "\t").split("\t")
            if len(parts) != 2:
                raise ValueError(f"expected two columns, got {line!r}")
            table[parts[0].strip()] = float(parts[1])
    return table


def ingest_probabilities(patches, tumor_table: dict[str, float],
                         til_table: dict[str, float]) -> list[PatchRecord]:
    """Replace per-patch probabilities from externally supplied tables."""
    out = []
    for patch in patches:
        if patch.patch_id not in tumor_table or patch.patch_id not in til_table:
            raise KeyError(f"patch {patch.patch_id} missing from a probability table")
        tumor = tumor_table[patch.patch_id]
        til = til_table[patch.patch_id]
        out.append(replace(
            patch, tumor_prob=tumor, til_prob=til,
            class_id=class_label(tumor, til).id, caption=None,
        ))
    return out


# ---------------------------------------------------------------------------
# image file IO
# ---------------------------------------------------------------------------


def save_images(images, root, records) -> None:
    """Write each patch image to root/<record.image_path> as 8-bit PNG."""
    root = str(root)
    for record, img in zip(records, images):
        path = os.path.join(root, record.image_path)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(path)


def load_images(records, root) -> np.ndarray:
    out = []
    for record in records:
        with Image.open(os.path.join(str(root), record.image_path)) as im:
            out.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    return np.stack(out)
