"""Dataset ingestion, crop-or-downsize preprocessing, epoch streams and the
synthetic shapes generator.

On-disk layout::

    root/
      dataset.json              optional: {"k": ..., "ignore_index": ...}
      train/images/*.png  train/masks/*.png
      val/...             test/...

Image and mask files are paired by filename.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image

from .raster import IGNORE_INDEX, AugPlan, apply_plan
from .strategy import EpochClock, StrategyConfig, plan_rng, sample_plan

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MAX_TARGET = 4096


class DataError(ValueError):
    """Dataset problems; ``problems`` lists one message per offending file."""

    def __init__(self, message: str, problems: Sequence[str] = ()):
        super().__init__(message if not problems else message + ":\n  " + "\n  ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# PNG IO


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I", "F"):
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DataError(f"{path}: mask must be single-channel (L or P), got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image, mode="L" if image.ndim == 2 else "RGB").save(path, format="PNG")


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(mask, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class Item:
    name: str
    image: Path
    mask: Path
    split: str

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        return read_image(self.image), read_mask(self.mask)


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    items: tuple[Item, ...]
    k: int
    ignore_index: int = IGNORE_INDEX

    def split(self, name: str) -> list[Item]:
        return [it for it in self.items if it.split == name]

    def to_dict(self) -> dict:
        return {
            "root": str(self.root),
            "k": self.k,
            "ignore_index": self.ignore_index,
            "items": [
                {"name": it.name, "image": str(it.image.relative_to(self.root)),
                 "mask": str(it.mask.relative_to(self.root)), "split": it.split}
                for it in self.items
            ],
        }

    def load(self) -> "SegDataset":
        splits = {s: [it.load() for it in self.split(s)] for s in SPLITS}
        names = {s: [it.name for it in self.split(s)] for s in SPLITS}
        return SegDataset(splits["train"], splits["val"], splits["test"], self.k,
                          self.ignore_index, names)


def _files(d: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(d.iterdir()) if p.is_file()} if d.is_dir() else {}


def load_manifest(root: str | Path, k: int | None = None,
                  ignore_index: int | None = None) -> DatasetManifest:
    """Scan and validate ``root``; items come out in lexicographic order per split."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    meta = {}
    meta_path = root / "dataset.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}: invalid JSON ({exc})") from None
    if ignore_index is None:
        ignore_index = int(meta.get("ignore_index", IGNORE_INDEX))
    if k is None and "k" in meta:
        k = int(meta["k"])

    problems: list[str] = []
    items: list[Item] = []
    max_label = -1
    for split in SPLITS:
        sdir = root / split
        images = _files(sdir / "images")
        masks = _files(sdir / "masks")
        if not images and not masks:
            if split == "train":
                raise DataError("empty split: train")
            continue
        for name in sorted(set(images) | set(masks)):
            if name not in masks:
                problems.append(f"{images[name]}: no matching mask")
                continue
            if name not in images:
                problems.append(f"{masks[name]}: no matching image")
                continue
            try:
                img = read_image(images[name])
                msk = read_mask(masks[name])
            except DataError as exc:
                problems.append(str(exc))
                continue
            except Exception as exc:  # PIL raises several unrelated types
                problems.append(f"{split}/{name}: cannot decode ({exc})")
                continue
            if img.shape[:2] != msk.shape:
                problems.append(
                    f"size mismatch: {images[name]} is {img.shape[1]}x{img.shape[0]}, "
                    f"{masks[name]} is {msk.shape[1]}x{msk.shape[0]}"
                )
                continue
            valid = msk[msk != ignore_index]
            if valid.size:
                max_label = max(max_label, int(valid.max()))
            items.append(Item(name, images[name], masks[name], split))
    if problems:
        raise DataError(f"dataset {root} failed validation", problems)
    if k is None:
        k = max(max_label + 1, 2)
    elif max_label >= k:
        raise DataError(f"mask label {max_label} is not below k={k}")
    return DatasetManifest(root, tuple(items), k, ignore_index)


@dataclass
class SegDataset:
    """In-memory splits of ``(image, mask)`` pairs."""

    train: list[tuple[np.ndarray, np.ndarray]]
    val: list[tuple[np.ndarray, np.ndarray]]
    test: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    k: int = 2
    ignore_index: int = IGNORE_INDEX
    names: dict[str, list[str]] | None = None

    def split(self, name: str) -> list[tuple[np.ndarray, np.ndarray]]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def split_names(self, name: str) -> list[str]:
        if self.names and name in self.names:
            return self.names[name]
        return [f"{i:04d}.png" for i in range(len(self.split(name)))]


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessSpec:
    """Random crop (probability ``crop_probability``) else downsize to ``target``."""

    target: tuple[int, int]  # (width, height)
    crop_probability: float = 0.5

    def __post_init__(self):
        w, h = self.target
        if not (0 < w <= MAX_TARGET and 0 < h <= MAX_TARGET):
            raise ValueError(f"target {self.target} must be within 1..{MAX_TARGET} per side")
        if not 0 <= self.crop_probability <= 1:
            raise ValueError("crop_probability must lie in [0, 1]")


def draw_preprocess(shape: tuple[int, int], spec: PreprocessSpec,
                    rng: np.random.Generator) -> dict:
    """Decide crop offsets or downsize for a source of ``shape = (H, W)``."""
    h, w = shape
    tw, th = spec.target
    if rng.random() < spec.crop_probability:
        if th <= h and tw <= w:
            return {"mode": "crop",
                    "x": int(rng.integers(0, w - tw + 1)),
                    "y": int(rng.integers(0, h - th + 1))}
        log.info("crop target %dx%d exceeds source %dx%d; downsizing", tw, th, w, h)
    return {"mode": "resize"}


def apply_preprocess(image: np.ndarray, mask: np.ndarray, spec: PreprocessSpec,
                     decision: dict) -> tuple[np.ndarray, np.ndarray]:
    tw, th = spec.target
    if decision["mode"] == "crop":
        x, y = decision["x"], decision["y"]
        return image[y:y + th, x:x + tw].copy(), mask[y:y + th, x:x + tw].copy()
    if image.shape[:2] == (th, tw):
        return image.copy(), mask.copy()
    mode = "L" if image.ndim == 2 else "RGB"
    img = np.asarray(Image.fromarray(image, mode).resize((tw, th), Image.BILINEAR))
    msk = np.asarray(Image.fromarray(mask, "L").resize((tw, th), Image.NEAREST))
    return img.copy(), msk.copy()


def preprocess(image: np.ndarray, mask: np.ndarray, spec: PreprocessSpec,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    return apply_preprocess(image, mask, spec, draw_preprocess(image.shape[:2], spec, rng))


# ---------------------------------------------------------------------------
# epoch streams


class StreamRecord(NamedTuple):
    epoch: int
    index: int
    name: str
    image: np.ndarray
    mask: np.ndarray
    plan: AugPlan
    preprocess: dict | None


def _split_source(source, split: str):
    if isinstance(source, DatasetManifest):
        items = source.split(split)
        return [it.name for it in items], [it.load for it in items], source.ignore_index
    pairs = source.split(split)
    return source.split_names(split), [(lambda p=p: p) for p in pairs], source.ignore_index


def epoch_records(source, split: str, strategy: StrategyConfig, clock: EpochClock,
                  seed: int, preprocess_spec: PreprocessSpec | None = None) -> Iterator[StreamRecord]:
    """Yield every item of ``split`` once, in seeded-shuffled order.

    Per item: preprocess, sample a plan, apply it. The item's generator is
    keyed on ``(seed, epoch, manifest index)`` so any item can be recomputed
    on its own.
    """
    names, loaders, ignore_index = _split_source(source, split)
    if not names:
        raise DataError(f"empty split: {split}")
    order = np.random.default_rng([seed, clock.epoch]).permutation(len(names))
    for index in order:
        index = int(index)
        try:
            image, mask = loaders[index]()
            rng = plan_rng(seed, clock.epoch, index)
            decision = None
            if preprocess_spec is not None:
                decision = draw_preprocess(image.shape[:2], preprocess_spec, rng)
                image, mask = apply_preprocess(image, mask, preprocess_spec, decision)
            plan = sample_plan(strategy, rng, clock)
            out_img, out_mask = apply_plan(plan, image, mask, ignore_index)
        except Exception as exc:
            raise DataError(f"{split}/{names[index]}: {exc}") from exc
        yield StreamRecord(clock.epoch, index, names[index], out_img, out_mask, plan, decision)


def epoch_stream(source, split: str, strategy: StrategyConfig, clock: EpochClock,
                 seed: int, preprocess_spec: PreprocessSpec | None = None
                 ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    for rec in epoch_records(source, split, strategy, clock, seed, preprocess_spec):
        yield rec.image, rec.mask


# ---------------------------------------------------------------------------
# synthetic data

VARIANTS = ("shapes", "layout")


def _split_counts(n: int) -> tuple[int, int, int]:
    n_val = max(1, round(0.15 * n))
    n_test = max(1, round(0.15 * n))
    return n - n_val - n_test, n_val, n_test


def _palette(k: int) -> np.ndarray:
    """Foreground class colors: high red, green/blue spread across classes."""
    pal = np.zeros((k, 3), dtype=np.int64)
    for c in range(1, k):
        g = int(round(220 * (c - 1) / max(k - 2, 1)))
        pal[c] = (210, 20 + g, 240 - g)
    return pal


def _shapes_pair(rng, h, w, k, n_shapes, pal):
    image = np.empty((h, w, 3), dtype=np.int64)
    image[..., 0] = rng.integers(0, 91, size=(h, w))
    image[..., 1:] = rng.integers(0, 256, size=(h, w, 2))
    mask = np.zeros((h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    lo = max(2, min(h, w) // 6)
    hi = max(lo + 1, int(min(h, w) / 2.5))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, k))
        if rng.random() < 0.5:
            sh, sw = rng.integers(lo, hi + 1, size=2)
            y0 = int(rng.integers(0, h - sh + 1))
            x0 = int(rng.integers(0, w - sw + 1))
            region = (yy >= y0) & (yy < y0 + sh) & (xx >= x0) & (xx < x0 + sw)
        else:
            r = int(rng.integers(lo, hi + 1)) / 2
            cy = rng.uniform(r, h - r)
            cx = rng.uniform(r, w - r)
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        noise = rng.integers(-20, 21, size=(h, w, 3))
        image[region] = pal[cls] + noise[region]
        mask[region] = cls
    return np.clip(image, 0, 255).astype(np.uint8), mask


def _layout_pair(rng, h, w, k, shifted: bool):
    """Label set by position (vertical bands); color tracks the label but is
    inverted in held-out splits."""
    bounds = np.linspace(0, w, k + 1)
    jitter = max(1.0, w / (4 * k))
    bounds[1:-1] += rng.uniform(-jitter, jitter, size=k - 1)
    xx = np.broadcast_to(np.arange(w)[None, :] + 0.5, (h, w))
    mask = (np.searchsorted(bounds[1:-1], xx, side="right")).astype(np.uint8)
    pal = np.zeros((k, 3), dtype=np.int64)
    for c in range(k):
        g = int(round(200 * c / (k - 1)))
        pal[c] = (220 - g, 30 + g, 120)
    image = pal[mask] + rng.integers(-25, 26, size=(h, w, 3))
    image = np.clip(image, 0, 255)
    if shifted:
        image = 255 - image
    return image.astype(np.uint8), mask


def synthesize(n_images: int = 40, canvas: tuple[int, int] = (32, 32), k: int = 2,
               seed: int = 0, variant: str = "shapes", n_shapes: int = 3) -> SegDataset:
    """Build a synthetic dataset in memory (splits 70/15/15).

    ``shapes``: rectangles and discs over noise; the foreground palette has
    a high red channel and the background a low one, so class is color
    separable. ``layout``: labels are vertical bands, colors correlate with
    the label on train but are inverted on val/test.
    """
    w, h = canvas
    if k < 2:
        raise ValueError("k must be >= 2")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if n_images < 3:
        raise ValueError("need at least 3 images for a train/val/test split")
    if min(w, h) < 8:
        raise ValueError(f"canvas {w}x{h} too small: need at least 8 pixels per side")
    if variant == "shapes" and n_shapes * max(2, min(w, h) // 6) ** 2 > w * h:
        raise ValueError(f"canvas {w}x{h} too small for {n_shapes} shapes")
    if variant == "layout" and w < 4 * k:
        raise ValueError(f"canvas width {w} too small for {k} bands")
    rng = np.random.default_rng(seed)
    n_train, n_val, n_test = _split_counts(n_images)
    pal = _palette(k)
    pairs = []
    for i in range(n_images):
        if variant == "shapes":
            pairs.append(_shapes_pair(rng, h, w, k, n_shapes, pal))
        else:
            pairs.append(_layout_pair(rng, h, w, k, shifted=i >= n_train))
    names = {
        "train": [f"{i:04d}.png" for i in range(n_train)],
        "val": [f"{i:04d}.png" for i in range(n_train, n_train + n_val)],
        "test": [f"{i:04d}.png" for i in range(n_train + n_val, n_images)],
    }
    return SegDataset(pairs[:n_train], pairs[n_train:n_train + n_val],
                      pairs[n_train + n_val:], k, IGNORE_INDEX, names)


def write_dataset(ds: SegDataset, root: str | Path, meta: dict | None = None) -> DatasetManifest:
    root = Path(root)
    for split in SPLITS:
        (root / split / "images").mkdir(parents=True, exist_ok=True)
        (root / split / "masks").mkdir(parents=True, exist_ok=True)
        for name, (image, mask) in zip(ds.split_names(split), ds.split(split)):
            write_image(root / split / "images" / name, image)
            write_mask(root / split / "masks" / name, mask)
    info = {"k": ds.k, "ignore_index": ds.ignore_index}
    info.update(meta or {})
    (root / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return load_manifest(root)


def generate_synthetic(root: str | Path, n_images: int = 40, canvas: tuple[int, int] = (32, 32),
                       k: int = 2, seed: int = 0, variant: str = "shapes",
                       n_shapes: int = 3) -> DatasetManifest:
    ds = synthesize(n_images, canvas, k, seed, variant, n_shapes)
    meta = {"generator": {"n_images": n_images, "canvas": list(canvas), "k": k,
                          "seed": seed, "variant": variant, "n_shapes": n_shapes}}
    return write_dataset(ds, root, meta)
