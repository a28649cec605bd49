"""Image I/O, paired raw/reference dataset ingestion (UIEB directory
layout), and seeded synthetic underwater degradation for dataset-free tests.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["ImagePair", "Dataset", "load_image", "save_image",
           "load_dataset", "read_split_list", "synth_degrade"]

logger = logging.getLogger(__name__)


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as a (3, H, W) float32 array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected an RGB image, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.size == 0:
        raise ValueError(f"{path}: zero-sized image")
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / 255.0


def save_image(arr: np.ndarray, path) -> None:
    """Write a (3, H, W) [0, 1] float array as 8-bit RGB PNG.

    Values are clamped, then quantized round-half-up (0.5 -> byte 128).
    """
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError("expected a (3, H, W) array")
    clipped = np.clip(arr.astype(np.float64), 0.0, 1.0)
    bytes_ = np.floor(clipped * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(bytes_.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


@dataclass
class ImagePair:
    raw: np.ndarray        # (3, H, W) in [0, 1]
    reference: np.ndarray  # same extents
    id: str


@dataclass
class Dataset:
    pairs: list
    split: str = "train"
    skipped: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def read_split_list(path) -> list[str]:
    """One file stem per line; blank lines ignored."""
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def load_dataset(root, stems=None, split: str = "train") -> Dataset:
    """Load pairs from root/raw and root/reference, matched by file stem.

    Stems present in only one folder, or pairs with mismatched extents, are
    skipped and reported on the dataset's ``skipped`` list.  Pair order is
    deterministic (lexicographic by stem).
    """
    root = Path(root)
    raw_dir, ref_dir = root / "raw", root / "reference"
    if not raw_dir.is_dir() or not ref_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain raw/ and reference/ folders")
    raw_files = {p.stem: p for p in raw_dir.glob("*.png")}
    ref_files = {p.stem: p for p in ref_dir.glob("*.png")}
    common = set(raw_files) & set(ref_files)
    skipped = [f"{s}: missing counterpart"
               for s in sorted((set(raw_files) | set(ref_files)) - common)]
    if stems is not None:
        wanted = set(stems)
        skipped += [f"{s}: not in split list" for s in sorted(common - wanted)]
        common &= wanted
    pairs = []
    for stem in sorted(common):
        raw = load_image(raw_files[stem])
        ref = load_image(ref_files[stem])
        if raw.shape != ref.shape:
            skipped.append(f"{stem}: extent mismatch {raw.shape} vs {ref.shape}")
            continue
        pairs.append(ImagePair(raw=raw, reference=ref, id=stem))
    if not pairs:
        raise ValueError(f"no usable image pairs under {root}")
    for msg in skipped:
        logger.warning("skipped pair %s", msg)
    return Dataset(pairs=pairs, split=split, skipped=skipped)


def _box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 box blur per channel with edge-replicate borders."""
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy:dy + img.shape[1], dx:dx + img.shape[2]]
    return (out / 9.0).astype(img.dtype)


def synth_degrade(clean: np.ndarray, seed: int,
                  attenuation=None) -> np.ndarray:
    """Deterministic synthetic underwater degradation of a clean image.

    Channel-wise exponential attenuation (red absorbed the fastest), an
    additive greenish haze veil, then a 3x3 box blur.  ``attenuation`` may
    be overridden (1.0 per channel leaves only the blur).
    """
    clean = np.asarray(clean, dtype=np.float32)
    rng = np.random.default_rng(seed)
    # absorption coefficients per channel; red strongest
    coeff = rng.uniform([0.8, 0.25, 0.35], [1.2, 0.45, 0.60])
    att = np.exp(-coeff) if attenuation is None else np.asarray(attenuation,
                                                                dtype=np.float64)
    veil = rng.uniform([0.02, 0.10, 0.06], [0.06, 0.20, 0.14])
    x = clean * att[:, None, None].astype(np.float32)
    if attenuation is None:
        x = x + veil[:, None, None].astype(np.float32)
    x = _box_blur3(x)
    return np.clip(x, 0.0, 1.0).astype(np.float32)
