import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from mambauie.data import Dataset, ImagePair, synth_degrade


def procedural_image(seed, size=64):
    """Smooth seeded (3, size, size) image in [0, 1]: sinusoidal gradients."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.stack([
        0.3 + 0.5 * np.sin(2 * np.pi * (xx * rng.uniform(0.5, 2) + rng.random())),
        0.4 + 0.4 * np.cos(2 * np.pi * (yy * rng.uniform(0.5, 2) + rng.random())),
        0.5 + 0.3 * np.sin(2 * np.pi * ((xx + yy) * rng.uniform(0.5, 1.5))),
    ])
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_pairs(count=4, size=64, seed=42):
    """Paired degraded/clean procedural images for pipeline tests."""
    pairs = []
    for i in range(count):
        clean = procedural_image(seed + i, size)
        raw = synth_degrade(clean, seed=100 + i)
        pairs.append(ImagePair(raw=raw, reference=clean, id=f"synth{i}"))
    return pairs


@pytest.fixture
def tiny_dataset():
    return Dataset(pairs=synth_pairs(4, 64))


def write_png_dataset(root, pairs):
    """Materialize pairs as a raw/ + reference/ PNG tree."""
    from mambauie.data import save_image
    (root / "raw").mkdir(parents=True)
    (root / "reference").mkdir(parents=True)
    for p in pairs:
        save_image(p.raw, root / "raw" / f"{p.id}.png")
        save_image(p.reference, root / "reference" / f"{p.id}.png")
