"""Synthetic cohorts: textured face-sized images plus a manifest, for tests and demos."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .imgops import ImageBuffer, encode_png

GROUP_CYCLE = [("male", "white"), ("female", "white"), ("male", "non_white"), ("female", "non_white")]


def texture(rng: np.random.Generator, size: int, channels: int = 3) -> np.ndarray:
    """Smooth random blobs plus fine noise, so both blur and pixelation erode edge energy gradually."""
    coarse = rng.uniform(0, 255, (max(2, size // 4), max(2, size // 4), channels))
    ys = np.linspace(0, coarse.shape[0] - 1, size)
    xs = np.linspace(0, coarse.shape[1] - 1, size)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, coarse.shape[0] - 1), np.minimum(x0 + 1, coarse.shape[1] - 1)
    fy, fx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    smooth = (
        coarse[y0][:, x0] * (1 - fy) * (1 - fx)
        + coarse[y1][:, x0] * fy * (1 - fx)
        + coarse[y0][:, x1] * (1 - fy) * fx
        + coarse[y1][:, x1] * fy * fx
    )
    fine = rng.normal(0, 30, (size, size, channels))
    return np.clip(smooth + fine, 0, 255).astype(np.uint8)


def make_cohort(
    out_dir: str | Path,
    n_identities: int = 40,
    images_per_identity: int = 20,
    size: int = 24,
    seed: int = 0,
) -> Path:
    """Write PNGs and ``manifest.csv`` for a cohort balanced over the 2x2 groups.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_identities):
        gender, race = GROUP_CYCLE[i % len(GROUP_CYCLE)]
        ident = f"id{i:03d}"
        for j in range(images_per_identity):
            image_id = f"{ident}_{j:03d}"
            blob = encode_png(ImageBuffer.from_array(texture(rng, size)))
            rel = Path("images") / f"{image_id}.png"
            (out_dir / rel).write_bytes(blob)
            rows.append([image_id, rel.as_posix(), hashlib.md5(blob).hexdigest(), ident, gender, race])
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "file_path", "md5", "identity_id", "gender", "race"])
        w.writerows(rows)
    return manifest
