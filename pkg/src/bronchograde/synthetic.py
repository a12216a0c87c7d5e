"""Synthetic image sets for offline runs: two-domain shapes for GAN checks, a
six-class shape set for classifier checks, and a bronchoscopy-like corpus with
patients and ventilation durations for the end-to-end pipeline."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .data_model import GRADES, Dataset, DomainPartition, ImageRecord, write_png

# Representative ventilation duration ranges (hours) per grade, strictly inside each band.
VENT_RANGES = {1: (4, 23), 2: (24, 47), 3: (49, 167), 4: (169, 335), 5: (337, 719), 6: (721, 1500)}


def _canvas(size: int, color) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    im = Image.new("RGB", (size, size), tuple(int(c) for c in color))
    return im, ImageDraw.Draw(im)


def _jitter(rng, base, spread):
    return np.clip(np.asarray(base, float) + rng.normal(0, spread, 3), 0, 255)


def two_domain_shapes(n: int = 64, size: int = 32, seed: int = 0) -> DomainPartition:
    """Domain A: red-ish filled circles on a dark field; domain B: cyan-ish
    filled squares on a bright field."""
    rng = np.random.default_rng(seed)
    a, b = [], []
    for i in range(n):
        im, d = _canvas(size, _jitter(rng, (35, 30, 30), 6))
        r = rng.uniform(0.2, 0.35) * size
        cx, cy = rng.uniform(r, size - r, 2)
        d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=tuple(int(c) for c in _jitter(rng, (190, 60, 50), 12)))
        a.append(ImageRecord(f"A{i}", np.asarray(im), 1, source_path=f"circle_{i}"))

        im, d = _canvas(size, _jitter(rng, (205, 215, 225), 6))
        s = rng.uniform(0.2, 0.35) * size
        cx, cy = rng.uniform(s, size - s, 2)
        d.rectangle([cx - s, cy - s, cx + s, cy + s], fill=tuple(int(c) for c in _jitter(rng, (40, 150, 200), 12)))
        b.append(ImageRecord(f"B{i}", np.asarray(im), 2, source_path=f"square_{i}"))
    return DomainPartition(target_grade=2, trainA=Dataset(tuple(a)), trainB=Dataset(tuple(b)))


# Free pentominoes: no two are related by a rotation or reflection.
PENTOMINOES = {
    "F": ((0, 1), (0, 2), (1, 0), (1, 1), (2, 1)),
    "L": ((0, 0), (1, 0), (2, 0), (3, 0), (3, 1)),
    "P": ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0)),
    "T": ((0, 0), (0, 1), (0, 2), (1, 1), (2, 1)),
    "U": ((0, 0), (0, 2), (1, 0), (1, 1), (1, 2)),
    "W": ((0, 0), (1, 0), (1, 1), (2, 1), (2, 2)),
}
CLASS_HUES = [(200, 60, 60), (60, 180, 70), (60, 90, 210), (210, 190, 50), (180, 70, 200), (60, 190, 190)]


def glyph_mask(cells, dihedral: int, cell: int) -> np.ndarray:
    """Binary mask of a polyomino in one of the 8 dihedral orientations."""
    grid = np.zeros((4, 4), dtype=bool)
    for r, c in cells:
        grid[r, c] = True
    grid = np.rot90(grid, dihedral % 4)
    if dihedral >= 4:
        grid = grid[:, ::-1]
    rows, cols = np.flatnonzero(grid.any(1)), np.flatnonzero(grid.any(0))
    grid = grid[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    return np.kron(grid, np.ones((cell, cell), dtype=bool))


def six_class_shapes(
    n: int = 600,
    size: int = 32,
    seed: int = 0,
    cell: int = 4,
    jitter: int = 1,
    class_hues: bool = False,
    color_spread: float = 60.0,
) -> Dataset:
    """Balanced six-class set: class = pentomino glyph in a random dihedral
    orientation near the image centre, on a random dark background. Grades
    1..6 label the classes.

    By default the glyph colour is drawn independently of the class, so shape
    is the only cue and orientation the main nuisance; ``class_hues=True``
    tints each class around its own hue instead. Glyphs stay inside the
    central region so every crop and scale-up the augmentation stage samples
    keeps the whole glyph in frame.
    """
    rng = np.random.default_rng(seed)
    names = list(PENTOMINOES)
    recs = []
    for i in range(n):
        cls = i % 6
        bg = rng.uniform(10, 90, 3)
        px = np.broadcast_to(bg, (size, size, 3)).copy()
        mask = glyph_mask(PENTOMINOES[names[cls]], int(rng.integers(8)), cell)
        h, w = mask.shape
        r0 = (size - h) // 2 + int(rng.integers(-jitter, jitter + 1))
        c0 = (size - w) // 2 + int(rng.integers(-jitter, jitter + 1))
        color = _jitter(rng, CLASS_HUES[cls], color_spread) if class_hues else rng.uniform(130, 255, 3)
        px[r0 : r0 + h, c0 : c0 + w][mask] = color
        px += rng.normal(0, 4, px.shape)
        recs.append(ImageRecord(f"p{i}", np.clip(np.rint(px), 0, 255).astype(np.uint8), cls + 1, source_path=f"glyph_{i}"))
    return Dataset(tuple(recs))


def bronchoscopy_like(
    grade: int, rng: np.random.Generator, size: int = 64, patient_tint=(0.0, 0.0, 0.0)
) -> np.ndarray:
    """A dark airway lumen inside a reddish mucosal wall; higher grades carry more
    dark deposits and a paler, more textured wall."""
    t = (grade - 1) / 5.0
    wall = np.array([200 - 60 * t, 90 - 20 * t, 80 - 10 * t]) + np.asarray(patient_tint)
    im, d = _canvas(size, np.clip(wall, 0, 255))
    rx, ry = rng.uniform(0.15, 0.3, 2) * size
    cx, cy = size / 2 + rng.normal(0, size * 0.06, 2)
    d.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=(20, 10, 10))
    for _ in range(int(2 + 3 * grade + rng.integers(0, 3))):
        s = rng.uniform(0.02, 0.06) * size
        x, y = rng.uniform(0, size, 2)
        shade = int(rng.uniform(20, 60 + 10 * grade))
        d.ellipse([x - s, y - s, x + s, y + s], fill=(shade, shade // 2, shade // 2))
    im = im.filter(ImageFilter.GaussianBlur(radius=size / 64))
    px = np.asarray(im, dtype=np.float64) + rng.normal(0, 3 + 2 * grade, (size, size, 3))
    return np.clip(np.rint(px), 0, 255).astype(np.uint8)


def write_toy_corpus(
    out_dir: str | Path,
    patients_per_grade: int = 3,
    images_per_patient: int = 6,
    size: int = 64,
    seed: int = 0,
) -> Path:
    """Write PNGs plus a ``manifest.csv`` (patient_id,image_path,ventilation_hours)."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    rows = []
    for g in GRADES:
        for p in range(patients_per_grade):
            pid = f"P{g}{p:02d}"
            hours = float(np.round(rng.uniform(*VENT_RANGES[g]), 1))
            tint = rng.normal(0, 8, 3)
            for k in range(images_per_patient):
                rel = f"images/{pid}_{k:02d}.png"
                write_png(out_dir / rel, bronchoscopy_like(g, rng, size, tint))
                rows.append({"patient_id": pid, "image_path": rel, "ventilation_hours": hours})
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["patient_id", "image_path", "ventilation_hours"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return manifest
