"""Graphic-transformation augmentation: scale, right-angle rotation, reflection, crop.

All functions take and return ``HxWx3`` uint8 arrays. Rotations and
reflections are exact pixel permutations; everything else resamples with
bilinear interpolation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .data_model import GRADES, DataError, Dataset, ImageRecord

SIZE = 256
SCALE_RANGE = (1.1, 1.5)
KINDS = (
    "scale_x",
    "scale_y",
    "scale_xy",
    "rotate90",
    "rotate180",
    "rotate270",
    "reflect_x",
    "reflect_y",
    "crop",
)

# Per-grade transformed-image counts for the 236-image clinical corpus.
CLINICAL_TRANSFORM_TARGETS = {1: 117, 2: 385, 3: 144, 4: 297, 5: 117, 6: 162}


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an HxWx3 RGB image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise DataError("image has a zero dimension")
    return img


def resize(img: np.ndarray, w: int = SIZE, h: int = SIZE) -> np.ndarray:
    img = _check_image(img)
    if w <= 0 or h <= 0:
        raise DataError("target size must be positive")
    if img.shape[:2] == (h, w):
        return np.array(img, dtype=np.uint8)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    out = Image.fromarray(img, mode="RGB").resize((w, h), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def _check_factor(f: float, allow_one: bool) -> None:
    if allow_one and f == 1.0:
        return
    lo, hi = SCALE_RANGE
    if not lo <= f <= hi:
        raise DataError(f"scale factor {f} outside [{lo}, {hi}]")


def scale(img: np.ndarray, sx: float, sy: float, size: int = SIZE) -> np.ndarray:
    """Zoom: upscale by (sx, sy), center-crop back to the original extent, resize."""
    img = _check_image(img)
    _check_factor(sx, allow_one=True)
    _check_factor(sy, allow_one=True)
    h, w = img.shape[:2]
    if sx == 1.0 and sy == 1.0:
        return resize(img, size, size)
    nw, nh = int(round(w * sx)), int(round(h * sy))
    big = np.asarray(Image.fromarray(np.asarray(img, np.uint8), mode="RGB").resize((nw, nh), Image.BILINEAR))
    top, left = (nh - h) // 2, (nw - w) // 2
    return resize(big[top : top + h, left : left + w], size, size)


def rotate(img: np.ndarray, angle: int) -> np.ndarray:
    """Clockwise rotation by a right angle."""
    img = _check_image(img)
    if angle not in (90, 180, 270):
        raise DataError(f"rotation angle must be 90, 180 or 270, got {angle}")
    return np.ascontiguousarray(np.rot90(img, k=-(angle // 90)))


def reflect(img: np.ndarray, axis: str) -> np.ndarray:
    """Mirror across the x axis (rows flipped) or the y axis (columns flipped)."""
    img = _check_image(img)
    if axis == "x":
        return np.ascontiguousarray(img[::-1])
    if axis == "y":
        return np.ascontiguousarray(img[:, ::-1])
    raise DataError(f"reflection axis must be 'x' or 'y', got {axis!r}")


def crop(
    img: np.ndarray,
    rect: Sequence[float],
    size: int = SIZE,
    min_area: float = 0.25,
) -> np.ndarray:
    """Cut ``rect = (x0, y0, x1, y1)`` given as fractions of the image extent, then resize."""
    img = _check_image(img)
    x0, y0, x1, y1 = map(float, rect)
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise DataError(f"crop rectangle {rect} is degenerate or outside the unit square")
    if (x1 - x0) * (y1 - y0) < min_area - 1e-12:
        raise DataError(f"crop area {(x1 - x0) * (y1 - y0):.3f} below minimum {min_area}")
    h, w = img.shape[:2]
    c0, c1 = int(round(x0 * w)), int(round(x1 * w))
    r0, r1 = int(round(y0 * h)), int(round(y1 * h))
    if c1 <= c0 or r1 <= r0:
        raise DataError(f"crop rectangle {rect} covers no pixels")
    return resize(img[r0:r1, c0:c1], size, size)


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind.startswith("scale"):
            if len(self.params) != 2:
                raise DataError("scale transforms take (sx, sy)")
            for f in self.params:
                _check_factor(f, allow_one=True)
        elif self.kind == "crop":
            if len(self.params) != 4:
                raise DataError("crop takes (x0, y0, x1, y1)")

    @property
    def tag(self) -> str:
        return self.kind

    def apply(self, img: np.ndarray, size: int = SIZE, min_crop_area: float = 0.25) -> np.ndarray:
        k = self.kind
        if k.startswith("scale"):
            return scale(img, *self.params, size=size)
        if k.startswith("rotate"):
            return resize(rotate(img, int(k[len("rotate"):])), size, size)
        if k.startswith("reflect"):
            return resize(reflect(img, k[-1]), size, size)
        return crop(img, self.params, size=size, min_area=min_crop_area)


def sample_spec(
    kind: str,
    rng: np.random.Generator,
    crop_area: tuple[float, float] = (0.5, 0.9),
) -> TransformSpec:
    lo, hi = SCALE_RANGE
    if kind == "scale_x":
        return TransformSpec(kind, (rng.uniform(lo, hi), 1.0))
    if kind == "scale_y":
        return TransformSpec(kind, (1.0, rng.uniform(lo, hi)))
    if kind == "scale_xy":
        s = rng.uniform(lo, hi)
        return TransformSpec(kind, (s, s))
    if kind == "crop":
        side = float(np.sqrt(rng.uniform(*crop_area)))
        x0 = rng.uniform(0.0, 1.0 - side)
        y0 = rng.uniform(0.0, 1.0 - side)
        return TransformSpec(kind, (x0, y0, x0 + side, y0 + side))
    return TransformSpec(kind)


@dataclass(frozen=True)
class AugmentPlan:
    """How many images each grade should end with, and which transforms fill the gap.

    ``per_grade_targets`` wins over ``factor``; with neither set the clinical
    per-grade targets are used. ``strategy="cycle"`` walks ``op_mix`` in order
    (offset per source image); ``"sample"`` draws kinds by weight.
    """

    per_grade_targets: Mapping[int, int] | None = None
    factor: float | None = None
    op_mix: tuple[tuple[str, float], ...] = tuple((k, 1.0) for k in KINDS)
    seed: int = 0
    strategy: str = "cycle"
    size: int = SIZE
    min_crop_area: float = 0.25
    crop_area: tuple[float, float] = (0.5, 0.9)

    def __post_init__(self) -> None:
        if self.strategy not in ("cycle", "sample"):
            raise DataError(f"unknown strategy {self.strategy!r}")
        for kind, weight in self.op_mix:
            if kind not in KINDS or weight < 0:
                raise DataError(f"bad op_mix entry ({kind!r}, {weight})")
        if not self.op_mix or sum(w for _, w in self.op_mix) <= 0:
            raise DataError("op_mix needs at least one positively weighted transform")
        if self.factor is not None and self.factor < 1:
            raise DataError("augmentation factor must be >= 1")
        lo, hi = self.crop_area
        if not (self.min_crop_area <= lo <= hi < 1.0):
            raise DataError("crop_area must satisfy min_crop_area <= lo <= hi < 1")

    def target_for(self, grade: int, n_original: int) -> int:
        if self.per_grade_targets is not None:
            return int(self.per_grade_targets.get(grade, n_original))
        if self.factor is not None:
            return int(np.floor(self.factor * n_original + 0.5))  # half-up
        return CLINICAL_TRANSFORM_TARGETS[grade]

    def spec_for(self, grade: int, src: int, op_index: int) -> TransformSpec:
        # sub-seed depends only on position, so output is schedule independent
        rng = np.random.default_rng([self.seed, grade, src, op_index])
        kinds = [k for k, w in self.op_mix if w > 0]
        if self.strategy == "cycle":
            kind = kinds[(src + op_index) % len(kinds)]
        else:
            weights = np.array([w for _, w in self.op_mix if w > 0], dtype=float)
            kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
        return sample_spec(kind, rng, self.crop_area)


def augment_dataset(train: Dataset, plan: AugmentPlan) -> Dataset:
    """Expand each grade to its plan target.

    The first outputs of a grade are pass-through copies of its originals;
    the remaining slots walk the sources round-robin, each slot applying one
    transform. Transformed records carry provenance ``transform`` and a
    ``source_path`` of the form ``<source>#<op index>_<kind>``.
    """
    out: list[ImageRecord] = []
    for g in GRADES:
        sources = [r for r in train if r.grade == g]
        n = len(sources)
        if n == 0:
            warnings.warn(f"grade {g} has no training images; skipped", stacklevel=2)
            continue
        target = plan.target_for(g, n)
        if target < n:
            raise DataError(f"grade {g}: target {target} is below the {n} originals")
        for r in sources:
            out.append(r.with_pixels(resize(r.pixels, plan.size, plan.size)))
        for k in range(n, target):
            src, op_index = k % n, k // n - 1
            spec = plan.spec_for(g, src, op_index)
            rec = sources[src]
            out.append(
                rec.with_pixels(
                    spec.apply(rec.pixels, plan.size, plan.min_crop_area),
                    provenance="transform",
                    source_path=f"{rec.source_path or f'grade{g}_{src}'}#{op_index:02d}_{spec.tag}",
                )
            )
    return Dataset(tuple(out))


def output_names(ds: Dataset) -> list[str]:
    """Relative file names ``<provenance>/grade_{g}/<stem>_<opseq>.png`` for an augmented set."""
    names, seen = [], set()
    for i, r in enumerate(ds):
        base, _, opseq = r.source_path.partition("#")
        stem = Path(base).stem or f"img{i}"
        name = f"{r.provenance}/grade_{r.grade}/{stem}_{opseq or 'orig'}.png"
        if name in seen:
            name = f"{r.provenance}/grade_{r.grade}/{stem}_{opseq or 'orig'}_{i}.png"
        seen.add(name)
        names.append(name)
    return names


def count_table(columns: Mapping[str, Dataset | Mapping[int, int]]) -> list[dict]:
    """Per-grade image counts, one column per corpus, plus a total row."""
    counts = {
        name: (c.per_grade_counts if isinstance(c, Dataset) else {g: int(c.get(g, 0)) for g in GRADES})
        for name, c in columns.items()
    }
    rows = [{"grade": f"grade {g}", **{name: counts[name][g] for name in counts}} for g in GRADES]
    rows.append({"grade": "total", **{name: sum(counts[name].values()) for name in counts}})
    return rows
