"""Grad-CAM heatmaps and the per-grade mean-intensity table."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..classify.model import TrainedClassifier, activations_and_gradients, predict
from ..data_model import GRADES

TABLE3_METHODS = ("original", "transform", "cyclegan", "cut")
TABLE3_HEADERS = {"original": "Original", "transform": "Transformations", "cyclegan": "CycleGAN", "cut": "CUT"}


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray  # uint8, aligned with the input image
    mean_intensity: float
    target_class: int | None = None


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def normalize_map(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 255], rounded half-up. Flat maps become all-255 when
    positive and all-0 otherwise."""
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.full(raw.shape, 255 if hi > 0 else 0, dtype=np.uint8)
    return _round_half_up((raw - lo) / (hi - lo) * 255.0).clip(0, 255).astype(np.uint8)


def cam_from_maps(
    activations: np.ndarray, gradients: np.ndarray, out_size: tuple[int, int] | None = None
) -> tuple[np.ndarray, Heatmap]:
    """Weight each map by its spatially averaged gradient, ReLU, upsample bilinearly, normalise.

    Returns the raw (non-negative) map at feature resolution and the heatmap.
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.ndim == 2:
        a, g = a[None], g[None]
    if a.shape != g.shape or a.ndim != 3:
        raise ValueError(f"activation/gradient shapes differ or are not (K, h, w): {a.shape} vs {g.shape}")
    alpha = g.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(alpha, a, axes=1), 0.0)
    up = raw
    if out_size is not None and tuple(out_size) != raw.shape:
        t = torch.from_numpy(raw)[None, None]
        up = F.interpolate(t, size=tuple(out_size), mode="bilinear", align_corners=False)[0, 0].numpy()
        up = np.maximum(up, 0.0)
    grid = normalize_map(up)
    return raw, Heatmap(grid=grid, mean_intensity=float(grid.mean()))


def grad_cam(
    model: TrainedClassifier,
    img: np.ndarray,
    target_class: int | None = None,
    allow_token_grid: bool = False,
) -> Heatmap:
    """Grad-CAM at the input resolution; ``target_class=None`` uses the predicted grade."""
    if target_class is None:
        target_class = predict(model, img)[0].value
    a, g = activations_and_gradients(model, img, target_class, allow_token_grid=allow_token_grid)
    _, hm = cam_from_maps(a, g, out_size=np.asarray(img).shape[:2])
    return Heatmap(grid=hm.grid, mean_intensity=hm.mean_intensity, target_class=int(target_class))


def mean_intensity_table(
    groups: Mapping[tuple[int, str], Sequence[Heatmap | float]],
    methods: Sequence[str] = TABLE3_METHODS,
) -> list[dict]:
    """Rows grade 1..6, one column per method; each cell averages per-heatmap means.

    Missing or empty groups give ``None`` (blank) cells and a warning.
    """
    rows = []
    for g in GRADES:
        row: dict = {"grade": f"grade {g}"}
        for m in methods:
            items = list(groups.get((g, m), ()))
            if not items:
                warnings.warn(f"no heatmaps for grade {g} / {m}; cell left blank", stacklevel=2)
                row[TABLE3_HEADERS.get(m, m)] = None
                continue
            vals = [h.mean_intensity if isinstance(h, Heatmap) else float(h) for h in items]
            row[TABLE3_HEADERS.get(m, m)] = float(np.mean(vals))
        rows.append(row)
    return rows


def write_intensity_csv(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys()) if rows else ["grade"]
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (f"{v:.2f}" if isinstance(v, float) else v)) for k, v in r.items()})


def read_intensity_csv(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (v if k == "grade" else (float(v) if v else None)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def format_intensity_table(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    cols = [k for k in rows[0] if k != "grade"]
    lines = [f"{'grade':<10}" + "".join(f"{c:>17}" for c in cols)]
    for r in rows:
        cells = "".join(f"{'' if r[c] is None or (isinstance(r[c], float) and math.isnan(r[c])) else f'{r[c]:.2f}':>17}" for c in cols)
        lines.append(f"{r['grade']:<10}" + cells)
    return "\n".join(lines) + "\n"
