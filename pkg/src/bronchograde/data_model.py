"""Image records, ventilation-based grading, splitting and one-vs-all partitions."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

GRADES: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
PROVENANCES: tuple[str, ...] = ("original", "transform", "cyclegan", "cut")
DEFAULT_IMAGE_SIZE = 256

# Upper band edges in hours, inclusive: (<24h), [24h, 2d], (2d, 7d], (7d, 14d], (14d, 30d], >30d
_BAND_EDGES_H = (24.0, 48.0, 7 * 24.0, 14 * 24.0, 30 * 24.0)


class DataError(ValueError):
    """Raised for malformed manifests, labels or dataset operations."""


@dataclass(frozen=True, order=True)
class GradeLabel:
    value: int

    def __post_init__(self) -> None:
        if isinstance(self.value, bool) or int(self.value) != self.value or not 1 <= self.value <= 6:
            raise DataError(f"grade must be an integer in 1..6, got {self.value!r}")
        object.__setattr__(self, "value", int(self.value))

    def __int__(self) -> int:
        return self.value

    def band(self) -> tuple[float, float]:
        """(low, high) ventilation hours covered by this grade; low exclusive except grade 2."""
        edges = (0.0,) + _BAND_EDGES_H + (math.inf,)
        return edges[self.value - 1], edges[self.value]


def grade_from_ventilation(hours: float) -> GradeLabel:
    """Map a mechanical-ventilation duration (hours) to a severity grade.

    Grade 1 is strictly below 24 h; grade 2 covers [24 h, 48 h]; the remaining
    bands are closed on the right, so exactly 14 days is grade 4.
    """
    h = float(hours)
    if not math.isfinite(h) or h <= 0:
        raise DataError(f"ventilation hours must be positive and finite, got {hours!r}")
    if h < _BAND_EDGES_H[0]:
        return GradeLabel(1)
    for grade, edge in enumerate(_BAND_EDGES_H[1:], start=2):
        if h <= edge:
            return GradeLabel(grade)
    return GradeLabel(6)


def _as_grade(g: GradeLabel | int) -> int:
    return g.value if isinstance(g, GradeLabel) else GradeLabel(g).value


def pixel_hash(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(repr(pixels.shape).encode())
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ImageRecord:
    patient_id: str
    pixels: np.ndarray = field(repr=False, compare=False)
    grade: int
    provenance: str = "original"
    source_path: str = ""

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"expected an HxWx3 image, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise DataError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy() if px.flags.writeable else px
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "grade", _as_grade(self.grade))
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "patient_id", str(self.patient_id))

    @property
    def sha256(self) -> str:
        cached = self.__dict__.get("_sha")
        if cached is None:
            cached = pixel_hash(self.pixels)
            object.__setattr__(self, "_sha", cached)
        return cached

    def with_pixels(self, pixels: np.ndarray, **changes) -> "ImageRecord":
        return replace(self, pixels=pixels, **changes)


@dataclass(frozen=True)
class Dataset:
    records: tuple[ImageRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.records)

    def __getitem__(self, i: int) -> ImageRecord:
        return self.records[i]

    @property
    def per_grade_counts(self) -> dict[int, int]:
        counts = Counter(r.grade for r in self.records)
        return {g: counts.get(g, 0) for g in GRADES}

    @property
    def patients(self) -> list[str]:
        return sorted({r.patient_id for r in self.records})

    def of_grade(self, g: GradeLabel | int) -> "Dataset":
        g = _as_grade(g)
        return Dataset(tuple(r for r in self.records if r.grade == g))

    def hashes(self) -> set[str]:
        return {r.sha256 for r in self.records}

    def images(self) -> np.ndarray:
        if not self.records:
            raise DataError("dataset is empty")
        return np.stack([r.pixels for r in self.records])

    def labels(self) -> np.ndarray:
        return np.array([r.grade for r in self.records], dtype=np.int64)

    def __add__(self, other: "Dataset") -> "Dataset":
        return Dataset(self.records + other.records)


@dataclass(frozen=True)
class DomainPartition:
    target_grade: int
    trainA: Dataset
    trainB: Dataset


# -- loading -----------------------------------------------------------------

def read_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_manifest(path: str | Path, size: int = DEFAULT_IMAGE_SIZE) -> Dataset:
    """Load a CSV manifest (``patient_id,image_path,ventilation_hours[,grade][,split]``).

    Image paths are resolved relative to the manifest's directory and every
    image is resized to ``size`` x ``size``.
    """
    from .augment import resize

    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        warnings.warn(f"manifest {path} has no rows; returning an empty dataset", stacklevel=2)
        return Dataset()
    records = []
    for lineno, row in enumerate(rows, start=2):
        grade_txt = (row.get("grade") or "").strip()
        hours_txt = (row.get("ventilation_hours") or "").strip()
        try:
            if grade_txt:
                grade = GradeLabel(int(float(grade_txt))).value
            elif hours_txt:
                grade = grade_from_ventilation(float(hours_txt)).value
            else:
                raise DataError("row has neither grade nor ventilation_hours")
        except (DataError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        img_path = path.parent / (row.get("image_path") or "").strip()
        if not img_path.is_file():
            raise DataError(f"{path}:{lineno}: image file not found: {img_path}")
        try:
            pixels = read_rgb(img_path)
        except Exception as exc:  # PIL raises a zoo of types
            raise DataError(f"{path}:{lineno}: cannot decode {img_path}: {exc}") from exc
        records.append(
            ImageRecord(
                patient_id=(row.get("patient_id") or "").strip(),
                pixels=resize(pixels, size, size),
                grade=grade,
                source_path=str(img_path),
            )
        )
    return Dataset(tuple(records))


def load_directory(root: str | Path, size: int = DEFAULT_IMAGE_SIZE) -> Dataset:
    """Fallback ingestion from ``<root>/grade_{1..6}/*.png``; each file is its own patient."""
    from .augment import resize

    root = Path(root)
    records = []
    for g in GRADES:
        for p in sorted((root / f"grade_{g}").glob("*.png")):
            records.append(
                ImageRecord(patient_id=p.stem, pixels=resize(read_rgb(p), size, size), grade=g, source_path=str(p))
            )
    if not records:
        warnings.warn(f"no grade_N/*.png images under {root}", stacklevel=2)
    return Dataset(tuple(records))


# -- splitting ----------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    ds: Dataset, ratio: float = 0.7, seed: int = 0, by_patient: bool = True
) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split, stratified per grade.

    With ``by_patient`` whole patients go to one side (patients are stratified
    by their most frequent grade); otherwise images are split individually.
    Record order within each side follows the input order.
    """
    if not 0 < ratio < 1:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(ds), dtype=bool)

    if by_patient:
        by_pid: dict[str, list[int]] = {}
        for i, r in enumerate(ds):
            by_pid.setdefault(r.patient_id, []).append(i)
        strata: dict[int, list[str]] = {}
        for pid in sorted(by_pid):
            grades = Counter(ds[i].grade for i in by_pid[pid])
            main = min(grades, key=lambda g: (-grades[g], g))
            strata.setdefault(main, []).append(pid)
        for g in GRADES:
            pids = strata.get(g, [])
            if not pids:
                warnings.warn(f"grade {g} has no patients; stratum skipped", stacklevel=2)
                continue
            order = rng.permutation(len(pids))
            n_train = _round_half_up(ratio * len(pids))
            if len(pids) >= 2:
                n_train = min(max(n_train, 1), len(pids) - 1)
            for j in order[:n_train]:
                train_mask[by_pid[pids[j]]] = True
    else:
        grades = np.array([r.grade for r in ds])
        for g in GRADES:
            idx = np.flatnonzero(grades == g)
            if idx.size == 0:
                warnings.warn(f"grade {g} has no images; stratum skipped", stacklevel=2)
                continue
            n_train = _round_half_up(ratio * idx.size)
            train_mask[idx[rng.permutation(idx.size)[:n_train]]] = True

    train = Dataset(tuple(r for r, m in zip(ds, train_mask) if m))
    test = Dataset(tuple(r for r, m in zip(ds, train_mask) if not m))
    return train, test


def one_vs_all_partition(train: Dataset, g: GradeLabel | int) -> DomainPartition:
    g = _as_grade(g)
    if len(train) == 0:
        raise DataError("training set is empty")
    target = tuple(r for r in train if r.grade == g)
    if not target:
        raise DataError(f"no training images of grade {g}; cannot build a target domain")
    source = tuple(r for r in train if r.grade != g)
    return DomainPartition(target_grade=g, trainA=Dataset(source), trainB=Dataset(target))


# -- workspace record tables ---------------------------------------------------

RECORD_FIELDS = ("record_id", "patient_id", "grade", "provenance", "image_path", "sha256", "source_path")


def save_records(
    ds: Dataset, image_dir: Path, table: Path, names: Sequence[str] | None = None, root: Path | None = None
) -> list[dict]:
    """Write every record as PNG under ``image_dir`` and index them in a CSV ``table``.

    Paths in the table are relative to ``root`` (default: the table's directory).
    """
    root = Path(root or table.parent)
    rows = []
    for i, r in enumerate(ds):
        name = names[i] if names is not None else f"{i:06d}.png"
        out = Path(image_dir) / name
        write_png(out, r.pixels)
        rows.append(
            {
                "record_id": i,
                "patient_id": r.patient_id,
                "grade": r.grade,
                "provenance": r.provenance,
                "image_path": out.relative_to(root).as_posix(),
                "sha256": r.sha256,
                "source_path": r.source_path,
            }
        )
    write_table(table, rows)
    return rows


def write_table(table: Path, rows: Iterable[dict], fields: Sequence[str] = RECORD_FIELDS) -> None:
    table.parent.mkdir(parents=True, exist_ok=True)
    with table.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def load_records(table: Path, root: Path | None = None) -> Dataset:
    table = Path(table)
    root = Path(root or table.parent)
    with table.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Dataset(
        tuple(
            ImageRecord(
                patient_id=row["patient_id"],
                pixels=read_rgb(root / row["image_path"]),
                grade=int(row["grade"]),
                provenance=row["provenance"],
                source_path=row.get("source_path", ""),
            )
            for row in rows
        )
    )
