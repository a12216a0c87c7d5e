"""Image statistics (channel histograms, centred spectra) and feature-space
projections (PCA, silhouette separability)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_model import Dataset


def _stack(images) -> np.ndarray:
    if isinstance(images, Dataset):
        if len(images) == 0:
            raise ValueError("empty image set")
        return images.images()
    if isinstance(images, np.ndarray) and images.ndim == 4:
        arr = images
    else:
        images = list(images)
        if not images:
            raise ValueError("empty image set")
        arr = np.stack([np.asarray(i) for i in images])
    if arr.size == 0 or len(arr) == 0:
        raise ValueError("empty image set")
    if arr.shape[-1] != 3:
        raise ValueError(f"expected RGB images, got trailing shape {arr.shape[1:]}")
    return arr


@dataclass(frozen=True)
class ChannelHistograms:
    overall: np.ndarray
    red: np.ndarray
    green: np.ndarray
    blue: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"overall": self.overall, "red": self.red, "green": self.green, "blue": self.blue}


def channel_histograms(images) -> ChannelHistograms:
    """256-bin densities per channel, pooled over every pixel of every image;
    ``overall`` pools the three channels together."""
    arr = _stack(images)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    counts = [np.bincount(arr[..., c].ravel(), minlength=256).astype(np.float64) for c in range(3)]
    overall = counts[0] + counts[1] + counts[2]
    return ChannelHistograms(
        overall=overall / overall.sum(),
        red=counts[0] / counts[0].sum(),
        green=counts[1] / counts[1].sum(),
        blue=counts[2] / counts[2].sum(),
    )


@dataclass(frozen=True)
class FrequencySpectrum:
    log_magnitude: np.ndarray  # log(1 + |F|), DC at (H//2, W//2)
    magnitude: np.ndarray
    low_band_energy: float
    high_band_energy: float
    low_radius_fraction: float

    @property
    def total_energy(self) -> float:
        return self.low_band_energy + self.high_band_energy

    @property
    def high_fraction(self) -> float:
        total = self.total_energy
        return self.high_band_energy / total if total > 0 else 0.0


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def radial_mask(shape: tuple[int, int], low_radius_fraction: float) -> np.ndarray:
    """True inside the low band: distance to the centred DC bin <= fraction * min(H, W) / 2."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot(yy - h // 2, xx - w // 2)
    return r <= low_radius_fraction * min(h, w) / 2


def frequency_spectrum(img: np.ndarray, low_radius_fraction: float = 0.25) -> FrequencySpectrum:
    gray = to_gray(img)
    if gray.ndim != 2 or min(gray.shape) < 2:
        raise ValueError(f"image too small for a spectrum: {gray.shape}")
    if not 0 < low_radius_fraction <= 1:
        raise ValueError("low_radius_fraction must lie in (0, 1]")
    spec = np.fft.fftshift(np.fft.fft2(gray))
    mag = np.abs(spec)
    power = mag**2
    low = radial_mask(gray.shape, low_radius_fraction)
    return FrequencySpectrum(
        log_magnitude=np.log1p(mag),
        magnitude=mag,
        low_band_energy=float(power[low].sum()),
        high_band_energy=float(power[~low].sum()),
        low_radius_fraction=low_radius_fraction,
    )


@dataclass(frozen=True)
class FeatureEmbedding:
    coords: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    labels: np.ndarray | None = None
    separability: float | None = None

    def reconstruct(self) -> np.ndarray:
        return self.coords @ self.components + self.mean


def pca_project(features: np.ndarray, n_components: int = 2, labels=None) -> FeatureEmbedding:
    """Mean-centred PCA via SVD; each component's largest-magnitude loading is made positive."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be an n x d matrix")
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if d < n_components or n_components < 1:
        raise ValueError(f"cannot take {n_components} components of {d}-dimensional data")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s**2 / (n - 1)
    total = var.sum()
    if total == 0 or not np.any(xc):
        raise ValueError("features have zero variance; nothing to project")
    if n_components > len(s):
        raise ValueError(f"only {len(s)} components available from {n} samples")
    comps = vt[:n_components].copy()
    for i, c in enumerate(comps):
        if c[np.argmax(np.abs(c))] < 0:
            comps[i] = -c
    sep = None
    lab = None if labels is None else np.asarray(labels)
    coords = xc @ comps.T
    if lab is not None:
        sep = separability_score(coords, lab)
    return FeatureEmbedding(
        coords=coords,
        explained_variance_ratio=var[:n_components] / total,
        components=comps,
        mean=mean,
        labels=lab,
        separability=sep,
    )


def separability_score(coords: np.ndarray, labels) -> float:
    """Mean silhouette coefficient (Euclidean); 0 when every point coincides."""
    from sklearn.metrics import silhouette_score

    x = np.asarray(coords, dtype=np.float64)
    lab = np.asarray(labels)
    classes, counts = np.unique(lab, return_counts=True)
    if len(classes) < 2:
        raise ValueError("separability needs at least two classes")
    if (counts < 2).any():
        raise ValueError("separability needs at least two points per class")
    if np.ptp(x, axis=0).max() == 0:
        return 0.0
    return float(silhouette_score(x, lab, metric="euclidean"))
