"""PNG figure writers. Output bytes depend only on the inputs (no timestamps)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .stats import ChannelHistograms, FeatureEmbedding  # noqa: E402

_META = {"Software": None}
_LINE_COLORS = {"overall": "black", "red": "tab:red", "green": "tab:green", "blue": "tab:blue"}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=80, metadata=_META)
    plt.close(fig)
    return path


def histogram_panel(hists: Mapping[str, ChannelHistograms], title: str, path: Path) -> Path:
    fig, axes = plt.subplots(1, len(hists), figsize=(3.2 * len(hists), 2.6), squeeze=False)
    bins = np.arange(256)
    for ax, (name, h) in zip(axes[0], hists.items()):
        for key, dens in h.as_dict().items():
            ax.plot(bins, dens, color=_LINE_COLORS[key], lw=0.9 if key != "overall" else 1.3)
        ax.set_title(name, fontsize=9)
        ax.set_xlim(0, 255)
        ax.tick_params(labelsize=7)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def spectrum_panel(spectra: Mapping[str, np.ndarray], title: str, path: Path) -> Path:
    fig, axes = plt.subplots(1, len(spectra), figsize=(2.8 * len(spectra), 2.8), squeeze=False)
    for ax, (name, grid) in zip(axes[0], spectra.items()):
        ax.imshow(grid, cmap="gray")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def pca_scatter(emb: FeatureEmbedding, title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3.6))
    labels = emb.labels if emb.labels is not None else np.zeros(len(emb.coords), int)
    cmap = plt.get_cmap("tab10")
    for i, g in enumerate(np.unique(labels)):
        pts = emb.coords[labels == g]
        ax.scatter(pts[:, 0], pts[:, 1], s=10, color=cmap(i), label=f"grade {g}")
    r = emb.explained_variance_ratio
    ax.set_xlabel(f"PC1 ({r[0]:.1%})", fontsize=8)
    ax.set_ylabel(f"PC2 ({r[1]:.1%})" if len(r) > 1 else "PC2", fontsize=8)
    sep = "" if emb.separability is None else f"  silhouette={emb.separability:.3f}"
    ax.set_title(title + sep, fontsize=9)
    ax.legend(fontsize=6, loc="best")
    ax.tick_params(labelsize=7)
    fig.tight_layout()
    return _save(fig, path)


def overlay(img: np.ndarray, heatmap: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Blend a jet-coloured heatmap over the image at ``alpha`` opacity; uint8 RGB."""
    colored = plt.get_cmap("jet")(heatmap.astype(np.float64) / 255.0)[..., :3] * 255.0
    out = (1 - alpha) * np.asarray(img, np.float64) + alpha * colored
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def heatmap_overlay(img: np.ndarray, heatmap: np.ndarray, path: Path, alpha: float = 0.4) -> Path:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay(img, heatmap, alpha), mode="RGB").save(path, format="PNG")
    return path
