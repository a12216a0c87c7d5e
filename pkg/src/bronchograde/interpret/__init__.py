from .gradcam import (
    Heatmap,
    cam_from_maps,
    grad_cam,
    mean_intensity_table,
    normalize_map,
)
from .stats import (
    ChannelHistograms,
    FeatureEmbedding,
    FrequencySpectrum,
    channel_histograms,
    frequency_spectrum,
    pca_project,
    separability_score,
)

__all__ = [
    "ChannelHistograms",
    "FeatureEmbedding",
    "FrequencySpectrum",
    "Heatmap",
    "cam_from_maps",
    "channel_histograms",
    "frequency_spectrum",
    "grad_cam",
    "mean_intensity_table",
    "normalize_map",
    "pca_project",
    "separability_score",
]
