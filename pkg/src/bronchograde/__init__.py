"""Inhalation-injury grading from bronchoscopy images: augmentation, GAN
translation, transfer-learning classifiers, metrics and interpretation."""

__version__ = "0.1.0"
