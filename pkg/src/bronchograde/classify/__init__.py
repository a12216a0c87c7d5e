from .model import (
    LABEL_ORDER,
    ClassifierConfig,
    TrainedClassifier,
    activations_and_gradients,
    build_classifier,
    checkpoint_meta,
    extract_features,
    finetune,
    load_classifier,
    predict,
    predict_batch,
    predict_proba,
    save_classifier,
    trainable_parameter_count,
)

__all__ = [
    "LABEL_ORDER",
    "ClassifierConfig",
    "TrainedClassifier",
    "activations_and_gradients",
    "build_classifier",
    "checkpoint_meta",
    "extract_features",
    "finetune",
    "load_classifier",
    "predict",
    "predict_batch",
    "predict_proba",
    "save_classifier",
    "trainable_parameter_count",
]
