"""Transfer-learning classifiers: build, fine-tune, predict, feature and gradient hooks."""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..data_model import GRADES, Dataset, GradeLabel
from .backbones import make_backbone

logger = logging.getLogger(__name__)

SCOPES = ("head_only", "last_block_and_head", "full")
LABEL_ORDER = tuple(GRADES)  # output index i -> grade i + 1


@dataclass
class ClassifierConfig:
    backbone: str = "inception_cnn"
    pretrained: bool = True
    weights: str | None = None
    trainable_scope: str = "last_block_and_head"
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    image_size: int = 256
    profile: str = "desk"
    class_weighting: bool = False

    def __post_init__(self) -> None:
        if self.backbone not in ("inception_cnn", "vit"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.trainable_scope not in SCOPES:
            raise ValueError(f"trainable_scope must be one of {SCOPES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.image_size < 1:
            raise ValueError("batch_size and image_size must be positive")


@dataclass
class TrainedClassifier:
    config: ClassifierConfig
    net: nn.Module
    label_order: tuple[int, ...] = LABEL_ORDER
    trained: bool = False
    train_hashes: frozenset[str] = frozenset()
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def is_cnn(self) -> bool:
        return self.config.backbone == "inception_cnn"


def _load_weights(net: nn.Module, cfg: ClassifierConfig) -> bool:
    src = cfg.weights
    if src is None:
        return False
    if src.startswith("torchvision:"):
        return False  # handled at construction time
    path = Path(src)
    if not path.is_file():
        warnings.warn(f"weight file {path} not found; using random initialisation", stacklevel=3)
        return False
    state = torch.load(path, map_location="cpu", weights_only=True)
    state = state.get("state_dict", state)
    state = {k: v for k, v in state.items() if not k.startswith("head.")}
    missing, unexpected = net.load_state_dict(state, strict=False)
    logger.info("loaded %s (missing=%d, unexpected=%d)", path, len(missing), len(unexpected))
    return True


def _torchvision_weights(cfg: ClassifierConfig):
    if not (cfg.pretrained and cfg.weights and cfg.weights.startswith("torchvision:")):
        return None
    from torchvision.models import get_model_weights

    name = "googlenet" if cfg.backbone == "inception_cnn" else "vit_b_16"
    try:
        return get_model_weights(name)[cfg.weights.split(":", 1)[1]]
    except Exception as exc:  # noqa: BLE001
        warnings.warn(f"cannot resolve {cfg.weights}: {exc}", stacklevel=3)
        return None


def _trainable_modules(net: nn.Module, scope: str) -> list[nn.Module]:
    if scope == "full":
        return [net]
    if scope == "head_only":
        return [net.head]
    return [net.last_block, net.head]


def _apply_scope(net: nn.Module, scope: str) -> None:
    for p in net.parameters():
        p.requires_grad_(False)
    for m in _trainable_modules(net, scope):
        for p in m.parameters():
            p.requires_grad_(True)


def build_classifier(cfg: ClassifierConfig, _quiet: bool = False) -> TrainedClassifier:
    """Backbone + fresh 6-way head, parameters outside ``trainable_scope`` frozen."""
    torch.manual_seed(cfg.seed)
    tv_weights = _torchvision_weights(cfg) if cfg.profile == "paper" else None
    try:
        net = make_backbone(cfg.backbone, cfg.profile, weights=tv_weights)
    except Exception as exc:  # weight download failures land here
        if tv_weights is None:
            raise
        warnings.warn(f"pretrained weights unavailable ({exc}); using random initialisation", stacklevel=2)
        tv_weights = None
        net = make_backbone(cfg.backbone, cfg.profile)
    loaded = tv_weights is not None or _load_weights(net, cfg)
    if cfg.pretrained and not loaded and not _quiet:
        warnings.warn(
            f"no pretrained weight source for {cfg.backbone} ({cfg.profile} profile); random initialisation",
            stacklevel=2,
        )
    _apply_scope(net, cfg.trainable_scope)
    return TrainedClassifier(config=cfg, net=net)


def trainable_parameter_count(model: TrainedClassifier) -> int:
    return sum(p.numel() for p in model.net.parameters() if p.requires_grad)


# -- tensors ---------------------------------------------------------------------

def _preprocess(model: TrainedClassifier, images: np.ndarray) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2) / 255.0
    size = model.net.input_size
    if x.shape[-1] != size or x.shape[-2] != size:
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    if model.config.profile == "paper":
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        return (x - mean) / std
    return (x - 0.5) / 0.5


def _check_images(model: TrainedClassifier, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    s = model.config.image_size
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (s, s, 3):
        raise ValueError(f"expected {s}x{s}x3 input, got {images.shape[1:] if images.ndim == 4 else images.shape}")
    return images


def _set_train_mode(model: TrainedClassifier) -> None:
    """Train mode only inside the trainable scope so frozen BN statistics stay put."""
    model.net.eval()
    for m in _trainable_modules(model.net, model.config.trainable_scope):
        m.train()


# -- training -------------------------------------------------------------------

def finetune(
    model: TrainedClassifier,
    train: Dataset,
    val: Dataset | None = None,
    cfg: ClassifierConfig | None = None,
) -> tuple[TrainedClassifier, list[dict]]:
    """Cross-entropy fine-tuning; keeps the best-validation-accuracy weights
    (the last epoch's when no validation set is given)."""
    cfg = cfg or model.config
    if len(train) == 0:
        raise ValueError("training set is empty")
    absent = [g for g, c in train.per_grade_counts.items() if c == 0]
    if absent:
        warnings.warn(f"grades absent from the training set: {absent}", stacklevel=2)
    images = _check_images(model, train.images())
    labels = torch.from_numpy(train.labels() - 1)

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    params = [p for p in model.net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    weight = None
    if cfg.class_weighting:
        counts = torch.bincount(labels, minlength=len(LABEL_ORDER)).float()
        weight = torch.where(counts > 0, counts.sum() / (len(LABEL_ORDER) * counts.clamp(min=1)), 0.0)

    history: list[dict] = []
    best_acc, best_state = -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        _set_train_mode(model)
        order = torch.randperm(len(images), generator=gen)
        total, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            x = _preprocess(model, images[idx.numpy()])
            loss = F.cross_entropy(model.net(x), labels[idx], weight=weight)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}, batch {i // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": total / seen, "val_accuracy": float("nan")}
        if val is not None and len(val):
            model.trained = True
            pred = predict_batch(model, val.images())[0]
            row["val_accuracy"] = float(np.mean(pred == val.labels()))
            if row["val_accuracy"] > best_acc:
                best_acc, best_state = row["val_accuracy"], copy.deepcopy(model.net.state_dict())
        history.append(row)
        logger.info("%s epoch %d: %s", cfg.backbone, epoch, row)
    if best_state is not None:
        model.net.load_state_dict(best_state)
    model.net.eval()
    model.trained = True
    model.train_hashes = frozenset(model.train_hashes | train.hashes())
    model.history = history
    return model, history


# -- inference ------------------------------------------------------------------

@torch.no_grad()
def predict_proba(model: TrainedClassifier, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    images = _check_images(model, images)
    model.net.eval()
    out = []
    for i in range(0, len(images), batch_size):
        logits = model.net(_preprocess(model, images[i : i + batch_size])).double()
        out.append(torch.softmax(logits, dim=1).numpy())
    return np.concatenate(out)


def predict_batch(model: TrainedClassifier, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Grades (argmax, ties to the lower grade) and probabilities for a stack of images."""
    probs = predict_proba(model, images)
    return np.asarray(model.label_order)[np.argmax(probs, axis=1)], probs


def predict(model: TrainedClassifier, img: np.ndarray) -> tuple[GradeLabel, np.ndarray]:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected a single HxWx3 image, got shape {img.shape}")
    grades, probs = predict_batch(model, img[None])
    return GradeLabel(int(grades[0])), probs[0]


@torch.no_grad()
def extract_features(model: TrainedClassifier, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Activations feeding the final head; ``(D,)`` for one image, ``(N, D)`` for a stack."""
    if not model.trained:
        raise RuntimeError("model is not trained/loaded")
    images = np.asarray(images)
    single = images.ndim == 3
    images = _check_images(model, images)
    model.net.eval()
    feats = [
        model.net.features(_preprocess(model, images[i : i + batch_size])).double().numpy()
        for i in range(0, len(images), batch_size)
    ]
    out = np.concatenate(feats)
    return out[0] if single else out


def activations_and_gradients(
    model: TrainedClassifier, img: np.ndarray, target_class: int, allow_token_grid: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Last spatial map ``A`` (K, h, w) and ``d logit[target] / dA`` of the same shape.

    ``target_class`` is a grade (1..6). For the ViT backbone the final patch
    token grid stands in for the convolutional map and must be enabled with
    ``allow_token_grid``.
    """
    if int(target_class) not in model.label_order:
        raise ValueError(f"invalid target class {target_class!r}")
    if not model.is_cnn and not allow_token_grid:
        raise ValueError("ViT backbone has no convolutional maps; pass allow_token_grid=True")
    img = _check_images(model, img)
    if len(img) != 1:
        raise ValueError("activations_and_gradients takes one image")
    captured = {}

    def hook(_module, _inp, out):
        captured["A"] = out

    handle = model.net.cam_layer.register_forward_hook(hook)
    try:
        model.net.eval()
        with torch.enable_grad():
            x = _preprocess(model, img)
            logits = model.net(x)
            act = captured["A"]
            grad = torch.autograd.grad(logits[0, model.label_order.index(int(target_class))], act)[0]
    finally:
        handle.remove()
    return act[0].detach().double().numpy(), grad[0].detach().double().numpy()


def logits(model: TrainedClassifier, images: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        model.net.eval()
        return model.net(_preprocess(model, _check_images(model, images))).double().numpy()


# -- persistence ------------------------------------------------------------------

def save_classifier(model: TrainedClassifier, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "config": asdict(model.config),
            "label_order": list(model.label_order),
            "seed": model.config.seed,
            "state_dict": model.net.state_dict(),
            "train_hashes": sorted(model.train_hashes),
            "history": model.history,
            "extra": extra or {},
        },
        path,
    )


def load_classifier(path: str | Path) -> TrainedClassifier:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    model = build_classifier(ClassifierConfig(**{**blob["config"], "pretrained": False, "weights": None}), _quiet=True)
    model.config = ClassifierConfig(**blob["config"])
    model.net.load_state_dict(blob["state_dict"])
    model.net.eval()
    model.label_order = tuple(blob["label_order"])
    model.trained = True
    model.train_hashes = frozenset(blob["train_hashes"])
    model.history = blob.get("history", [])
    model.extra = blob.get("extra", {})
    return model


def checkpoint_meta(path: str | Path) -> dict:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    return {k: blob[k] for k in ("config", "label_order", "seed", "train_hashes", "extra") if k in blob}
