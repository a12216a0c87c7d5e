"""Pipeline configuration: a YAML tree with profile defaults and dotted-key overrides.

Schema (all keys optional; ``desk``/``paper`` profiles fill the rest)::

    profile: desk | paper
    seed: 0
    paths:      {manifest, image_root, workspace}
    data:       {image_size}
    split:      {ratio, by_patient}
    augment:    {factor, targets, strategy, min_crop_area, crop_area, op_mix}
    gan:        {variants, grades, train_on, workers, generate_factor, generate_targets,
                 epochs, batch_size, lr, lambda_cyc, lambda_nce, nce_tau, num_patches,
                 negatives_per_anchor, nce_layers, nce_idt, projector_dim, ngf, ndf,
                 n_down, n_blocks, d_layers, max_steps_per_epoch}
    classifier: {backbones, methods, compose, pretrained, weights, trainable_scope,
                 epochs, batch_size, lr, weight_decay, val_fraction, class_weighting}
    interpret:  {backbone, low_radius_fraction, max_images_per_group, target,
                 allow_vit, overlay_alpha, overlays_per_group}
    report:     {title}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..augment import KINDS


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


METHODS = ("original", "transform", "cut", "cyclegan")
BACKBONES = ("inception_cnn", "vit")


@dataclass
class PathsConfig:
    manifest: str | None = None
    image_root: str | None = None
    workspace: str = "workspace"


@dataclass
class DataConfig:
    image_size: int = 256


@dataclass
class SplitConfig:
    ratio: float = 0.7
    by_patient: bool = True


@dataclass
class AugmentConfig:
    factor: float | None = None
    targets: dict[int, int] | None = None
    strategy: str = "cycle"
    min_crop_area: float = 0.25
    crop_area: tuple[float, float] = (0.5, 0.9)
    op_mix: dict[str, float] | None = None


@dataclass
class GanSection:
    variants: list[str] = field(default_factory=lambda: ["cut", "cyclegan"])
    grades: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    train_on: str = "augmented"
    workers: int = 1
    generate_factor: float | None = None
    generate_targets: dict[str, dict[int, int]] | None = None
    epochs: int = 200
    batch_size: int = 1
    lr: float = 2e-4
    lambda_cyc: float = 10.0
    lambda_nce: float = 1.0
    nce_tau: float = 0.07
    num_patches: int = 256
    negatives_per_anchor: int | None = None
    nce_layers: list[int] = field(default_factory=lambda: [0, 4, 8, 12, 16])
    nce_idt: bool = True
    projector_dim: int = 256
    ngf: int = 64
    ndf: int = 64
    n_down: int = 2
    n_blocks: int = 9
    d_layers: int = 3
    max_steps_per_epoch: int | None = None


@dataclass
class ClassifierSection:
    backbones: list[str] = field(default_factory=lambda: ["inception_cnn", "vit"])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    compose: str = "with_originals"
    pretrained: bool = True
    weights: dict[str, str | None] = field(default_factory=dict)
    trainable_scope: str = "last_block_and_head"
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.0
    val_fraction: float = 0.15
    class_weighting: bool = False


@dataclass
class InterpretConfig:
    backbone: str = "inception_cnn"
    low_radius_fraction: float = 0.25
    max_images_per_group: int = 16
    target: str = "predicted"
    allow_vit: bool = False
    overlay_alpha: float = 0.4
    overlays_per_group: int = 1


@dataclass
class ReportConfig:
    title: str = "Inhalation injury grading report"


@dataclass
class PipelineConfig:
    profile: str = "desk"
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    gan: GanSection = field(default_factory=GanSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Content hash of everything except filesystem paths."""
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def workspace(self) -> Path:
        return Path(self.paths.workspace)


PROFILES: dict[str, dict] = {
    "desk": {
        "data": {"image_size": 32},
        "augment": {"factor": 3.0},
        "gan": {
            "epochs": 2, "batch_size": 4, "ngf": 16, "ndf": 16, "n_blocks": 2, "d_layers": 2,
            "num_patches": 64, "nce_layers": [0, 4, 7, 10, 12], "projector_dim": 64,
            "max_steps_per_epoch": 25, "generate_factor": 3.0,
        },
        "classifier": {
            "epochs": 12, "lr": 1e-3, "trainable_scope": "full", "pretrained": False,
        },
        "interpret": {"max_images_per_group": 6},
    },
    "paper": {
        "data": {"image_size": 256},
        "gan": {"generate_targets": {
            "cyclegan": {1: 702, 2: 2322, 3: 810, 4: 1557, 5: 690, 6: 960},
            "cut": {1: 1098, 2: 837, 3: 1070, 4: 918, 5: 1098, 6: 1053},
        }},
        "classifier": {"weights": {"inception_cnn": "torchvision:DEFAULT", "vit": "torchvision:DEFAULT"}},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("targets", "generate_targets", "weights", "op_mix"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(tree: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_SECTIONS = {
    (PipelineConfig, "paths"): PathsConfig,
    (PipelineConfig, "data"): DataConfig,
    (PipelineConfig, "split"): SplitConfig,
    (PipelineConfig, "augment"): AugmentConfig,
    (PipelineConfig, "gan"): GanSection,
    (PipelineConfig, "classifier"): ClassifierSection,
    (PipelineConfig, "interpret"): InterpretConfig,
    (PipelineConfig, "report"): ReportConfig,
}


def _int_keys(d: dict | None, where: str) -> dict | None:
    if d is None:
        return None
    try:
        return {int(k): int(v) for k, v in d.items()}
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"{where} must map grades to counts") from exc


def validate(cfg: PipelineConfig) -> PipelineConfig:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    need(cfg.profile in PROFILES, f"profile must be one of {sorted(PROFILES)}")
    need(isinstance(cfg.seed, int), "seed must be an integer")
    need(isinstance(cfg.data.image_size, int) and cfg.data.image_size >= 8, "data.image_size must be an integer >= 8")
    need(isinstance(cfg.split.ratio, (int, float)) and 0 < cfg.split.ratio < 1, "split.ratio must lie in (0, 1)")
    a = cfg.augment
    a.targets = _int_keys(a.targets, "augment.targets")
    need(a.factor is None or a.factor >= 1, "augment.factor must be >= 1")
    need(a.strategy in ("cycle", "sample"), "augment.strategy must be cycle or sample")
    a.crop_area = tuple(float(x) for x in a.crop_area)
    need(len(a.crop_area) == 2 and a.min_crop_area <= a.crop_area[0] <= a.crop_area[1] < 1,
         "augment.crop_area must be [lo, hi] with min_crop_area <= lo <= hi < 1")
    need(a.op_mix is None or set(a.op_mix) <= set(KINDS), f"augment.op_mix keys must be among {KINDS}")
    g = cfg.gan
    need(set(g.variants) <= {"cut", "cyclegan"} and g.variants, "gan.variants must be a subset of [cut, cyclegan]")
    need(set(g.grades) <= set(range(1, 7)) and g.grades, "gan.grades must be grades in 1..6")
    need(g.train_on in ("augmented", "original"), "gan.train_on must be augmented or original")
    need(isinstance(g.workers, int) and g.workers >= 1, "gan.workers must be >= 1")
    need(g.epochs >= 1 and g.batch_size >= 1 and g.lr > 0, "gan.epochs/batch_size must be >= 1 and gan.lr > 0")
    need(g.nce_tau > 0 and g.lambda_cyc >= 0, "gan.nce_tau must be > 0 and gan.lambda_cyc >= 0")
    need(cfg.data.image_size % (2**g.n_down) == 0, "data.image_size must be divisible by 2**gan.n_down")
    if g.generate_targets is not None:
        g.generate_targets = {str(v): _int_keys(t, f"gan.generate_targets.{v}") for v, t in g.generate_targets.items()}
    need(g.generate_factor is None or g.generate_factor > 0, "gan.generate_factor must be > 0")
    c = cfg.classifier
    need(set(c.backbones) <= set(BACKBONES) and c.backbones, f"classifier.backbones must be a subset of {BACKBONES}")
    need(set(c.methods) <= set(METHODS) and c.methods, f"classifier.methods must be a subset of {METHODS}")
    need(c.compose in ("with_originals", "alone", "with_transforms"),
         "classifier.compose must be with_originals, alone or with_transforms")
    need(c.trainable_scope in ("head_only", "last_block_and_head", "full"), "classifier.trainable_scope is invalid")
    need(c.epochs >= 1 and c.batch_size >= 1 and c.lr > 0, "classifier.epochs/batch_size >= 1 and lr > 0 required")
    need(0 <= c.val_fraction < 1, "classifier.val_fraction must lie in [0, 1)")
    i = cfg.interpret
    need(i.backbone in BACKBONES, "interpret.backbone is invalid")
    need(0 < i.low_radius_fraction <= 1, "interpret.low_radius_fraction must lie in (0, 1]")
    need(i.target in ("predicted", "true"), "interpret.target must be predicted or true")
    need(0 <= i.overlay_alpha <= 1, "interpret.overlay_alpha must lie in [0, 1]")
    need(i.max_images_per_group >= 1, "interpret.max_images_per_group must be >= 1")
    return cfg


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    profile: str | None = None,
) -> PipelineConfig:
    """Profile defaults <- YAML file <- dotted overrides, then validation."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        base_dir = path.parent
        paths = raw.get("paths") or {}
        for key in ("manifest", "image_root", "workspace"):
            if isinstance(paths.get(key), str) and not Path(paths[key]).is_absolute():
                paths[key] = str(base_dir / paths[key])
        if paths:
            raw["paths"] = paths
    for dotted, value in (overrides or {}).items():
        set_dotted(raw, dotted, value)
    if profile is not None:
        raw["profile"] = profile
    prof = raw.get("profile", "desk")
    if prof not in PROFILES:
        raise ConfigError(f"profile must be one of {sorted(PROFILES)}, got {prof!r}")
    merged = _merge(PROFILES[prof], raw)
    merged["profile"] = prof
    return validate(_build(PipelineConfig, merged, ""))


def dump_config(cfg: PipelineConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(json.loads(json.dumps(cfg.to_dict(), default=list)), sort_keys=True))
