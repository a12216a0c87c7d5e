"""Per-partition CycleGAN / CUT training, sample generation and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..data_model import DataError, Dataset, DomainPartition, GradeLabel, ImageRecord
from .losses import (
    adversarial_loss,
    cycle_loss,
    generator_adversarial_loss,
    patch_nce_from_features,
)
from .networks import PatchDiscriminator, PatchSampleF, ResnetGenerator, init_weights

logger = logging.getLogger(__name__)


class GanDivergence(RuntimeError):
    """Raised when a loss turns NaN or infinite during training."""


@dataclass
class GanConfig:
    variant: str = "cut"
    epochs: int = 200
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    lambda_cyc: float = 10.0
    lambda_nce: float = 1.0
    nce_tau: float = 0.07
    num_patches: int = 256
    negatives_per_anchor: int | None = None
    nce_layers: tuple[int, ...] = (0, 4, 8, 12, 16)
    nce_idt: bool = True
    projector_dim: int = 256
    ngf: int = 64
    ndf: int = 64
    n_down: int = 2
    n_blocks: int = 9
    d_layers: int = 3
    max_steps_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        self.nce_layers = tuple(int(i) for i in self.nce_layers)
        if self.variant not in ("cut", "cyclegan"):
            raise ValueError(f"unknown GAN variant {self.variant!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.nce_tau <= 0:
            raise ValueError("nce_tau must be positive")
        if self.lambda_cyc < 0:
            raise ValueError("lambda_cyc must be >= 0")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1 and lr > 0")
        if self.variant == "cut":
            neg = self.num_patches - 1 if self.negatives_per_anchor is None else self.negatives_per_anchor
            if self.num_patches < 2 or neg < 1 or neg > self.num_patches - 1:
                raise ValueError("CUT needs >= 2 patches per image and 1..patches-1 negatives per anchor")

    @classmethod
    def desk(cls, variant: str, **overrides) -> "GanConfig":
        base = dict(
            variant=variant, epochs=5, batch_size=4, ngf=16, ndf=16, n_down=2, n_blocks=2,
            d_layers=2, num_patches=64, nce_layers=(0, 4, 7, 10, 12), projector_dim=64,
        )
        base.update(overrides)
        return cls(**base)


def _to_tensor(ds: Dataset) -> torch.Tensor:
    x = torch.from_numpy(ds.images().astype(np.float32)).permute(0, 3, 1, 2)
    return x / 127.5 - 1.0


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """``(N, 3, H, W)`` tensor in [-1, 1] -> ``(N, H, W, 3)`` uint8."""
    y = ((x.detach().clamp(-1, 1) + 1.0) * 127.5).round()
    return y.permute(0, 2, 3, 1).to(torch.uint8).cpu().numpy()


def _check_finite(losses: dict[str, float], epoch: int, step: int) -> None:
    bad = {k: v for k, v in losses.items() if not math.isfinite(v)}
    if bad:
        raise GanDivergence(f"non-finite loss at epoch {epoch}, step {step}: {bad}")


def _check_partition(part: DomainPartition) -> None:
    if len(part.trainA) == 0 or len(part.trainB) == 0:
        raise DataError("both source (trainA) and target (trainB) domains must be non-empty")
    sizes = {r.pixels.shape for r in part.trainA} | {r.pixels.shape for r in part.trainB}
    if len(sizes) != 1:
        raise DataError(f"mixed image sizes in partition: {sorted(sizes)}")


def _batches(n_a: int, n_b: int, cfg: GanConfig, rng: np.random.Generator):
    steps = math.ceil(max(n_a, n_b) / cfg.batch_size)
    if cfg.max_steps_per_epoch:
        steps = min(steps, cfg.max_steps_per_epoch)
    order = rng.permutation(max(steps * cfg.batch_size, n_a)) % n_a
    for s in range(steps):
        ia = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
        ib = rng.integers(0, n_b, size=len(ia))
        yield s, torch.from_numpy(ia), torch.from_numpy(ib)


def _summarise(epoch: int, sums: dict[str, float], steps: int) -> dict[str, float]:
    return {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}


def _adam(params, cfg: GanConfig):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, 0.999))


def _set_requires_grad(nets: Sequence[nn.Module], flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


@dataclass
class CycleGanResult:
    G: ResnetGenerator
    F: ResnetGenerator
    D_X: PatchDiscriminator
    D_Y: PatchDiscriminator
    history: list[dict]
    config: GanConfig


@dataclass
class CutResult:
    G: ResnetGenerator
    D: PatchDiscriminator
    projector: PatchSampleF
    history: list[dict]
    config: GanConfig


def build_generator(cfg: GanConfig) -> ResnetGenerator:
    return init_weights(ResnetGenerator(cfg.ngf, cfg.n_down, cfg.n_blocks))


def build_discriminator(cfg: GanConfig) -> PatchDiscriminator:
    return init_weights(PatchDiscriminator(cfg.ndf, cfg.d_layers))


def train_cyclegan(part: DomainPartition, cfg: GanConfig) -> CycleGanResult:
    """G maps trainA (X) into the target grade (Y); F maps back."""
    if cfg.variant != "cyclegan":
        raise ValueError("train_cyclegan needs cfg.variant == 'cyclegan'")
    _check_partition(part)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    G, Fn = build_generator(cfg), build_generator(cfg)
    D_X, D_Y = build_discriminator(cfg), build_discriminator(cfg)
    opt_g = _adam(list(G.parameters()) + list(Fn.parameters()), cfg)
    opt_d = _adam(list(D_X.parameters()) + list(D_Y.parameters()), cfg)
    xa, xb = _to_tensor(part.trainA), _to_tensor(part.trainB)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        sums: dict[str, float] = {}
        steps = 0
        for step, ia, ib in _batches(len(xa), len(xb), cfg, rng):
            a, b = xa[ia], xb[ib]
            fake_b, fake_a = G(a), Fn(b)
            rec_a, rec_b = Fn(fake_b), G(fake_a)

            _set_requires_grad([D_X, D_Y], False)
            adv = generator_adversarial_loss(D_Y.score(fake_b)) + generator_adversarial_loss(D_X.score(fake_a))
            cyc = cycle_loss(a, rec_a, b, rec_b)
            g_total = adv + cfg.lambda_cyc * cyc
            opt_g.zero_grad()
            g_total.backward()
            opt_g.step()

            _set_requires_grad([D_X, D_Y], True)
            gan_y = adversarial_loss(D_Y.score(b), D_Y.score(fake_b.detach()))
            gan_x = adversarial_loss(D_X.score(a), D_X.score(fake_a.detach()))
            d_loss = -0.5 * (gan_x + gan_y)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            vals = {
                "G_total": g_total.item(),
                "G_adv": adv.item(),
                "cycle": cyc.item(),
                "gan_X": gan_x.item(),
                "gan_Y": gan_y.item(),
                "D": d_loss.item(),
            }
            _check_finite(vals, epoch, step)
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        history.append(_summarise(epoch, sums, steps))
        logger.info("cyclegan grade %s epoch %d: %s", part.target_grade, epoch, history[-1])
    return CycleGanResult(G, Fn, D_X, D_Y, history, cfg)


def _nce(G: ResnetGenerator, proj: PatchSampleF, src, tgt, cfg: GanConfig, gen: torch.Generator):
    feat_k = G.encode(src, cfg.nce_layers)
    feat_q = G.encode(tgt, cfg.nce_layers)
    k_pool, ids = proj(feat_k, cfg.num_patches, generator=gen)
    q_pool, _ = proj(feat_q, cfg.num_patches, patch_ids=ids)
    losses = []
    for q, k in zip(q_pool, k_pool):
        if cfg.negatives_per_anchor is not None and cfg.negatives_per_anchor < q.shape[1] - 1:
            keep = torch.randperm(q.shape[1], generator=gen)[: cfg.negatives_per_anchor + 1]
            q, k = q[:, keep], k[:, keep]
        losses.append(patch_nce_from_features(q, k, cfg.nce_tau))
    return torch.stack(losses).mean()


def train_cut(part: DomainPartition, cfg: GanConfig) -> CutResult:
    if cfg.variant != "cut":
        raise ValueError("train_cut needs cfg.variant == 'cut'")
    _check_partition(part)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    G, D = build_generator(cfg), build_discriminator(cfg)
    xa, xb = _to_tensor(part.trainA), _to_tensor(part.trainB)
    with torch.no_grad():
        chans = [f.shape[1] for f in G.encode(xa[:1], cfg.nce_layers)]
    proj = init_weights(PatchSampleF(chans, cfg.projector_dim))
    opt_g = _adam(list(G.parameters()) + list(proj.parameters()), cfg)
    opt_d = _adam(D.parameters(), cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        sums: dict[str, float] = {}
        steps = 0
        for step, ia, ib in _batches(len(xa), len(xb), cfg, rng):
            a, b = xa[ia], xb[ib]
            real = torch.cat([a, b]) if cfg.nce_idt else a
            fake = G(real)
            fake_b = fake[: len(a)]

            _set_requires_grad([D], False)
            adv = generator_adversarial_loss(D.score(fake_b))
            nce = _nce(G, proj, a, fake_b, cfg, gen)
            if cfg.nce_idt:
                nce_y = _nce(G, proj, b, fake[len(a) :], cfg, gen)
                nce_total = 0.5 * (nce + nce_y)
            else:
                nce_total = nce
            g_total = adv + cfg.lambda_nce * nce_total
            opt_g.zero_grad()
            g_total.backward()
            opt_g.step()

            _set_requires_grad([D], True)
            gan_y = adversarial_loss(D.score(b), D.score(fake_b.detach()))
            d_loss = -0.5 * gan_y
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            vals = {
                "G_total": g_total.item(),
                "G_adv": adv.item(),
                "nce": nce_total.item(),
                "gan_Y": gan_y.item(),
                "D": d_loss.item(),
            }
            _check_finite(vals, epoch, step)
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        history.append(_summarise(epoch, sums, steps))
        logger.info("cut grade %s epoch %d: %s", part.target_grade, epoch, history[-1])
    return CutResult(G, D, proj, history, cfg)


def train_gan(part: DomainPartition, cfg: GanConfig):
    return train_cyclegan(part, cfg) if cfg.variant == "cyclegan" else train_cut(part, cfg)


@torch.no_grad()
def translate(G: ResnetGenerator, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Apply G to ``(N, H, W, 3)`` uint8 images; returns uint8 of the same shape."""
    G.eval()
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.from_numpy(images[i : i + batch_size].astype(np.float32)).permute(0, 3, 1, 2) / 127.5 - 1.0
        out.append(to_uint8(G(x)))
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], np.uint8)


def generate(
    G: ResnetGenerator | None,
    sources: Dataset,
    target_grade: GradeLabel | int,
    n: int,
    variant: str = "cut",
    batch_size: int = 16,
) -> Dataset:
    """Translate ``n`` source images (cycling through ``sources``) into ``target_grade``."""
    if G is None:
        raise RuntimeError("generator is not loaded")
    grade = target_grade.value if isinstance(target_grade, GradeLabel) else GradeLabel(target_grade).value
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(sources) == 0:
        raise DataError("no source images to translate")
    if variant not in ("cut", "cyclegan"):
        raise ValueError(f"unknown variant {variant!r}")
    picks = [sources[i % len(sources)] for i in range(n)]
    translated = translate(G, np.stack([r.pixels for r in picks]), batch_size)
    return Dataset(
        tuple(
            ImageRecord(
                patient_id=r.patient_id,
                pixels=px,
                grade=grade,
                provenance=variant,
                source_path=f"{variant}:{r.source_path}",
            )
            for r, px in zip(picks, translated)
        )
    )


# -- persistence ---------------------------------------------------------------

def write_history(path: Path, history: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss_name", "value"])
        for row in history:
            for k, v in row.items():
                if k != "epoch":
                    w.writerow([row["epoch"], k, repr(float(v))])


def save_checkpoint(out_dir: Path, result, grade: int) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    nets = (
        {"G": result.G, "F": result.F, "D_X": result.D_X, "D_Y": result.D_Y}
        if cfg.variant == "cyclegan"
        else {"G": result.G, "D": result.D, "projector": result.projector}
    )
    files = {}
    for name, net in nets.items():
        torch.save(net.state_dict(), out_dir / f"{name}.pt")
        files[name] = f"{name}.pt"
    manifest = {
        "variant": cfg.variant,
        "grade": int(grade),
        "config": asdict(cfg),
        "seed": cfg.seed,
        "epoch": len(result.history),
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_history(out_dir / "history.csv", result.history)
    return manifest


def load_generator(ckpt_dir: Path) -> tuple[ResnetGenerator, dict]:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    cfg = GanConfig(**manifest["config"])
    G = ResnetGenerator(cfg.ngf, cfg.n_down, cfg.n_blocks)
    G.load_state_dict(torch.load(ckpt_dir / manifest["files"]["G"], weights_only=True))
    G.eval()
    return G, manifest
