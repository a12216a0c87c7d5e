"""Adversarial, cycle-consistency and PatchNCE objectives."""

from __future__ import annotations

import torch
import torch.nn.functional as F

EPS = 1e-7


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def adversarial_loss(real_scores, fake_scores, eps: float = EPS) -> torch.Tensor:
    """``mean(log D(y)) + mean(log(1 - D(G(x))))`` with scores clamped to [eps, 1 - eps].

    The discriminator maximises this value; it is -2 ln 2 at D = 0.5 everywhere.
    """
    real, fake = _t(real_scores), _t(fake_scores)
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("adversarial_loss needs non-empty score collections")
    real = real.clamp(eps, 1 - eps)
    fake = fake.clamp(eps, 1 - eps)
    return torch.log(real).mean() + torch.log1p(-fake).mean()


def generator_adversarial_loss(fake_scores, eps: float = EPS) -> torch.Tensor:
    """Non-saturating generator objective ``-mean(log D(G(x)))``."""
    fake = _t(fake_scores)
    if fake.numel() == 0:
        raise ValueError("generator_adversarial_loss needs a non-empty score collection")
    return -torch.log(fake.clamp(eps, 1 - eps)).mean()


def cycle_loss(x, x_rec, y, y_rec) -> torch.Tensor:
    """Sum of the mean absolute reconstruction errors of both directions."""
    x, x_rec, y, y_rec = map(_t, (x, x_rec, y, y_rec))
    if x.shape != x_rec.shape or y.shape != y_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}, "
                         f"{tuple(y.shape)} vs {tuple(y_rec.shape)}")
    return (x_rec - x).abs().mean() + (y_rec - y).abs().mean()


def _normalize(v: torch.Tensor, eps: float | None = None) -> torch.Tensor:
    norms = v.norm(dim=-1, keepdim=True)
    if eps is not None:
        return v / norms.clamp(min=eps)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm feature vector cannot be normalised")
    return v / norms


def patch_nce_loss(
    anchor, positive, negatives, tau: float = 0.07, reduction: str = "sum", eps: float | None = None
) -> torch.Tensor:
    """InfoNCE over patch features.

    Shapes: ``anchor``/``positive`` are ``(..., D)``, ``negatives`` is
    ``(..., M, D)`` with M >= 1, where ``...`` is ``(B, P)``, ``(P,)`` or empty.
    Per-anchor losses are summed over the P anchors (``reduction="mean"``
    averages them instead) and averaged over the batch B. A zero-norm vector
    is an error unless ``eps`` is given, in which case norms are clamped to it.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    a, p, n = _t(anchor), _t(positive), _t(negatives)
    if n.ndim < 2 or n.shape[-2] < 1:
        raise ValueError("patch_nce_loss needs at least one negative")
    if a.shape != p.shape or n.shape[:-2] != a.shape[:-1] or n.shape[-1] != a.shape[-1]:
        raise ValueError("anchor, positive and negatives disagree in shape")
    a, p, n = _normalize(a, eps), _normalize(p, eps), _normalize(n, eps)
    l_pos = (a * p).sum(-1, keepdim=True)
    l_neg = torch.einsum("...d,...md->...m", a, n)
    logits = torch.cat([l_pos, l_neg], dim=-1) / tau
    per_anchor = -F.log_softmax(logits, dim=-1)[..., 0]
    while per_anchor.ndim < 2:
        per_anchor = per_anchor.unsqueeze(0)
    per_anchor = per_anchor.reshape(per_anchor.shape[0], -1)
    pooled = per_anchor.sum(-1) if reduction == "sum" else per_anchor.mean(-1)
    return pooled.mean()


def patch_nce_from_features(feat_q: torch.Tensor, feat_k: torch.Tensor, tau: float = 0.07) -> torch.Tensor:
    """PatchNCE for sampled patch sets ``(B, P, D)``: each query's positive is the
    co-located key; the other P-1 keys of the same image are its negatives.

    Returns the mean per-anchor loss (reduction="mean"). Projected features can
    collapse to exactly zero early in training, so norms are clamped rather than
    rejected here.
    """
    b, p, d = feat_q.shape
    if p < 2:
        raise ValueError("need at least two patches per image to form negatives")
    feat_k = feat_k.detach()
    idx = torch.arange(p)
    neg_idx = torch.stack([torch.cat([idx[:i], idx[i + 1 :]]) for i in range(p)])  # (P, P-1)
    negatives = feat_k[:, neg_idx]  # (B, P, P-1, D)
    return patch_nce_loss(feat_q, feat_k, negatives, tau=tau, reduction="mean", eps=1e-12)
