"""Training loss: motion-masked reconstruction, structured KL, l1 sparsity on
moving pixels and a per-clique nuclear norm on the encoder outputs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .graph import PriorPrecision
from .posterior import StructuredPosterior, kl_divergence

BCE_EPS = 1e-6
KL_REDUCTIONS = ("sum", "element")


@dataclass(frozen=True)
class LossWeights:
    """``alpha`` weights the nuclear norm, ``beta`` the sparsity term.

    ``kl_reduction="sum"`` adds the KL in nats. ``"element"`` divides it by
    the number of reconstructed elements (frames x H x W x C), which puts it
    on the same footing as the mean-reduced reconstruction term.
    """

    alpha: float = 0.01
    beta: float = 0.5
    kl_reduction: str = "element"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.kl_reduction not in KL_REDUCTIONS:
            raise ValueError(f"kl_reduction must be one of {KL_REDUCTIONS}")


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    kl: torch.Tensor
    sparsity: torch.Tensor
    nuclear: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("recon", "kl", "sparsity", "nuclear", "total")}


def _moving(mask, like: torch.Tensor) -> torch.Tensor:
    m = getattr(mask, "moving", mask)
    m = torch.as_tensor(m, device=like.device).to(like.dtype)
    if m.shape == like.shape:
        return m
    if m.shape != like.shape[:-1]:
        raise ValueError(f"mask shape {tuple(m.shape)} does not match frames {tuple(like.shape)}")
    return m.unsqueeze(-1).expand_as(like)


def masked_bce(frames: torch.Tensor, recon: torch.Tensor, moving) -> torch.Tensor:
    """Binary cross-entropy averaged over static elements only."""
    if frames.shape != recon.shape:
        raise ValueError(f"frames {tuple(frames.shape)} and recon {tuple(recon.shape)} differ")
    static = 1.0 - _moving(moving, frames)
    count = static.sum()
    if count == 0:
        warnings.warn("masked_bce: every pixel is moving, reconstruction term is 0", RuntimeWarning)
        return (recon * 0).sum()
    b = recon.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = -(frames * torch.log(b) + (1.0 - frames) * torch.log1p(-b))
    return (bce * static).sum() / count


def sparsity_l1(frames: torch.Tensor, recon: torch.Tensor, moving) -> torch.Tensor:
    """Sum of ``|v - b|`` over moving elements, divided by the element count."""
    if frames.shape != recon.shape:
        raise ValueError(f"frames {tuple(frames.shape)} and recon {tuple(recon.shape)} differ")
    m = _moving(moving, frames)
    return (m * (frames - recon).abs()).sum() / frames.numel()


def nuclear_norm(latents: torch.Tensor) -> torch.Tensor:
    if not bool(torch.isfinite(latents).all()):
        raise FloatingPointError("nuclear_norm: non-finite input")
    return torch.linalg.svdvals(latents).sum()


def total_loss(frames: torch.Tensor, recon: torch.Tensor, post: StructuredPosterior,
               prior: PriorPrecision, mask, weights: LossWeights = LossWeights(),
               head: torch.Tensor | None = None) -> LossBreakdown:
    """Assemble the loss for one batch.

    ``frames``/``recon`` are ``(n, H, W, C)`` with frames ordered clique by
    clique as in ``post``. ``head`` is the encoder's second output used in
    the nuclear term; it defaults to ``post.scale``.
    """
    if frames.shape[0] != post.n:
        raise ValueError("frames and posterior cover different numbers of frames")
    head = post.scale if head is None else head
    recon_term = masked_bce(frames, recon, mask)
    kl = kl_divergence(post, prior)
    if weights.kl_reduction == "element":
        kl = kl / frames.numel()
    sparsity = sparsity_l1(frames, recon, mask)
    nuclear = sum(nuclear_norm(torch.cat([post.mu[sl], head[sl]], dim=1)) for sl in post.slices())
    total = recon_term + kl + weights.beta * sparsity + weights.alpha * nuclear
    return LossBreakdown(recon=recon_term, kl=kl, sparsity=sparsity, nuclear=nuclear, total=total)
