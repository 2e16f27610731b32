"""Structured Gaussian posterior over the latent codes of a batch of cliques.

For latent dimension ``k`` the posterior precision over the ``n`` frames is

    P_k = diag(s[:, k]) @ q @ diag(s[:, k])

with ``q = 2 L + lam I`` the prior precision and ``s`` the encoder's positive
precision-scale head. Because ``diag(s_k)`` is diagonal, the upper Cholesky
factor of ``P_k`` is ``R_q @ diag(s_k)`` where ``R_q`` is the upper factor of
``q``; only ``q`` is ever factorized, once per clique.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .graph import PriorPrecision

SCALE_SEMANTICS = ("precision", "std")


@dataclass
class StructuredPosterior:
    mu: torch.Tensor
    scale: torch.Tensor
    clique_sizes: tuple[int, ...]
    # per clique: upper factor of q, shape (c, c)
    q_chol: list[torch.Tensor]
    q_blocks: list[torch.Tensor]
    # per clique: q * inv(q) elementwise, used for tr(q P_k^-1)
    trace_kernels: list[torch.Tensor]

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def slices(self):
        start = 0
        for c in self.clique_sizes:
            yield slice(start, start + c)
            start += c

    def chol(self, clique: int) -> torch.Tensor:
        """Upper Cholesky factors ``R_k`` of ``P_k`` for one clique, shape (d, c, c)."""
        sl = list(self.slices())[clique]
        s = self.scale[sl]  # (c, d)
        return self.q_chol[clique].unsqueeze(0) * s.T.unsqueeze(1)

    def precision(self, clique: int) -> torch.Tensor:
        """Dense ``P_k`` for one clique, shape (d, c, c)."""
        sl = list(self.slices())[clique]
        s = self.scale[sl].T  # (d, c)
        return s.unsqueeze(2) * self.q_blocks[clique].unsqueeze(0) * s.unsqueeze(1)


def precision_scale(head: torch.Tensor, semantics: str = "precision") -> torch.Tensor:
    """Map the encoder's positive second head to a precision scale.

    ``"precision"`` uses the head as is; ``"std"`` reads it as a standard
    deviation-like quantity and inverts it.
    """
    if semantics == "precision":
        return head
    if semantics == "std":
        return 1.0 / head
    raise ValueError(f"unknown scale semantics {semantics!r}; expected one of {SCALE_SEMANTICS}")


def assemble_posterior(mu: torch.Tensor, scale: torch.Tensor,
                       prior: PriorPrecision) -> StructuredPosterior:
    if mu.ndim != 2 or mu.shape != scale.shape:
        raise ValueError(f"mu and scale must share an (n, d) shape, got {tuple(mu.shape)} and {tuple(scale.shape)}")
    if mu.shape[0] != prior.n:
        raise ValueError(f"posterior has {mu.shape[0]} frames but the prior covers {prior.n}")
    if not bool(torch.all(scale > 0)):
        raise ValueError("scale must be strictly positive")

    q_chol, q_blocks, kernels = [], [], []
    for block in prior.blocks:
        try:
            upper = np.linalg.cholesky(block).T
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError("prior precision block is not positive definite") from exc
        q_chol.append(torch.as_tensor(upper, dtype=mu.dtype, device=mu.device))
        q_blocks.append(torch.tensor(np.array(block), dtype=mu.dtype, device=mu.device))
        kernels.append(torch.as_tensor(block * np.linalg.inv(block), dtype=mu.dtype, device=mu.device))
    return StructuredPosterior(mu=mu, scale=scale, clique_sizes=prior.clique_sizes,
                               q_chol=q_chol, q_blocks=q_blocks, trace_kernels=kernels)


def sample(post: StructuredPosterior, noise: torch.Tensor, structured: bool = True) -> torch.Tensor:
    """Reparameterized draw ``z[:, k] = mu[:, k] + R_k^-1 noise[:, k]``.

    ``noise`` must be standard normal with the shape of ``mu``. With
    ``structured=False`` each frame is drawn independently using only the
    diagonal of ``P_k``.
    """
    if noise.shape != post.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match mu {tuple(post.mu.shape)}")
    parts = []
    for i, sl in enumerate(post.slices()):
        s = post.scale[sl]
        eps = noise[sl]
        if structured:
            # R_k^-1 = diag(1/s_k) R_q^-1, shared triangular solve for all k
            w = torch.linalg.solve_triangular(post.q_chol[i], eps, upper=True)
            parts.append(post.mu[sl] + w / s)
        else:
            qdiag = torch.diagonal(post.q_blocks[i]).unsqueeze(1)
            parts.append(post.mu[sl] + eps / (s * torch.sqrt(qdiag)))
    return torch.cat(parts, dim=0)


def kl_per_clique(post: StructuredPosterior) -> torch.Tensor:
    """KL(posterior || prior) for each clique, summed over latent dimensions."""
    out = []
    for i, sl in enumerate(post.slices()):
        mu, s = post.mu[sl], post.scale[sl]
        c = mu.shape[0]
        q = post.q_blocks[i]
        u = 1.0 / s
        # tr(q P_k^-1) = u_k^T (q * q^-1) u_k
        trace = torch.einsum("ik,ij,jk->k", u, post.trace_kernels[i], u)
        mahal = torch.einsum("ik,ij,jk->k", mu, q, mu)
        # logdet P_k - logdet q = 2 sum log s_k (the diag(R_q) terms cancel)
        logdet_ratio = 2.0 * torch.log(s).sum(dim=0)
        out.append(0.5 * (trace - c + mahal + logdet_ratio).sum())
    return torch.stack(out)


def kl_divergence(post: StructuredPosterior, prior: PriorPrecision | None = None) -> torch.Tensor:
    if prior is not None and tuple(prior.clique_sizes) != tuple(post.clique_sizes):
        raise ValueError("prior and posterior clique structures differ")
    return kl_per_clique(post).sum()
