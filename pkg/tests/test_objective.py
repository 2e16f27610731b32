import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from glbm.graph import build_prior
from glbm.objective import (LossWeights, masked_bce, nuclear_norm, sparsity_l1,
                            total_loss)
from glbm.posterior import assemble_posterior

from oracles import (central_difference, dense_gaussian_kl, dense_posterior_precision,
                     dense_prior_precision, nuclear_by_eigen)

T = lambda x: torch.as_tensor(np.asarray(x, dtype=np.float64))


def test_bce_at_half_is_log_two():
    frames = torch.full((1, 4, 4, 3), 0.0, dtype=torch.float64)
    frames[..., 0] = 1.0
    recon = torch.full_like(frames, 0.5)
    out = masked_bce(frames, recon, np.zeros((1, 4, 4)))
    assert float(out) == pytest.approx(np.log(2.0), abs=1e-12)


def test_bce_vanishes_when_binary_frames_agree():
    rng = np.random.default_rng(0)
    frames = T(rng.integers(0, 2, size=(2, 5, 5, 3)))
    out = masked_bce(frames, frames.clone(), np.zeros((2, 5, 5)))
    assert 0.0 <= float(out) <= 1e-5


def test_bce_all_moving_is_zero_with_warning():
    frames = T(np.random.default_rng(1).random((2, 3, 3, 3)))
    with pytest.warns(RuntimeWarning):
        out = masked_bce(frames, frames * 0.5, np.ones((2, 3, 3)))
    assert float(out) == 0.0


def test_bce_ignores_moving_pixels():
    frames = torch.zeros(1, 2, 2, 1, dtype=torch.float64)
    recon = torch.full_like(frames, 0.5)
    recon[0, 0, 0, 0] = 0.999
    mask = np.zeros((1, 2, 2))
    mask[0, 0, 0] = 1
    assert float(masked_bce(frames, recon, mask)) == pytest.approx(np.log(2.0))


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        masked_bce(torch.zeros(1, 2, 2, 1), torch.zeros(1, 2, 3, 1), np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        masked_bce(torch.zeros(1, 2, 2, 1), torch.zeros(1, 2, 2, 1), np.zeros((1, 3, 2)))


def test_sparsity_single_moving_element():
    frames = torch.zeros(2, 4, 4, 3, dtype=torch.float64)
    recon = torch.zeros_like(frames)
    frames[1, 2, 3, 1] = 0.3
    mask = np.zeros((2, 4, 4, 3))
    mask[1, 2, 3, 1] = 1
    assert float(sparsity_l1(frames, recon, mask)) == pytest.approx(0.3 / frames.numel())
    # a difference on a static element is not counted
    recon[0, 0, 0, 0] = 0.9
    assert float(sparsity_l1(frames, recon, mask)) == pytest.approx(0.3 / frames.numel())


def test_nuclear_norm_examples():
    assert float(nuclear_norm(torch.eye(3))) == pytest.approx(3.0)
    u, v = torch.tensor([3.0, 4.0]), torch.tensor([1.0, 0.0, 0.0])
    assert float(nuclear_norm(torch.outer(u, v))) == pytest.approx(5.0)
    assert float(nuclear_norm(torch.zeros(3, 4))) == 0.0


def test_nuclear_norm_rejects_nan():
    with pytest.raises(FloatingPointError):
        nuclear_norm(torch.tensor([[1.0, float("nan")]]))


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 12), cols=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_nuclear_norm_matches_eigen_oracle_and_is_orthogonal_invariant(rows, cols, seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(rows, cols))
    ours = float(nuclear_norm(T(f)))
    assert ours == pytest.approx(nuclear_by_eigen(f), rel=1e-8, abs=1e-10)
    q1, _ = np.linalg.qr(rng.normal(size=(rows, rows)))
    q2, _ = np.linalg.qr(rng.normal(size=(cols, cols)))
    assert float(nuclear_norm(T(q1 @ f @ q2))) == pytest.approx(ours, rel=1e-8, abs=1e-10)


def test_nuclear_norm_gradient_matches_finite_differences():
    f0 = np.random.default_rng(2).normal(size=(4, 6))
    f = T(f0).requires_grad_()
    nuclear_norm(f).backward()
    fd = central_difference(lambda x: float(nuclear_norm(T(x))), f0)
    np.testing.assert_allclose(f.grad.numpy(), fd, rtol=1e-5, atol=1e-8)


def _toy_instance(seed=0, c=2, d=1, size=2):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0.05, 0.95, size=(c, size, size, 1))
    recon = rng.uniform(0.05, 0.95, size=(c, size, size, 1))
    mask = np.zeros((c, size, size))
    mask[0, 0, 0] = 1
    mu = rng.normal(size=(c, d))
    scale = rng.uniform(0.5, 2.0, size=(c, d))
    return frames, recon, mask, mu, scale


def _dense_total(frames, recon, mask, mu, scale, weights, lam=1.0):
    """Independent numpy evaluation of the loss for a single clique."""
    c, d = mu.shape
    m = mask[..., None] * np.ones_like(frames)
    static = 1 - m
    bce = -(frames * np.log(recon) + (1 - frames) * np.log(1 - recon))
    recon_term = (bce * static).sum() / static.sum()
    kl = dense_gaussian_kl(mu, dense_posterior_precision([c], lam, scale),
                           dense_prior_precision([c], lam, d))
    if weights.kl_reduction == "element":
        kl /= frames.size
    sparsity = (m * np.abs(frames - recon)).sum() / frames.size
    nuc = nuclear_by_eigen(np.concatenate([mu, scale], axis=1))
    return recon_term + kl + weights.beta * sparsity + weights.alpha * nuc


@pytest.mark.parametrize("reduction", ["sum", "element"])
def test_total_loss_matches_dense_oracle(reduction):
    frames, recon, mask, mu, scale = _toy_instance()
    weights = LossWeights(alpha=0.3, beta=0.7, kl_reduction=reduction)
    post = assemble_posterior(T(mu), T(scale), build_prior([2], 1.0))
    out = total_loss(T(frames), T(recon), post, build_prior([2], 1.0), mask, weights)
    assert float(out.total) == pytest.approx(_dense_total(frames, recon, mask, mu, scale, weights), rel=1e-10)
    parts = out.as_dict()
    assert parts["total"] == pytest.approx(parts["recon"] + parts["kl"] + 0.7 * parts["sparsity"]
                                           + 0.3 * parts["nuclear"], rel=1e-12)


def test_total_loss_gradients_match_finite_differences():
    frames, recon0, mask, mu0, scale0 = _toy_instance(seed=3, c=2, d=2, size=4)
    weights = LossWeights(alpha=0.1, beta=0.5, kl_reduction="sum")
    prior = build_prior([2], 1.0)

    def f(mu, scale, recon):
        post = assemble_posterior(T(mu), T(scale), prior)
        return float(total_loss(T(frames), T(recon), post, prior, mask, weights).total)

    mu, scale, recon = (T(x).requires_grad_() for x in (mu0, scale0, recon0))
    total_loss(T(frames), recon, assemble_posterior(mu, scale, prior), prior, mask, weights).total.backward()
    np.testing.assert_allclose(mu.grad.numpy(), central_difference(lambda x: f(x, scale0, recon0), mu0), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(scale.grad.numpy(), central_difference(lambda x: f(mu0, x, recon0), scale0), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(recon.grad.numpy(), central_difference(lambda x: f(mu0, scale0, x), recon0), rtol=1e-5, atol=1e-8)


def test_total_loss_frame_count_checked():
    frames, recon, mask, mu, scale = _toy_instance()
    post = assemble_posterior(T(mu), T(scale), build_prior([2], 1.0))
    with pytest.raises(ValueError):
        total_loss(T(frames[:1]), T(recon[:1]), post, build_prior([2], 1.0), mask[:1])


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
    with pytest.raises(ValueError):
        LossWeights(kl_reduction="mean")


def test_alpha_zero_drops_nuclear_term():
    frames, recon, mask, mu, scale = _toy_instance()
    prior = build_prior([2], 1.0)
    post = assemble_posterior(T(mu), T(scale), prior)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = total_loss(T(frames), T(recon), post, prior, mask, LossWeights(alpha=0.0))
    d = out.as_dict()
    assert d["nuclear"] > 0
    assert d["total"] == pytest.approx(d["recon"] + d["kl"] + 0.5 * d["sparsity"])


def test_identity_four_by_four_nuclear_norm():
    assert float(nuclear_norm(torch.eye(4, dtype=torch.float64))) == pytest.approx(4.0, abs=1e-12)


def test_zero_weights_give_negative_elbo_and_beta_derivative_is_sparsity():
    frames, recon, mask, mu, scale = _toy_instance(seed=4, c=2, d=2, size=3)
    prior = build_prior([2], 1.0)
    post = assemble_posterior(T(mu), T(scale), prior)
    out = total_loss(T(frames), T(recon), post, prior, mask, LossWeights(alpha=0.0, beta=0.0))
    assert float(out.total) == float(out.recon + out.kl)
    beta = torch.tensor(0.5, dtype=torch.float64, requires_grad=True)
    weights = LossWeights(alpha=0.01, beta=0.5)
    parts = total_loss(T(frames), T(recon), post, prior, mask, weights)
    # rebuild total with a differentiable beta to read off its derivative
    (parts.recon + parts.kl + beta * parts.sparsity + weights.alpha * parts.nuclear).backward()
    assert float(beta.grad) == float(parts.sparsity) >= 0
    assert min(parts.as_dict().values()) >= 0
