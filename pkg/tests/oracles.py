"""Dense reference computations used as independent oracles in the tests.

Nothing here imports from ``glbm``: every matrix is assembled entry by entry
from its definition.
"""

import numpy as np


def dense_laplacian(clique_sizes):
    n = sum(clique_sizes)
    a = np.zeros((n, n))
    labels = np.repeat(np.arange(len(clique_sizes)), clique_sizes)
    for i in range(n):
        for j in range(n):
            if i != j and labels[i] == labels[j]:
                a[i, j] = 1.0
    return np.diag(a.sum(axis=1)) - a


def dense_prior_precision(clique_sizes, lam, d):
    """Full nd x nd prior precision, frame-major: (2L + lam I) kron I_d."""
    lap = dense_laplacian(clique_sizes)
    n = lap.shape[0]
    return np.kron(2 * lap + lam * np.eye(n), np.eye(d))


def dense_posterior_precision(clique_sizes, lam, scale):
    """Khatri-Rao block construction: block (i, j) = (2L + lam I)_ij diag(s_i * s_j)."""
    lap = dense_laplacian(clique_sizes)
    n, d = scale.shape
    base = 2 * lap + lam * np.eye(n)
    out = np.zeros((n * d, n * d))
    for i in range(n):
        for j in range(n):
            out[i * d:(i + 1) * d, j * d:(j + 1) * d] = base[i, j] * np.diag(scale[i] * scale[j])
    return out


def dense_gaussian_kl(mu, post_precision, prior_precision):
    """KL(N(mu, inv(P)) || N(0, inv(Q))) with dense inverses and determinants."""
    k = mu.size
    post_cov = np.linalg.inv(post_precision)
    _, logdet_p = np.linalg.slogdet(post_precision)
    _, logdet_q = np.linalg.slogdet(prior_precision)
    m = mu.reshape(-1)
    return 0.5 * (np.trace(prior_precision @ post_cov) - k + m @ prior_precision @ m + logdet_p - logdet_q)


def nuclear_by_eigen(f):
    """Sum of sqrt of eigenvalues of F^T F (or F F^T, whichever is smaller)."""
    f = np.asarray(f, dtype=np.float64)
    g = f.T @ f if f.shape[0] >= f.shape[1] else f @ f.T
    w = np.linalg.eigvalsh(g)
    return float(np.sqrt(np.clip(w, 0, None)).sum())


def central_difference(fn, x, h=1e-6):
    """Gradient of scalar ``fn`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = fn(x)
        x[idx] = orig - h
        fm = fn(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad
