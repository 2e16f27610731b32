"""Dense optical flow and the adaptive-threshold motion mask.

``estimate_flow`` is a coarse-to-fine Lucas-Kanade estimator: at each
pyramid level the second frame is warped towards the first by the current
flow and a Gaussian-windowed least-squares increment is solved per pixel.
Flow maps ``a -> b``: ``a(x, y) ~= b(x + u, y + v)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageops import to_gray


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class MotionMask:
    """``moving`` is 1 where motion exceeds ``tau``; ``static`` is its complement."""

    moving: np.ndarray
    tau: float

    @property
    def static(self) -> np.ndarray:
        return 1 - self.moving


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape) < 16:
            break
        smooth = ndimage.gaussian_filter(prev, 1.0, mode="nearest")
        pyr.append(ndimage.zoom(smooth, 0.5, order=1, mode="nearest", grid_mode=True))
    return pyr


def _resize_flow(f: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    factors = (shape[0] / f.shape[0], shape[1] / f.shape[1])
    return ndimage.zoom(f, factors, order=1, mode="nearest", grid_mode=True)


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    yy, xx = np.indices(img.shape, dtype=np.float64)
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")


def estimate_flow(frame_a, frame_b, levels: int = 4, iterations: int = 5,
                  window_sigma: float = 1.0, reg: float = 1e-4, tol: float = 1e-3) -> FlowField:
    """Dense flow from ``frame_a`` to ``frame_b``.

    Frames may be gray ``(H, W)`` or color ``(H, W, C)``, uint8 or float.
    ``reg`` damps the per-pixel normal equations in textureless regions;
    flow components with magnitude below ``tol`` are zeroed.
    """
    a = to_gray(frame_a)
    b = to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if levels < 1 or iterations < 1:
        raise ValueError("levels and iterations must be >= 1")

    pa, pb = _pyramid(a, levels), _pyramid(b, levels)
    u = np.zeros(pa[-1].shape)
    v = np.zeros(pa[-1].shape)
    for la, lb in zip(pa[::-1], pb[::-1]):
        if u.shape != la.shape:
            sy, sx = la.shape[0] / u.shape[0], la.shape[1] / u.shape[1]
            u = _resize_flow(u, la.shape) * sx
            v = _resize_flow(v, la.shape) * sy
        gy_a, gx_a = np.gradient(la)
        for _ in range(iterations):
            bw = _warp(lb, u, v)
            gy_b, gx_b = np.gradient(bw)
            ix = 0.5 * (gx_a + gx_b)
            iy = 0.5 * (gy_a + gy_b)
            it = bw - la
            win = lambda x: ndimage.gaussian_filter(x, window_sigma, mode="nearest")
            jxx = win(ix * ix) + reg
            jyy = win(iy * iy) + reg
            jxy = win(ix * iy)
            jxt = win(ix * it)
            jyt = win(iy * it)
            det = jxx * jyy - jxy * jxy
            du = (-jyy * jxt + jxy * jyt) / det
            dv = (jxy * jxt - jxx * jyt) / det
            u = ndimage.median_filter(u + du, size=3, mode="nearest")
            v = ndimage.median_filter(v + dv, size=3, mode="nearest")
    u[np.abs(u) < tol] = 0.0
    v[np.abs(v) < tol] = 0.0
    return FlowField(u=u, v=v)


def motion_mask(flows, kappa: float = 2.0) -> MotionMask:
    """Binary motion mask for a clip from its consecutive-pair flows.

    ``flows[j]`` is the flow computed for frame ``j + 1`` of the clip (against
    frame ``j``). Frame 0 has no predecessor and copies frame 1's mask. The
    threshold is ``kappa`` times the mean flow magnitude over the clip.
    """
    if not len(flows):
        raise ValueError("motion_mask needs at least one flow field")
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    mags = np.stack([f.magnitude if isinstance(f, FlowField) else np.asarray(f, dtype=np.float64)
                     for f in flows])
    return mask_from_magnitudes(mags, kappa)


def mask_from_magnitudes(mags: np.ndarray, kappa: float = 2.0) -> MotionMask:
    """Same as :func:`motion_mask` for a ``(c - 1, H, W)`` stack of magnitudes."""
    tau = float(kappa * mags.mean())
    moving = (mags > tau).astype(np.uint8)
    moving = np.concatenate([moving[:1], moving], axis=0)
    return MotionMask(moving=moving, tau=tau)


def clip_magnitudes(frames, **flow_kwargs) -> np.ndarray:
    """Flow magnitudes for frames ``1..c-1`` of a clip, each against its predecessor.

    The flow runs from frame ``i`` to frame ``i - 1`` so the magnitude map
    lives on frame ``i``'s pixel grid.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames to compute motion")
    return np.stack([estimate_flow(frames[i], frames[i - 1], **flow_kwargs).magnitude
                     for i in range(1, len(frames))])
