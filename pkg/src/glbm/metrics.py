"""Background-quality metrics (AGE, pEPs, pCEPS, MS-SSIM, PSNR, CQM) and
pixel-level foreground precision/recall/F-measure.

Images are 8-bit, ``(H, W)`` or ``(H, W, 3)``. Gray levels are BT.601 luma
rounded to integers, as the benchmark tooling does.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageops import RGB_TO_YUV, to_rgb

PSNR_CAP = 100.0
CQM_LUMA_WEIGHT = 0.9449
CQM_CHROMA_WEIGHT = 0.0551
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
CSV_COLUMNS = ("scene", "age", "peps", "pceps", "msssim", "psnr", "cqm")

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class MetricReport:
    age: float
    peps: float
    pceps: float
    psnr: float
    msssim: float
    cqm: float


@dataclass(frozen=True)
class BsScore:
    precision: float
    recall: float
    f_measure: float


def gray_levels(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    return np.rint(to_rgb(arr).astype(np.float64) @ RGB_TO_YUV[0])


def psnr(ref, est, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at ``PSNR_CAP`` when the images agree."""
    err = np.mean((np.asarray(ref, np.float64) - np.asarray(est, np.float64)) ** 2)
    if err == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / err)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_terms(x, y, window, peak):
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    f = lambda a: ndimage.correlate(a, window, mode="reflect")
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def msssim(ref, est, peak: float = 255.0, weights=MSSSIM_WEIGHTS) -> float:
    """Multi-scale SSIM on gray images (11x11 Gaussian window, sigma 1.5).

    Local statistics use reflected borders so small images still reach all
    scales; negative per-scale values are clipped to 0.
    """
    x = np.asarray(ref, np.float64)
    y = np.asarray(est, np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    window = _gaussian_window()
    result = 1.0
    for level, w in enumerate(weights):
        ssim, cs = _ssim_terms(x, y, window, peak)
        last = level == len(weights) - 1
        result *= max(ssim if last else cs, 0.0) ** w
        if not last:
            x = ndimage.uniform_filter(x, 2, mode="reflect")[::2, ::2]
            y = ndimage.uniform_filter(y, 2, mode="reflect")[::2, ::2]
    return float(result)


def cqm(ref, est, peak: float = 255.0) -> float:
    yuv_ref = to_rgb(np.asarray(ref)).astype(np.float64) @ RGB_TO_YUV.T
    yuv_est = to_rgb(np.asarray(est)).astype(np.float64) @ RGB_TO_YUV.T
    p = [psnr(yuv_ref[..., i], yuv_est[..., i], peak) for i in range(3)]
    return CQM_LUMA_WEIGHT * p[0] + 0.5 * CQM_CHROMA_WEIGHT * (p[1] + p[2])


def error_pixels(gt, est, ep_threshold: float = 20) -> tuple[np.ndarray, np.ndarray]:
    """(error, clustered-error) boolean maps on the gray images."""
    err = np.abs(gray_levels(gt) - gray_levels(est)) > ep_threshold
    # out-of-image neighbours do not disqualify a pixel
    clustered = ndimage.binary_erosion(err, structure=_CROSS, border_value=1)
    return err, clustered


def sbm_metrics(gt, est, ep_threshold: float = 20, peak: float = 255.0) -> MetricReport:
    gt = np.asarray(gt)
    est = np.asarray(est)
    if gt.shape != est.shape:
        raise ValueError(f"resolution mismatch: {gt.shape} vs {est.shape}")
    g_gt, g_est = gray_levels(gt), gray_levels(est)
    err, clustered = error_pixels(gt, est, ep_threshold)
    return MetricReport(
        age=float(np.mean(np.abs(g_gt - g_est))),
        peps=float(err.mean()),
        pceps=float(clustered.mean()),
        psnr=psnr(g_gt, g_est, peak),
        msssim=msssim(g_gt, g_est, peak),
        cqm=float(cqm(gt, est, peak)),
    )


def bs_scores(pred, gt) -> BsScore:
    """Pixel-level scores accumulated over all frames."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return BsScore(precision, recall, f)


def write_csv(path, rows) -> None:
    """Write ``(scene_id, MetricReport)`` rows with the fixed ``CSV_COLUMNS`` order."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_COLUMNS)
        for scene_id, report in rows:
            writer.writerow(format_row(scene_id, report))


def format_row(scene_id: str, report: MetricReport) -> list[str]:
    values = asdict(report)
    return [scene_id] + [f"{values[c]:.6f}" for c in CSV_COLUMNS[1:]]
