"""Synthetic scenes with exact ground truth: a static background, moving
rectangles or disks, optional global jitter and illumination drift.

Output layout per scene (``sbm-style``)::

    <out>/<scene>/input/000000.png ...
    <out>/<scene>/GT_background/000000.png
    <out>/<scene>/groundtruth/000000.png ...   (0/255 foreground masks)
    <out>/manifest.json
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageops import to_uint8, write_image

BACKGROUNDS = ("gradient", "texture")
SHAPES = ("square", "disk")


@dataclass(frozen=True)
class SynthSpec:
    scenes: int = 3
    frames: int = 60
    height: int = 96
    width: int = 96
    background: str = "texture"
    min_objects: int = 1
    max_objects: int = 3
    object_size: int = 12
    shape: str = "square"
    speed: float = 3.0
    intensity: float = 0.95
    jitter: float = 0.0
    drift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.scenes < 1 or self.frames < 1:
            raise ValueError("need at least one scene and one frame")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")
        if self.object_size < 1 or self.object_size > min(self.height, self.width):
            raise ValueError("object_size must fit inside the frame")
        if not np.isfinite(self.speed) or self.jitter < 0 or self.drift < 0:
            raise ValueError("speed must be finite; jitter and drift non-negative")
        area = self.max_objects * self.object_size ** 2 / (self.height * self.width)
        if area > 0.3:
            raise ValueError(f"foreground may cover {area:.0%} of the frame; limit is 30%")


def make_background(kind: str, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """RGB float background in roughly [0.15, 0.7]."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    if kind == "gradient":
        base = rng.uniform(0.2, 0.5, 3)
        slope = rng.uniform(-0.2, 0.2, (3, 2))
        img = base + xx[..., None] * slope[:, 0] + yy[..., None] * slope[:, 1]
    else:
        noise = rng.standard_normal((h, w, 3))
        smooth = ndimage.gaussian_filter(noise, sigma=(max(h, w) / 24, max(h, w) / 24, 0))
        smooth /= np.abs(smooth).max() + 1e-12
        tint = rng.uniform(0.3, 0.5, 3)
        img = tint + 0.15 * smooth + 0.1 * (xx[..., None] - 0.5)
    return np.clip(img, 0.15, 0.7)


def _object_mask(shape: str, size: int, frame_shape, y0: int, x0: int) -> np.ndarray:
    h, w = frame_shape
    mask = np.zeros((h, w), dtype=bool)
    if shape == "square":
        mask[y0:y0 + size, x0:x0 + size] = True
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        r = (size - 1) / 2
        disk = (yy - r) ** 2 + (xx - r) ** 2 <= (size / 2) ** 2
        mask[y0:y0 + size, x0:x0 + size] = disk
    return mask


def _bounce(p: float, lo: float, hi: float) -> float:
    """Reflect a coordinate into ``[lo, hi]``."""
    if hi <= lo:
        return lo
    span = hi - lo
    p = (p - lo) % (2 * span)
    return lo + (p if p <= span else 2 * span - p)


def render_scene(spec: SynthSpec, rng: np.random.Generator):
    """Frames (f, H, W, 3) in [0, 1], the background, and masks (f, H, W) bool."""
    h, w, size = spec.height, spec.width, spec.object_size
    background = make_background(spec.background, (h, w), rng)
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects = []
    for _ in range(count):
        angle = rng.uniform(0, 2 * np.pi)
        objects.append({
            "pos": np.array([rng.uniform(0, h - size), rng.uniform(0, w - size)]),
            "vel": spec.speed * np.array([np.sin(angle), np.cos(angle)]),
            "color": np.clip(spec.intensity * rng.uniform(0.9, 1.0, 3), 0, 1),
        })
    phase = rng.uniform(0, 2 * np.pi)
    frames = np.empty((spec.frames, h, w, 3))
    masks = np.zeros((spec.frames, h, w), dtype=bool)
    for t in range(spec.frames):
        img = background
        if spec.jitter > 0:
            dy, dx = rng.uniform(-spec.jitter, spec.jitter, 2)
            img = ndimage.shift(img, (dy, dx, 0), order=1, mode="nearest")
        if spec.drift > 0:
            img = img * (1.0 + spec.drift * np.sin(2 * np.pi * t / spec.frames + phase))
        img = img.copy()
        for obj in objects:
            p = obj["pos"] + t * obj["vel"]
            y0 = int(round(_bounce(p[0], 0, h - size)))
            x0 = int(round(_bounce(p[1], 0, w - size)))
            m = _object_mask(spec.shape, size, (h, w), y0, x0)
            img[m] = obj["color"]
            masks[t] |= m
        frames[t] = np.clip(img, 0, 1)
    return frames, background, masks


def synth_generate(spec: SynthSpec, out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    manifest = {"spec": asdict(spec), "scenes": []}
    for s in range(spec.scenes):
        scene_id = f"s{s}"
        frames, background, masks = render_scene(spec, rng)
        for sub in ("input", "GT_background", "groundtruth"):
            (out / scene_id / sub).mkdir(parents=True, exist_ok=True)
        for t in range(spec.frames):
            write_image(out / scene_id / "input" / f"{t:06d}.png", to_uint8(frames[t]))
            write_image(out / scene_id / "groundtruth" / f"{t:06d}.png", masks[t].astype(np.uint8) * 255)
        write_image(out / scene_id / "GT_background" / "000000.png", to_uint8(background))
        manifest["scenes"].append({
            "scene_id": scene_id,
            "frames": spec.frames,
            "foreground_fraction": float(masks.mean()),
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
