"""Scene discovery, clip loading and batch sampling.

A scene is a directory of numbered frames. Two layouts are understood:

* ``flat``: ``root/<scene>/*.png|jpg``
* ``sbm-style``: ``root/<scene>/input/*.png|jpg`` (optionally with a
  ``GT_background/`` sibling of ``input/`` used for evaluation)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .imageops import read_image, resize

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
LAYOUTS = ("flat", "sbm-style")


@dataclass(frozen=True)
class SceneDescriptor:
    scene_id: str
    frame_paths: tuple[Path, ...]
    resolution: tuple[int, int]

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)

    @property
    def root(self) -> Path:
        return self.frame_paths[0].parent


@dataclass(frozen=True)
class FrameClip:
    scene_id: str
    start_index: int
    frames: np.ndarray  # (c, H, W, C) float32 in [0, 1]

    @property
    def c(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Batch:
    clips: tuple[FrameClip, ...]

    @property
    def clique_sizes(self) -> list[int]:
        return [clip.c for clip in self.clips]

    @property
    def frames(self) -> np.ndarray:
        return np.concatenate([clip.frames for clip in self.clips], axis=0)

    @property
    def windows(self) -> list[tuple[str, int]]:
        return [(clip.scene_id, clip.start_index) for clip in self.clips]


def _readable_size(path: Path) -> tuple[int, int] | None:
    try:
        with Image.open(path) as im:
            im.load()
            return im.size[1], im.size[0]
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError):
        return None


def scan_scene(directory, scene_id: str | None = None,
               max_frames: int | None = None) -> SceneDescriptor | None:
    """Descriptor for one frame directory; ``None`` if it has no readable frames.

    If ``directory`` has an ``input/`` subdirectory, frames are read from it.
    """
    directory = Path(directory)
    if (directory / "input").is_dir():
        frame_dir = directory / "input"
    else:
        frame_dir = directory
    scene_id = scene_id or directory.name
    candidates = sorted(p for p in frame_dir.iterdir()
                        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    paths, resolution = [], None
    for p in candidates:
        size = _readable_size(p)
        if size is None:
            warnings.warn(f"scene {scene_id}: skipping unreadable frame {p.name}", RuntimeWarning)
            continue
        resolution = resolution or size
        paths.append(p)
        if max_frames and len(paths) >= max_frames:
            break
    if not paths:
        warnings.warn(f"scene {scene_id}: no readable frames, skipped", RuntimeWarning)
        return None
    return SceneDescriptor(scene_id=scene_id, frame_paths=tuple(paths), resolution=resolution)


def scan_dataset(root, layout: str = "sbm-style", max_frames: int | None = None) -> list[SceneDescriptor]:
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    scenes = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        frame_dir = scene_dir / "input" if layout == "sbm-style" else scene_dir
        if not frame_dir.is_dir():
            warnings.warn(f"{scene_dir.name}: no input/ directory, skipped", RuntimeWarning)
            continue
        desc = scan_scene(frame_dir, scene_id=scene_dir.name, max_frames=max_frames)
        if desc is not None:
            scenes.append(desc)
    return scenes


def load_frames(scene: SceneDescriptor, start: int, length: int,
                target_size: tuple[int, int] = (128, 128)) -> np.ndarray:
    """uint8 ``(length, H, W, 3)`` frames resized bilinearly to ``target_size``."""
    if start < 0 or length < 1 or start + length > scene.frame_count:
        raise IndexError(f"window [{start}, {start + length}) outside scene {scene.scene_id} "
                         f"with {scene.frame_count} frames")
    if min(target_size) <= 0:
        raise ValueError(f"target size must be positive, got {target_size}")
    return np.stack([resize(read_image(p), target_size)
                     for p in scene.frame_paths[start:start + length]])


def load_clip(scene: SceneDescriptor, start: int, length: int,
              target_size: tuple[int, int] = (128, 128)) -> FrameClip:
    frames = load_frames(scene, start, length, target_size).astype(np.float32) / 255.0
    return FrameClip(scene_id=scene.scene_id, start_index=start, frames=frames)


class FrameStore:
    """All frames of a set of scenes decoded once at ``target_size`` (uint8)."""

    def __init__(self, scenes, target_size: tuple[int, int] = (128, 128)):
        self.target_size = tuple(target_size)
        self.scenes = {s.scene_id: s for s in scenes}
        self.frames = {s.scene_id: load_frames(s, 0, s.frame_count, self.target_size) for s in scenes}

    def clip(self, scene_id: str, start: int, length: int) -> FrameClip:
        arr = self.frames[scene_id]
        if start < 0 or start + length > len(arr):
            raise IndexError(f"window [{start}, {start + length}) outside scene {scene_id}")
        return FrameClip(scene_id, start, arr[start:start + length].astype(np.float32) / 255.0)


def sample_windows(scenes, clips_per_batch: int, clip_len: int,
                   seed: int) -> Iterator[list[tuple[str, int]]]:
    """Endless stream of ``(scene_id, start)`` lists, one list per batch."""
    if clips_per_batch < 1 or clip_len < 1:
        raise ValueError("clips_per_batch and clip_len must be >= 1")
    eligible = [s for s in scenes if s.frame_count >= clip_len]
    short = [s.scene_id for s in scenes if s.frame_count < clip_len]
    if short:
        log.warning("scenes shorter than clip_len=%d are not sampled: %s", clip_len, short)
    if not eligible:
        raise ValueError(f"no scene has at least clip_len={clip_len} frames")
    rng = np.random.default_rng(seed)
    while True:
        picks = []
        for _ in range(clips_per_batch):
            scene = eligible[rng.integers(len(eligible))]
            picks.append((scene.scene_id, int(rng.integers(scene.frame_count - clip_len + 1))))
        yield picks


def make_batches(scenes, clips_per_batch: int = 3, clip_len: int = 40, seed: int = 0,
                 target_size: tuple[int, int] = (128, 128), store: FrameStore | None = None,
                 num_batches: int | None = None) -> Iterator[Batch]:
    """Stream of batches of uniformly sampled clips (scenes may repeat).

    Frames come from ``store`` when given, otherwise they are decoded from
    disk per clip. The stream depends only on the arguments.
    """
    scenes = list(scenes)
    by_id = {s.scene_id: s for s in scenes}
    windows = sample_windows(scenes, clips_per_batch, clip_len, seed)
    produced = 0
    while num_batches is None or produced < num_batches:
        clips = []
        for scene_id, start in next(windows):
            if store is not None:
                clips.append(store.clip(scene_id, start, clip_len))
            else:
                clips.append(load_clip(by_id[scene_id], start, clip_len, target_size))
        assert all(0.0 <= c.frames.min() and c.frames.max() <= 1.0 for c in clips)
        yield Batch(tuple(clips))
        produced += 1
