"""Training loop, background estimation and background subtraction."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage
from skimage.filters import threshold_otsu

from .dataset import FrameStore, SceneDescriptor, load_frames, sample_windows
from .flow import clip_magnitudes, mask_from_magnitudes
from .graph import build_prior
from .imageops import RGB_TO_YUV, as_float, to_uint8
from .network import GLBMNet, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .objective import LossWeights, total_loss
from .posterior import assemble_posterior, precision_scale, sample

log = logging.getLogger(__name__)

LR_SCHEDULES = ("none", "step", "plateau")


@dataclass
class TrainConfig:
    epochs: int = 500
    clips_per_batch: int = 3
    clip_len: int = 40
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    lr_schedule: str = "plateau"
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_step: int = 100
    grad_clip_norm: float = 5.0
    lam: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    steps_per_epoch: int = 0  # 0: frames in the dataset // frames per batch
    save_every: int = 10
    threads: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    kappa: float = 2.0
    flow_levels: int = 4
    flow_iterations: int = 5
    scale_semantics: str = "std"
    structured: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.clips_per_batch < 1 or self.clip_len < 1:
            raise ValueError("epochs, clips_per_batch and clip_len must be positive")
        if not self.learning_rate > 0 or not self.grad_clip_norm > 0:
            raise ValueError("learning_rate and grad_clip_norm must be positive")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")

    @property
    def target_size(self) -> tuple[int, int]:
        return self.model.input_size


@dataclass
class StepRecord:
    epoch: int
    step: int
    losses: dict
    lr: float
    grad_norm: float
    clipped_norm: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("step counter must increase")
        self.records.append(record)

    def losses(self, key: str = "total") -> list[float]:
        return [r.losses[key] for r in self.records]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        with open(path) as fh:
            return cls([StepRecord(**json.loads(line)) for line in fh if line.strip()])


class MotionCache:
    """Per-scene flow magnitudes, computed once; masks are cut per clip window."""

    def __init__(self, store: FrameStore, kappa: float = 2.0, **flow_kwargs):
        self.kappa = kappa
        self.mags = {}
        for scene_id, frames in store.frames.items():
            if len(frames) >= 2:
                self.mags[scene_id] = clip_magnitudes(frames, **flow_kwargs)
            else:
                self.mags[scene_id] = np.zeros((1,) + frames.shape[1:3])

    def mask(self, scene_id: str, start: int, length: int) -> np.ndarray:
        mags = self.mags[scene_id]
        if length >= 2:
            window = mags[start:start + length - 1]
        else:
            window = mags[max(start - 1, 0):max(start, 1)]
        moving = mask_from_magnitudes(window, self.kappa).moving
        return moving[-length:]


def _lr(optimizer) -> float:
    return float(optimizer.param_groups[0]["lr"])


def _make_scheduler(config: TrainConfig, optimizer):
    if config.lr_schedule == "plateau":
        return torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer, factor=config.lr_factor, patience=config.lr_patience)
    if config.lr_schedule == "step":
        return torch.optim.lr_scheduler.StepLR(optimizer, step_size=config.lr_step, gamma=config.lr_factor)
    return None


def forward_batch(model: GLBMNet, frames: torch.Tensor, moving, clique_sizes, config: TrainConfig,
                  noise: torch.Tensor | None = None, prior=None):
    """One forward pass; returns ``(LossBreakdown, recon, posterior)``."""
    prior = prior or build_prior(clique_sizes, config.lam)
    mu, head = model.encode(frames)
    post = assemble_posterior(mu, precision_scale(head, config.scale_semantics), prior)
    if noise is None:
        noise = torch.zeros_like(mu)
    z = sample(post, noise, structured=config.structured)
    recon = model.decode(z)
    losses = total_loss(frames, recon, post, prior, moving, config.weights, head=head)
    return losses, recon, post


def train(config: TrainConfig, scenes, out_dir, progress: bool = False):
    """Optimize a fresh model on ``scenes``; returns ``(checkpoint_path, TrainLog)``."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes to train on")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    torch.set_num_threads(config.threads)

    store = FrameStore(scenes, config.target_size)
    motion = MotionCache(store, config.kappa, levels=config.flow_levels, iterations=config.flow_iterations)
    model = init_params(config.model)
    params = list(model.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    scheduler = _make_scheduler(config, optimizer)
    windows = sample_windows(scenes, config.clips_per_batch, config.clip_len, config.seed)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)
    priors = {}

    total_frames = sum(len(f) for f in store.frames.values())
    steps = config.steps_per_epoch or max(1, total_frames // (config.clips_per_batch * config.clip_len))
    ckpt = out_dir / "ckpt"
    train_log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        epoch_total = 0.0
        for _ in range(steps):
            picks = next(windows)
            clips = [store.clip(sid, start, config.clip_len) for sid, start in picks]
            frames = torch.from_numpy(np.concatenate([c.frames for c in clips]))
            moving = np.concatenate([motion.mask(sid, start, config.clip_len) for sid, start in picks])
            sizes = tuple(c.c for c in clips)
            if sizes not in priors:
                priors[sizes] = build_prior(sizes, config.lam)
            noise = torch.randn(frames.shape[0], config.model.latent_dim, generator=noise_gen)
            losses, _, _ = forward_batch(model, frames, moving, sizes, config, noise, priors[sizes])
            if not torch.isfinite(losses.total):
                dump = out_dir / "nonfinite_batch.npz"
                np.savez(dump, frames=frames.numpy(), moving=moving,
                         windows=np.array([f"{s}:{i}" for s, i in picks]))
                raise FloatingPointError(f"non-finite loss at epoch {epoch} step {step} "
                                         f"({losses.as_dict()}); batch dumped to {dump}")
            optimizer.zero_grad()
            losses.total.backward()
            grad_norm = float(torch.nn.utils.clip_grad_norm_(params, config.grad_clip_norm))
            clipped = math.sqrt(sum(float(p.grad.pow(2).sum()) for p in params if p.grad is not None))
            optimizer.step()
            train_log.append(StepRecord(epoch, step, losses.as_dict(), _lr(optimizer),
                                        grad_norm, clipped, time.perf_counter() - t0))
            epoch_total += losses.as_dict()["total"]
            step += 1
        if isinstance(scheduler, torch.optim.lr_scheduler.ReduceLROnPlateau):
            scheduler.step(epoch_total / steps)
        elif scheduler is not None:
            scheduler.step()
        if progress or epoch % 10 == 0:
            log.info("epoch %d/%d loss %.5f lr %.2e", epoch + 1, config.epochs, epoch_total / steps,
                     _lr(optimizer))
        if config.save_every and (epoch + 1) % config.save_every == 0:
            save_checkpoint(ckpt, model, epoch + 1, extra=train_extra(config))
    save_checkpoint(ckpt, model, config.epochs, extra=train_extra(config))
    train_log.write(out_dir / "train_log.jsonl")
    return ckpt, train_log


def train_extra(config: TrainConfig) -> dict:
    return {"lam": config.lam, "kappa": config.kappa, "scale_semantics": config.scale_semantics,
            "structured": config.structured, "seed": config.seed}


@torch.no_grad()
def reconstruct(model: GLBMNet, frames, batch_size: int = 32) -> np.ndarray:
    """Posterior-mean reconstruction of ``(c, H, W, C)`` frames, floats in [0, 1]."""
    frames = as_float(frames)
    h, w = model.config.input_size
    if frames.ndim != 4 or frames.shape[1:3] != (h, w):
        raise ValueError(f"frames of shape {frames.shape} do not match the model resolution {(h, w)}")
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(frames), batch_size):
        x = torch.as_tensor(frames[i:i + batch_size], dtype=dtype)
        mu, _ = model.encode(x)
        out.append(model.decode(mu).numpy())
    return np.concatenate(out).astype(np.float64)


def estimate_background(model: GLBMNet | str | Path, scene: SceneDescriptor, mode: str = "median",
                        batch_size: int = 32, frames=None) -> np.ndarray:
    """``per_frame``: float ``(n, H, W, C)`` in [0, 1]; ``median``: one uint8 image.

    ``model`` may be a network or a checkpoint path.
    """
    if mode not in ("per_frame", "median"):
        raise ValueError(f"mode must be 'per_frame' or 'median', got {mode!r}")
    if not isinstance(model, GLBMNet):
        model, _ = load_checkpoint(model)
    if frames is None:
        frames = load_frames(scene, 0, scene.frame_count, model.config.input_size)
    backgrounds = reconstruct(model, frames, batch_size)
    if mode == "per_frame":
        return backgrounds
    return to_uint8(np.median(backgrounds, axis=0))


def subtract(frames, backgrounds, threshold="otsu", postproc: bool = True) -> np.ndarray:
    """Foreground masks ``(c, H, W)`` uint8 in {0, 1}.

    ``threshold`` is ``"otsu"`` (per frame, on the difference histogram) or a
    fixed gray-level difference in [0, 1] units.
    """
    frames = as_float(frames)
    backgrounds = as_float(backgrounds)
    if frames.ndim == 3:
        frames = frames[None]
    if backgrounds.ndim == frames.ndim - 1:
        backgrounds = np.broadcast_to(backgrounds, frames.shape)
    if frames.shape != backgrounds.shape:
        raise ValueError(f"frames {frames.shape} and backgrounds {backgrounds.shape} are inconsistent")
    diff = np.abs(_gray(frames) - _gray(backgrounds))
    masks = np.zeros(diff.shape, dtype=np.uint8)
    for i, d in enumerate(diff):
        if threshold == "otsu":
            if d.max() - d.min() < 1e-12:
                continue
            t = threshold_otsu(d)
        else:
            t = float(threshold)
        m = d > t
        if postproc:
            m = ndimage.median_filter(m.astype(np.uint8), size=3, mode="nearest").astype(bool)
        masks[i] = m
    return masks


def _gray(x: np.ndarray) -> np.ndarray:
    return x @ RGB_TO_YUV[0] if x.shape[-1] == 3 else x[..., 0]
