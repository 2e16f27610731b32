"""Convolutional encoder (mean and scale heads) and decoder.

Frames go in and come out channel-last, ``(c, H, W, C)`` in [0, 1]; the
modules transpose to NCHW internally. Each frame is encoded independently.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

SCALE_FLOOR = 1e-4
CHECKPOINT_MAGIC = "GLBM-CHECKPOINT"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "tanh": nn.Tanh,
}


@dataclass
class ModelConfig:
    input_size: tuple[int, int] = (128, 128)
    channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    latent_dim: int = 32
    activation: str = "elu"
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channels = tuple(int(v) for v in self.channels)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not self.channels:
            raise ValueError("at least one encoder stage is required")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        factor = 2 ** len(self.channels)
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % factor or w % factor:
            raise ValueError(f"input size {self.input_size} must be divisible by {factor} "
                             f"for {len(self.channels)} stride-2 stages")

    @property
    def bottleneck(self) -> tuple[int, int, int]:
        factor = 2 ** len(self.channels)
        return self.channels[-1], self.input_size[0] // factor, self.input_size[1] // factor


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        layers = []
        prev = config.in_channels
        for ch in config.channels:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1), _ACTIVATIONS[config.activation]()]
            prev = ch
        self.features = nn.Sequential(*layers)
        c, h, w = config.bottleneck
        self.head = nn.Linear(c * h * w, 2 * config.latent_dim)
        self.latent_dim = config.latent_dim

    def forward(self, x):
        h = self.features(x).flatten(1)
        out = self.head(h)
        mu, raw = out[:, :self.latent_dim], out[:, self.latent_dim:]
        return mu, F.softplus(raw) + SCALE_FLOOR


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        c, h, w = config.bottleneck
        self.shape = (c, h, w)
        self.fc = nn.Linear(config.latent_dim, c * h * w)
        self.act = _ACTIVATIONS[config.activation]()
        layers = []
        chans = list(config.channels[::-1]) + [config.channels[0]]
        for i in range(len(config.channels)):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(chans[i], chans[i + 1], 3, padding=1),
                       _ACTIVATIONS[config.activation]()]
        self.features = nn.Sequential(*layers)
        self.out = nn.Conv2d(config.channels[0], config.in_channels, 3, padding=1)

    def forward(self, z):
        h = self.act(self.fc(z)).view(z.shape[0], *self.shape)
        return torch.sigmoid(self.out(self.features(h)))


class GLBMNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    def _check_frames(self, frames):
        h, w = self.config.input_size
        if frames.ndim != 4 or tuple(frames.shape[1:]) != (h, w, self.config.in_channels):
            raise ValueError(f"expected frames of shape (c, {h}, {w}, {self.config.in_channels}), "
                             f"got {tuple(frames.shape)}")

    def encode(self, frames: torch.Tensor):
        """``(c, H, W, C)`` frames -> ``(mu, scale)``, each ``(c, d)``."""
        self._check_frames(frames)
        return self.encoder(frames.permute(0, 3, 1, 2))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """``(c, d)`` latents -> ``(c, H, W, C)`` backgrounds in (0, 1)."""
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ValueError(f"expected latents of shape (c, {self.config.latent_dim}), got {tuple(z.shape)}")
        return self.decoder(z).permute(0, 2, 3, 1)


def init_params(config: ModelConfig, dtype=torch.float32) -> GLBMNet:
    """Build a network with fan-in scaled weights drawn from ``config.seed``."""
    model = GLBMNet(config).to(dtype)
    gen = torch.Generator().manual_seed(int(config.seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
                continue
            fan_in = math.prod(p.shape[1:])
            p.copy_(torch.randn(p.shape, generator=gen, dtype=dtype) * math.sqrt(1.0 / fan_in))
    return model


def save_checkpoint(path, model: GLBMNet, epoch: int = 0, extra: dict | None = None) -> Path:
    """Write a text header (config echo, version, epoch) followed by an npz archive.

    The header is a single JSON line after the magic line, terminated by a
    blank line, so ``head -3 ckpt`` shows it.
    """
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "model": _config_to_json(model.config),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    if extra:
        meta["extra"] = extra
    buf = io.BytesIO()
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(buf, **arrays)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC}\n".encode())
        fh.write((json.dumps(meta, sort_keys=True) + "\n\n").encode())
        fh.write(buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[GLBMNet, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic line)")
        meta = json.loads(fh.readline().decode())
        if fh.readline().strip():
            raise ValueError(f"{path}: malformed checkpoint header")
        payload = fh.read()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    config = ModelConfig(**meta["model"])
    model = GLBMNet(config).to(getattr(torch, meta.get("dtype", "float32")))
    with np.load(io.BytesIO(payload)) as arrays:
        state = {k: torch.from_numpy(arrays[k].copy()) for k in arrays.files}
    model.load_state_dict(state)
    return model, meta


def _config_to_json(config: ModelConfig) -> dict:
    out = asdict(config)
    out["input_size"] = list(config.input_size)
    out["channels"] = list(config.channels)
    return out
