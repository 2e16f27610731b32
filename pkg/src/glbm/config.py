"""Flat ``dotted.key = value`` run configuration.

File format: one ``key = value`` per line, ``#`` starts a comment. Every key
has a default listed in ``DEFAULTS``; unknown keys are rejected. Tuples are
written comma-separated, booleans as ``true``/``false``.
"""

from __future__ import annotations

import os
from pathlib import Path

from .network import ModelConfig
from .objective import LossWeights
from .synth import SynthSpec
from .trainer import TrainConfig

ENV_VAR = "GLBM_CONFIG"

# key -> (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    "dataset.layout": ("sbm-style", "frame directory layout: flat | sbm-style"),
    "dataset.target_height": (128, "frame height fed to the network (px)"),
    "dataset.target_width": (128, "frame width fed to the network (px)"),
    "dataset.max_frames": (0, "frames read per scene, 0 = all"),
    "flow.levels": (4, "optical-flow pyramid levels"),
    "flow.iterations": (5, "warping iterations per pyramid level"),
    "flow.kappa": (2.0, "motion threshold as a multiple of the mean flow magnitude"),
    "prior.lambda": (1.0, "ridge added to the doubled graph Laplacian"),
    "posterior.scale_semantics": ("std", "second encoder head read as: precision | std"),
    "posterior.structured": (True, "sample the clique-coupled posterior (false: per-frame diagonal)"),
    "model.channels": ((32, 64, 128, 256, 256), "encoder channels per stride-2 stage"),
    "model.latent_dim": (32, "latent dimension d"),
    "model.activation": ("elu", "elu | relu | leaky_relu | tanh"),
    "model.seed": (0, "parameter initialization seed"),
    "loss.alpha": (0.01, "nuclear-norm weight"),
    "loss.beta": (0.5, "moving-pixel l1 weight"),
    "loss.kl_reduction": ("element", "KL scaling: sum (nats) | element (per reconstructed element)"),
    "train.epochs": (500, "training epochs"),
    "train.clips_per_batch": (3, "clips per batch"),
    "train.clip_len": (40, "consecutive frames per clip"),
    "train.optimizer": ("adam", "optimizer (adam)"),
    "train.learning_rate": (1e-3, "initial learning rate"),
    "train.lr_schedule": ("plateau", "none | step | plateau"),
    "train.lr_factor": (0.5, "learning-rate decay factor"),
    "train.lr_patience": (10, "plateau patience in epochs"),
    "train.lr_step": (100, "epochs between decays for the step schedule"),
    "train.grad_clip_norm": (5.0, "global gradient-norm clip"),
    "train.steps_per_epoch": (0, "batches per epoch, 0 = dataset frames / batch frames"),
    "train.save_every": (10, "checkpoint interval in epochs, 0 = only at the end"),
    "train.seed": (0, "sampling and noise seed"),
    "train.threads": (1, "torch intra-op threads"),
    "eval.ep_threshold": (20.0, "gray-level error threshold for pEPs/pCEPS"),
    "eval.peak": (255.0, "PSNR peak value (L - 1)"),
    "eval.threshold": ("otsu", "subtraction threshold: otsu or a fixed value in [0, 1]"),
    "eval.postproc": (True, "3x3 median cleanup of subtraction masks"),
    "eval.batch_size": (32, "frames per inference batch"),
    "eval.native_resolution": (True, "resize estimated backgrounds back to the scene resolution"),
    "synth.scenes": (3, "number of synthetic scenes"),
    "synth.frames": (60, "frames per synthetic scene"),
    "synth.height": (96, "synthetic frame height"),
    "synth.width": (96, "synthetic frame width"),
    "synth.background": ("texture", "gradient | texture"),
    "synth.min_objects": (1, "fewest moving objects per scene"),
    "synth.max_objects": (3, "most moving objects per scene"),
    "synth.object_size": (12, "object side / diameter (px)"),
    "synth.shape": ("square", "square | disk"),
    "synth.speed": (3.0, "object speed (px/frame)"),
    "synth.intensity": (0.95, "object intensity in [0, 1]"),
    "synth.jitter": (0.0, "global jitter amplitude (px)"),
    "synth.drift": (0.0, "relative illumination drift amplitude"),
    "synth.seed": (0, "generator seed"),
}


def _parse_value(key: str, text: str):
    default = DEFAULTS[key][0]
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: v[0] for k, v in DEFAULTS.items()}
        for key, value in (values or {}).items():
            self[key] = value

    def __getitem__(self, key: str):
        return self.values[key]

    def __setitem__(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, value) if isinstance(value, str) else value

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise KeyError(f"line {lineno}: unknown config key {key!r}")
            cfg[key] = value
        return cfg

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        """Read ``path``, else the file named by ``$GLBM_CONFIG``, else defaults."""
        path = path or os.environ.get(ENV_VAR)
        if not path:
            return cls()
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @property
    def target_size(self) -> tuple[int, int]:
        return self["dataset.target_height"], self["dataset.target_width"]

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_size=self.target_size, channels=self["model.channels"],
                           latent_dim=self["model.latent_dim"], activation=self["model.activation"],
                           seed=self["model.seed"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            clips_per_batch=self["train.clips_per_batch"],
            clip_len=self["train.clip_len"],
            optimizer=self["train.optimizer"],
            learning_rate=self["train.learning_rate"],
            lr_schedule=self["train.lr_schedule"],
            lr_factor=self["train.lr_factor"],
            lr_patience=self["train.lr_patience"],
            lr_step=self["train.lr_step"],
            grad_clip_norm=self["train.grad_clip_norm"],
            lam=self["prior.lambda"],
            weights=LossWeights(alpha=self["loss.alpha"], beta=self["loss.beta"],
                                kl_reduction=self["loss.kl_reduction"]),
            seed=self["train.seed"],
            steps_per_epoch=self["train.steps_per_epoch"],
            save_every=self["train.save_every"],
            threads=self["train.threads"],
            model=self.model_config(),
            kappa=self["flow.kappa"],
            flow_levels=self["flow.levels"],
            flow_iterations=self["flow.iterations"],
            scale_semantics=self["posterior.scale_semantics"],
            structured=self["posterior.structured"],
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**{k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("synth.")})
