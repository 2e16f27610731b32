"""Command-line entry point: ``glbm <subcommand> [options]``.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import DEFAULTS, RunConfig
from .dataset import load_frames, scan_dataset, scan_scene
from .flow import mask_from_magnitudes
from .imageops import read_image, resize, to_uint8, write_image
from .metrics import CSV_COLUMNS, bs_scores, format_row, sbm_metrics, write_csv

log = logging.getLogger("glbm")

SUBCOMMANDS = ("make-masks", "train", "estimate", "subtract", "eval-sbm", "eval-bs", "synth")

# config prefixes exposed as --<key> flags per subcommand
_SECTIONS = {
    "make-masks": ("dataset.", "flow."),
    "train": ("dataset.", "flow.", "prior.", "posterior.", "model.", "loss.", "train."),
    "estimate": ("eval.batch_size", "eval.native_resolution"),
    "subtract": ("eval.threshold", "eval.postproc", "eval.batch_size", "eval.native_resolution"),
    "eval-sbm": ("eval.ep_threshold", "eval.peak"),
    "eval-bs": (),
    "synth": ("synth.",),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


def _add_config_flags(parser: argparse.ArgumentParser, command: str) -> None:
    parser.add_argument("--config", help=f"config file (default: ${cfgmod.ENV_VAR})")
    group = parser.add_argument_group("configuration keys")
    for key, (default, text) in DEFAULTS.items():
        if not key.startswith(_SECTIONS[command]):
            continue
        names = [f"--{key}"]
        if command == "synth":
            names.append(f"--{key.split('.', 1)[1].replace('_', '-')}")
        group.add_argument(*names, dest=key, default=None, metavar="V",
                           help=f"{text} (default: {cfgmod.format_value(default)})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glbm", description="Generative low-dimensional background modelling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--out", required=True)

    p = sub.add_parser("make-masks", help="compute and cache motion masks as PNGs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate backgrounds for a scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=("median", "per_frame"), default="median")
    p.add_argument("--out", help="output PNG (median) or directory (per_frame)")

    p = sub.add_parser("subtract", help="foreground masks by thresholding frame - background")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="directory for 0/255 PNG masks")

    p = sub.add_parser("eval-sbm", help="AGE, pEPs, pCEPS, MS-SSIM, PSNR, CQM for one background")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--scene", default="", help="scene label for the CSV row")
    p.add_argument("--csv", help="append the row to this CSV file")

    p = sub.add_parser("eval-bs", help="pixel precision / recall / F-measure of masks")
    p.add_argument("--pred", required=True, help="mask directory or PNG")
    p.add_argument("--gt", required=True, help="mask directory or PNG")

    for name, action in sub.choices.items():
        _add_config_flags(action, name)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _load_masks(path) -> np.ndarray:
    path = Path(path)
    files = sorted(path.glob("*.png")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no PNG masks under {path}")
    return np.stack([read_image(f)[..., 0] > 127 for f in files])


def cmd_synth(args, cfg: RunConfig) -> None:
    from .synth import synth_generate

    out = synth_generate(cfg.synth_spec(), args.out)
    print(f"wrote {cfg['synth.scenes']} scenes to {out}")


def cmd_make_masks(args, cfg: RunConfig) -> None:
    from .flow import clip_magnitudes

    scenes = scan_dataset(args.data, cfg["dataset.layout"], cfg["dataset.max_frames"] or None)
    for scene in scenes:
        frames = load_frames(scene, 0, scene.frame_count, cfg.target_size)
        out = Path(args.out) / scene.scene_id
        out.mkdir(parents=True, exist_ok=True)
        if len(frames) < 2:
            moving = np.zeros((len(frames),) + frames.shape[1:3], dtype=np.uint8)
        else:
            mags = clip_magnitudes(frames, levels=cfg["flow.levels"], iterations=cfg["flow.iterations"])
            moving = mask_from_magnitudes(mags, cfg["flow.kappa"]).moving
        for path, m in zip(scene.frame_paths, moving):
            write_image(out / f"{path.stem}.png", m.astype(np.uint8) * 255)
        print(f"{scene.scene_id}: {len(moving)} masks")


def cmd_train(args, cfg: RunConfig) -> None:
    from .trainer import train

    scenes = scan_dataset(args.data, cfg["dataset.layout"], cfg["dataset.max_frames"] or None)
    if not scenes:
        raise RuntimeError(f"no scenes found under {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.cfg")
    ckpt, train_log = train(cfg.train_config(), scenes, out)
    last = train_log.records[-1].losses
    print(f"checkpoint {ckpt}; final loss {last['total']:.5f} (recon {last['recon']:.5f})")


def _scene_and_model(args):
    from .network import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    scene = scan_scene(args.scene)
    if scene is None:
        raise RuntimeError(f"no readable frames in {args.scene}")
    return model, scene


def _native(img: np.ndarray, resolution) -> np.ndarray:
    return resize(img, resolution)


def cmd_estimate(args, cfg: RunConfig) -> None:
    from .trainer import estimate_background

    model, scene = _scene_and_model(args)
    result = estimate_background(model, scene, args.mode, cfg["eval.batch_size"])
    native = cfg["eval.native_resolution"]
    if args.mode == "median":
        out = Path(args.out or f"{scene.scene_id}_background.png")
        out.parent.mkdir(parents=True, exist_ok=True)
        write_image(out, _native(result, scene.resolution) if native else result)
        print(out)
        return
    out = Path(args.out or f"{scene.scene_id}_backgrounds")
    out.mkdir(parents=True, exist_ok=True)
    for path, bg in zip(scene.frame_paths, result):
        bg = to_uint8(bg)
        write_image(out / f"{path.stem}.png", _native(bg, scene.resolution) if native else bg)
    print(out)


def cmd_subtract(args, cfg: RunConfig) -> None:
    from .trainer import estimate_background, subtract

    model, scene = _scene_and_model(args)
    frames = load_frames(scene, 0, scene.frame_count, model.config.input_size)
    backgrounds = to_uint8(estimate_background(model, scene, "per_frame", cfg["eval.batch_size"], frames=frames))
    if cfg["eval.native_resolution"]:
        frames = load_frames(scene, 0, scene.frame_count, scene.resolution)
        backgrounds = np.stack([_native(b, scene.resolution) for b in backgrounds])
    threshold = cfg["eval.threshold"]
    threshold = threshold if threshold == "otsu" else float(threshold)
    masks = subtract(frames, backgrounds, threshold, cfg["eval.postproc"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path, m in zip(scene.frame_paths, masks):
        write_image(out / f"{path.stem}.png", m * 255)
    print(f"{len(masks)} masks in {out}")


def cmd_eval_sbm(args, cfg: RunConfig) -> None:
    report = sbm_metrics(read_image(args.gt), read_image(args.est), cfg["eval.ep_threshold"], cfg["eval.peak"])
    scene = args.scene or Path(args.est).stem
    print(",".join(CSV_COLUMNS))
    print(",".join(format_row(scene, report)))
    if args.csv:
        write_csv(args.csv, [(scene, report)])


def cmd_eval_bs(args, cfg: RunConfig) -> None:
    score = bs_scores(_load_masks(args.pred), _load_masks(args.gt))
    print("precision,recall,f_measure")
    print(f"{score.precision:.6f},{score.recall:.6f},{score.f_measure:.6f}")


_COMMANDS = {
    "synth": cmd_synth,
    "make-masks": cmd_make_masks,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "subtract": cmd_subtract,
    "eval-sbm": cmd_eval_sbm,
    "eval-bs": cmd_eval_bs,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        cfg = _run_config(args)
        # surface bad values as configuration errors before any work starts
        if args.command == "train":
            cfg.train_config()
        elif args.command == "synth":
            cfg.synth_spec()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        print(f"glbm: configuration error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args, cfg)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"glbm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
