"""``tryonvid`` command line: data generation, training, inference, planning, evaluation."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from tryonvid import __version__, clipio, edm, kernels, metrics
from tryonvid.config import RunConfig, config_from_dict, dump_config, load_config
from tryonvid.data import ToyCodec, VideoClip
from tryonvid.errors import ConfigurationError, TryOnError

log = logging.getLogger("tryonvid")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


# ---------------------------------------------------------------- run setup


_INPUT_ARGS = ("clip", "checkpoint", "plan", "gen", "ref", "metrics", "generator")


class Run:
    """Output directory plus the manifest written when the command finishes."""

    def __init__(self, args, cfg: RunConfig):
        self.out = Path(args.out)
        if (self.out / "run.json").exists() and not args.force:
            raise FileExistsError(f"{self.out} already holds a run; pass --force to overwrite")
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = args.command
        self.outputs: list[str] = []
        self.extra: dict = {}
        inputs = {k: str(getattr(args, k)) for k in _INPUT_ARGS if getattr(args, k, None)}
        if inputs:
            self.extra["inputs"] = inputs

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self) -> None:
        dump_config(self.cfg, self.out / "config.yaml")
        manifest = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "outputs": sorted(set(self.outputs)),
            **self.extra,
        }
        (self.out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("run %s written to %s (config %s)", self.command, self.out, manifest["config_hash"])


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    train = raw["train"]
    for flag, key in (("lambda_agn", "lambda_agn"), ("lambda_n", "lambda_N"), ("window", "window"),
                      ("steps", "steps"), ("lr", "lr")):
        if getattr(args, flag, None) is not None:
            train[key] = getattr(args, flag)
    if getattr(args, "ct", None) is not None:
        train["ct"] = args.ct == "on"
    if getattr(args, "loss", None) is not None:
        train["variant"] = "initial" if args.loss == "init" else "refined"
    kf = raw["keyframes"]
    for flag in ("d_pose", "s_max", "overlap"):
        if getattr(args, flag, None) is not None:
            kf[flag] = getattr(args, flag)
    if getattr(args, "keyframe_mode", None) is not None:
        kf["mode"] = args.keyframe_mode
    if getattr(args, "frames", None) is not None:
        raw["data"]["frames"] = args.frames
    return config_from_dict(raw)


def _schedule(cfg: RunConfig) -> edm.NoiseLevelSchedule:
    s = cfg.sample
    return edm.NoiseLevelSchedule(sigma_min=s.sigma_min, sigma_max=s.sigma_max, rho=s.rho, num_steps=s.num_steps)


def _synthetic(cfg: RunConfig):
    from tryonvid.pipeline.synth import MotionSpec, generate_synthetic_clip

    d = cfg.data
    motion = MotionSpec(velocity=tuple(d.velocity), torso=tuple(d.torso))
    return generate_synthetic_clip(cfg.seed, d.frames, d.height, d.width, motion, d.fill_value)


def _load_clip_or_synthetic(args, cfg):
    if args.clip:
        bundle, garment, target = clipio.load_clip(args.clip)
        if garment is None:
            raise FileNotFoundError(f"{args.clip} has no garment.png")
        return target, bundle, garment
    return _synthetic(cfg)


def _checkpoint(args):
    from tryonvid.pipeline.train import load_checkpoint

    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} not found")
    return load_checkpoint(args.checkpoint)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, run: Run) -> None:
    target, bundle, garment = _synthetic(run.cfg)
    clipio.save_clip(run.path("clip"), bundle, garment, target)


def _train(cfg: RunConfig, target, bundle, garment, metrics_path: Optional[Path], dump_dir=None, **overrides):
    from tryonvid.pipeline.train import overfit_clip

    tcfg = cfg.train_config(dump_dir=str(dump_dir) if dump_dir else None, **overrides)
    logger = clipio.MetricsLog(metrics_path) if metrics_path else None
    t0 = time.perf_counter()
    try:
        state, curve = overfit_clip(bundle, garment, target, tcfg, on_step=logger.write if logger else None)
    finally:
        if logger:
            logger.close()
    log.info("trained %d steps in %.1fs, final dsm %.4g", tcfg.steps, time.perf_counter() - t0,
             curve[-1]["dsm"] if curve else float("nan"))
    return state, curve


def cmd_train_toy(args, run: Run) -> None:
    from tryonvid.pipeline.train import measure_attention_ratio, prepare_clip, save_checkpoint

    target, bundle, garment = _load_clip_or_synthetic(args, run.cfg)
    if target is None:
        raise ConfigurationError("training clip has no target frames")
    state, curve = _train(run.cfg, target, bundle, garment, run.path("metrics.jsonl"), dump_dir=run.out / "dumps")
    save_checkpoint(state, run.path("model.ckpt"))
    clip = prepare_clip(bundle, garment, target, threshold=state.config.token_threshold)
    run.extra["summary"] = {
        "steps": len(curve),
        "final_dsm": curve[-1]["dsm"] if curve else None,
        "final_agn": curve[-1]["agn"] if curve else None,
        "in_mask_ratio": measure_attention_ratio(state, clip),
    }


def cmd_infer(args, run: Run) -> None:
    from tryonvid.pipeline.train import infer_clip

    state = _checkpoint(args)
    target, bundle, garment = _load_clip_or_synthetic(args, run.cfg)
    callback = None
    if args.dump_latents:
        lat_dir = run.path("latents")
        lat_dir.mkdir(exist_ok=True)

        def callback(k, sigma, x):
            np.save(lat_dir / f"step_{k:03d}.npy", x.detach().numpy())

    out = infer_clip(bundle, garment, state, _schedule(run.cfg), seed=run.cfg.seed, callback=callback)
    clipio.save_video(run.path("video"), out)
    if target is not None:
        run.extra["metrics"] = metrics.evaluate_clips(out, target)


def cmd_long_infer(args, run: Run) -> None:
    from tryonvid.keyframes import KeyframePlan, LongGenerationTrace, orchestrate_long_generation
    from tryonvid.pipeline.train import latent_generator

    target, bundle, garment = _load_clip_or_synthetic(args, run.cfg)
    kf = run.cfg.keyframes
    window, overlap, plan = run.cfg.train_config().window, kf.overlap, None
    if args.plan:
        raw = clipio.read_plan(args.plan)
        if "omega" in raw:
            plan = KeyframePlan.from_dict(raw)
        window = raw.get("window", window)
        overlap = raw.get("overlap", overlap)
    if args.generator == "identity":
        gen, codec = (lambda stream, masks, poses: stream), None
    else:
        if not args.checkpoint:
            raise ConfigurationError("long-infer with the model generator needs --checkpoint")
        state = _checkpoint(args)
        gen, codec = latent_generator(state, garment, _schedule(run.cfg), run.cfg.seed), ToyCodec()
    trace = LongGenerationTrace()
    out = orchestrate_long_generation(bundle, gen, kf.d_pose, kf.s_max, overlap, window, codec, kf.mode, trace, plan)
    clipio.save_video(run.path("video"), VideoClip(np.clip(out.frames, 0, 1)))
    run.path("trace.json").write_text(json.dumps({
        "keyframes": trace.keyframes.to_dict() if trace.keyframes else None,
        "segments": trace.segments.to_dict() if trace.segments else None,
        "calls": trace.calls,
    }, indent=2) + "\n")
    if target is not None and target.num_frames >= 2:
        run.extra["metrics"] = metrics.evaluate_clips(out, target)


def _clip_poses(args, cfg):
    if args.clip:
        bundle, _, _ = clipio.load_clip(args.clip)
    else:
        _, bundle, _ = _synthetic(cfg)
    return bundle


def cmd_select_keyframes(args, run: Run) -> None:
    from tryonvid.keyframes import plan_segments, select_keyframes

    bundle = _clip_poses(args, run.cfg)
    kf = run.cfg.keyframes
    plan = select_keyframes(bundle.densepose.frames, kf.d_pose, kf.s_max, kf.mode).to_dict()
    plan.update(plan_segments(bundle.num_frames, run.cfg.train_config().window, kf.overlap).to_dict())
    clipio.write_plan(run.path("plan.json"), plan)


def cmd_plan_segments(args, run: Run) -> None:
    from tryonvid.keyframes import plan_segments

    base = clipio.read_plan(args.plan) if args.plan else {}
    if "num_frames" in base:
        n = base["num_frames"]
    else:
        n = _clip_poses(args, run.cfg).num_frames
    plan = {**base, **plan_segments(n, run.cfg.train_config().window, run.cfg.keyframes.overlap).to_dict()}
    clipio.write_plan(run.path("plan.json"), plan)


def cmd_eval(args, run: Run) -> None:
    gen = clipio.load_video(args.gen)
    ref = clipio.load_video(args.ref)
    report = metrics.MetricReport(metadata={"config_hash": run.cfg.hash(), "seed": run.cfg.seed})
    names = ["ssim", "flicker"] if gen.num_frames >= 2 else ["ssim"]
    report.add(Path(args.gen).name, metrics.evaluate_clips(gen, ref, names))
    run.path("report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.plot:
        from tryonvid.plot import frame_grid

        frame_grid({"generated": gen.frames, "reference": ref.frames}, run.path("frames.png"))


def cmd_ablate(args, run: Run) -> None:
    from tryonvid.pipeline.train import infer_clip, measure_attention_ratio, prepare_clip

    target, bundle, garment = _synthetic(run.cfg)
    ab = run.cfg.ablate
    steps = args.steps if args.steps is not None else ab.steps
    lr = args.lr if args.lr is not None else ab.lr
    rows = []
    table = run.path("ablation.jsonl")
    table.unlink(missing_ok=True)
    with clipio.MetricsLog(table) as out:
        for lam in ab.lambda_agn:
            for ct in ab.ct:
                state, curve = _train(run.cfg, target, bundle, garment, None, lambda_agn=float(lam), ct=bool(ct),
                                      steps=steps, lr=lr)
                clip = prepare_clip(bundle, garment, target, threshold=state.config.token_threshold)
                gen = infer_clip(bundle, garment, state, _schedule(run.cfg), seed=run.cfg.seed)
                row = {
                    "lambda_agn": float(lam),
                    "ct": bool(ct),
                    "steps": steps,
                    "final_dsm": curve[-1]["dsm"] if curve else None,
                    "in_mask_ratio": measure_attention_ratio(state, clip),
                    **metrics.evaluate_clips(gen, target),
                }
                out.write(row)
                rows.append(row)
                log.info("ablate %s", row)
    if args.plot:
        from tryonvid.plot import ablation_table_figure

        for value in ("in_mask_ratio", "ssim", "flicker"):
            ablation_table_figure(rows, run.path(f"ablation_{value}.png"), value)


def cmd_plot(args, run: Run) -> None:
    from tryonvid.plot import plot_metrics

    records = clipio.read_metrics(args.metrics)
    if not records:
        raise ConfigurationError(f"{args.metrics} holds no records")
    paths = plot_metrics(records, run.out / "plots")
    run.outputs.extend(f"plots/{p.name}" for p in paths)


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic clip directory"),
    "train-toy": (cmd_train_toy, "overfit the toy generator on one clip"),
    "infer": (cmd_infer, "sample a clip that fits the generator window"),
    "long-infer": (cmd_long_infer, "keyframe + segment generation for long clips"),
    "select-keyframes": (cmd_select_keyframes, "write a keyframe plan file"),
    "plan-segments": (cmd_plan_segments, "write a segment plan file"),
    "eval": (cmd_eval, "SSIM and flicker between two clips"),
    "ablate": (cmd_ablate, "attention-loss weight x cross-frame attention grid"),
    "plot": (cmd_plot, "one curve image per metric in a metrics log"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--force", action="store_true", help="reuse a run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    train = _Parser(add_help=False)
    train.add_argument("--lambda-agn", type=float)
    train.add_argument("--lambda-n", type=float)
    train.add_argument("--ct", choices=("on", "off"))
    train.add_argument("--loss", choices=("init", "refined"))
    train.add_argument("--steps", type=int)
    train.add_argument("--lr", type=float)

    plan = _Parser(add_help=False)
    plan.add_argument("--d-pose", type=float)
    plan.add_argument("--s-max", type=int)
    plan.add_argument("--window", type=int)
    plan.add_argument("--overlap", type=int)
    plan.add_argument("--keyframe-mode", choices=("greedy", "literal"))

    clip = _Parser(add_help=False)
    clip.add_argument("--clip", help="clip directory (default: synthetic clip from the config)")

    p = _Parser(prog="tryonvid", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parents = {
        "gen-data": [common],
        "train-toy": [common, train, plan, clip],
        "infer": [common, train, plan, clip],
        "long-infer": [common, train, plan, clip],
        "select-keyframes": [common, plan, clip],
        "plan-segments": [common, plan, clip],
        "eval": [common],
        "ablate": [common, train, plan],
        "plot": [common],
    }
    subs = {name: sub.add_parser(name, parents=parents[name], help=COMMANDS[name][1]) for name in COMMANDS}
    subs["gen-data"].add_argument("--frames", type=int)
    for name in ("infer", "long-infer"):
        subs[name].add_argument("--checkpoint", required=name == "infer")
    subs["infer"].add_argument("--dump-latents", action="store_true", help="save the latent after every Euler step")
    subs["long-infer"].add_argument("--plan", help="plan file from select-keyframes")
    subs["long-infer"].add_argument("--generator", choices=("model", "identity"), default="model")
    subs["plan-segments"].add_argument("--plan", help="extend an existing keyframe plan")
    subs["eval"].add_argument("--gen", required=True)
    subs["eval"].add_argument("--ref", required=True)
    subs["eval"].add_argument("--plot", action="store_true")
    subs["ablate"].add_argument("--plot", action="store_true")
    subs["plot"].add_argument("--metrics", required=True, help="line-delimited metrics log")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _emit_error("usage", str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = resolve_config(args)
        run = Run(args, cfg)
        COMMANDS[args.command][0](args, run)
        run.finish()
    except ConfigurationError as e:
        _emit_error("usage", str(e))
        return EXIT_USAGE
    except OSError as e:
        _emit_error("io", str(e))
        return EXIT_IO
    except (TryOnError, ValueError, KeyError) as e:
        _emit_error("runtime", str(e))
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
