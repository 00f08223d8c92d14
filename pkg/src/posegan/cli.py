"""Command-line front end: curate, train, sample, truncate-sweep, eval,
compose, animate.

Config values come from an optional JSON file (--config) and are overridden
by flags. A single --seed makes any command deterministic; outputs default
to $POSEGAN_RUN_DIR or the current directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch

from . import composition, conditioning, curation, evaluation, networks, toydata, training
from .networks import (DiscriminatorConfig, Generator, GeneratorConfig, heatmap_pyramid,
                       load_checkpoint, save_image_png)
from .pose import Pose

CONFIG_SCHEMA_VERSION = 1


def _run_dir(args) -> str:
    if getattr(args, "out", None):
        return args.out
    return os.environ.get("POSEGAN_RUN_DIR", ".")


def _set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def _load_config(path) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    version = cfg.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"schema_version: unsupported value {version}")
    return cfg


def _load_poses(path):
    with open(path) as f:
        obj = json.load(f)
    if isinstance(obj, dict):
        obj = [obj]
    return [Pose.from_json(o) for o in obj]


def _dataset(args):
    if args.data == "toy":
        return toydata.ToyPoseDataset(n=args.toy_size, resolution=args.resolution,
                                      seed=args.seed)
    data = np.load(args.data, allow_pickle=True)
    images = data["images"]
    poses = [Pose.from_json(json.loads(s)) for s in data["poses"]]
    return list(zip(images, poses))


def cmd_curate(args) -> int:
    with open(args.manifest) as f:
        clips, stats = curation.curate_manifest(f)
    with open(args.out, "w") as f:
        for clip in clips:
            f.write(json.dumps(clip.to_json()) + "\n")
    if args.stats:
        with open(args.stats, "w") as f:
            json.dump(stats.to_json(), f, indent=2)
    if args.test_count is not None:
        train_set, test_set = curation.split_clips(clips, args.test_count, seed=args.seed)
        base, ext = os.path.splitext(args.out)
        for name, subset in (("train", train_set), ("test", test_set)):
            with open(f"{base}.{name}{ext}", "w") as f:
                for clip in subset:
                    f.write(json.dumps(clip.to_json()) + "\n")
    print(f"curated {len(clips)} clips from {stats.videos_total} videos")
    return 0


def cmd_train(args) -> int:
    _set_deterministic(args.seed)
    file_cfg = _load_config(args.config) if args.config else {}
    g_cfg = GeneratorConfig(output_resolution=args.resolution,
                            **file_cfg.get("generator", {}))
    d_cfg = DiscriminatorConfig(input_resolution=args.resolution,
                                **file_cfg.get("discriminator", {}))
    t_kwargs = dict(file_cfg.get("train", {}))
    t_kwargs["seed"] = args.seed
    if args.steps is not None:
        t_kwargs["total_steps"] = args.steps
    if args.batch_size is not None:
        t_kwargs["batch_size"] = args.batch_size
    t_cfg = training.TrainConfig(**t_kwargs)
    out = _run_dir(args)
    os.makedirs(out, exist_ok=True)
    snapshot = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "generator": dataclasses.asdict(g_cfg),
        "discriminator": dataclasses.asdict(d_cfg),
        "train": dataclasses.asdict(t_cfg),
    }
    with open(os.path.join(out, "run_config.json"), "w") as f:
        json.dump(snapshot, f, indent=2)
    dataset = _dataset(args)
    training.train(g_cfg, d_cfg, t_cfg, dataset, out_dir=out)
    print(f"trained {t_cfg.total_steps} steps -> {out}")
    return 0


def _load_generator(path) -> Generator:
    g, _, g_ema, _ = load_checkpoint(path)
    g = g_ema if g_ema is not None else g
    g.eval()
    return g


def cmd_sample(args) -> int:
    _set_deterministic(args.seed)
    g = _load_generator(args.checkpoint)
    poses = _load_poses(args.pose)
    out = _run_dir(args)
    os.makedirs(out, exist_ok=True)
    cache = conditioning.MeanCache(g.mapping, n=args.mean_samples, seed=args.seed)
    gen = torch.Generator().manual_seed(args.seed)
    with torch.no_grad():
        for pi, pose in enumerate(poses):
            mean = cache.get(pose)[None]
            for si in range(args.n):
                z = torch.randn(1, g.cfg.z_dim, generator=gen)
                w = conditioning.truncate(
                    g.mapping(z, conditioning.pose_features(pose)), mean, args.psi)
                heat = heatmap_pyramid([pose], g.cfg.scales)
                img = g.synthesis(w, heat)[0]
                save_image_png(img, os.path.join(out, f"pose{pi}_sample{si}.png"))
                if args.no_human:
                    scene = composition.render_scene_only(g, w)[0]
                    save_image_png(scene, os.path.join(out, f"pose{pi}_sample{si}_scene.png"))
    print(f"wrote {len(poses) * args.n} samples to {out}")
    return 0


def cmd_truncate_sweep(args) -> int:
    _set_deterministic(args.seed)
    g = _load_generator(args.checkpoint)
    poses = _load_poses(args.pose)
    psis = [float(p) for p in args.psi.split(",")]
    out = _run_dir(args)
    os.makedirs(out, exist_ok=True)
    cache = conditioning.MeanCache(g.mapping, n=args.mean_samples, seed=args.seed)
    uncond = conditioning.unconditional_mean(g.mapping, poses, n=args.mean_samples,
                                             seed=args.seed)
    gen = torch.Generator().manual_seed(args.seed)
    rows = []
    with torch.no_grad():
        for pose in poses:
            z = torch.randn(1, g.cfg.z_dim, generator=gen)
            w = g.mapping(z, conditioning.pose_features(pose))
            heat = heatmap_pyramid([pose], g.cfg.scales)
            for label, mean in (("cond", cache.get(pose)[None]), ("uncond", uncond[None])):
                row = [g.synthesis(conditioning.truncate(w, mean, psi), heat)[0]
                       for psi in psis]
                rows.append(torch.cat(row, dim=-1))
    grid = torch.cat(rows, dim=-2)
    save_image_png(grid, os.path.join(out, "truncation_sweep.png"))
    print(f"wrote truncation grid for psi={psis} to {out}")
    return 0


def cmd_eval(args) -> int:
    _set_deterministic(args.seed)
    g = _load_generator(args.checkpoint)
    res = g.cfg.output_resolution
    if args.poses:
        poses = _load_poses(args.poses)
        reals = None
    else:
        ds = toydata.ToyPoseDataset(n=args.toy_size, resolution=res, seed=args.seed + 1)
        poses = [ds[i][1] for i in range(len(ds))]
        reals = [ds[i][0] for i in range(len(ds))]
    report = evaluation.evaluate_model(
        g, poses,
        pose_extractor=toydata.make_oracle_extractor(res),
        feature_extractor=evaluation.RandomConvEmbedder(seed=0),
        real_images=reals, psi=args.psi, alpha=args.alpha, seed=args.seed)
    out = args.report or os.path.join(_run_dir(args), "eval_report.json")
    with open(out, "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report))
    return 0


def cmd_compose(args) -> int:
    _set_deterministic(args.seed)
    g = _load_generator(args.checkpoint)
    pose = _load_poses(args.pose)[0]
    feat = conditioning.pose_features(pose)
    gen = torch.Generator().manual_seed(args.person_seed)
    w_person = g.mapping(torch.randn(1, g.cfg.z_dim, generator=gen), feat)
    gen = torch.Generator().manual_seed(args.scene_seed)
    w_scene = g.mapping(torch.randn(1, g.cfg.z_dim, generator=gen), feat)
    perceptual = composition.PerceptualLoss(evaluation.RandomConvEmbedder(seed=0))
    ws, composite, history = composition.compose(
        g, w_person.detach(), w_scene.detach(), pose, perceptual,
        steps=args.steps, lr=args.lr)
    out = _run_dir(args)
    os.makedirs(out, exist_ok=True)
    save_image_png(composite, os.path.join(out, "composite.png"))
    torch.save([w for w in ws], os.path.join(out, "composite_latent.pt"))
    if history:
        print(f"loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} steps")
    return 0


def cmd_animate(args) -> int:
    _set_deterministic(args.seed)
    g = _load_generator(args.checkpoint)
    poses = _load_poses(args.poses)
    z = torch.randn(1, g.cfg.z_dim, generator=torch.Generator().manual_seed(args.seed))
    frames = composition.animate(g, poses, z=z)
    out = _run_dir(args)
    os.makedirs(out, exist_ok=True)
    for i, frame in enumerate(frames):
        save_image_png(frame, os.path.join(out, f"frame_{i:04d}.png"))
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posegan",
                                description="pose-conditioned scene generation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curate", help="filter a detection/pose manifest into clips")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--stats")
    c.add_argument("--test-count", type=int, dest="test_count")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_curate)

    t = sub.add_parser("train", help="run adversarial training")
    t.add_argument("--out")
    t.add_argument("--config")
    t.add_argument("--data", default="toy", help="'toy' or a .npz dataset path")
    t.add_argument("--toy-size", type=int, default=2000)
    t.add_argument("--resolution", type=int, default=32)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="sample truncated images for poses")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--psi", type=float, default=0.75)
    s.add_argument("--no-human", action="store_true",
                   help="also write zero-heatmap scene variants")
    s.add_argument("--mean-samples", type=int, default=1000)
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sample)

    ts = sub.add_parser("truncate-sweep",
                        help="grid of conditional vs unconditional truncation")
    ts.add_argument("--checkpoint", required=True)
    ts.add_argument("--pose", required=True)
    ts.add_argument("--psi", default="0,0.25,0.5,0.75,1")
    ts.add_argument("--mean-samples", type=int, default=1000)
    ts.add_argument("--out")
    ts.add_argument("--seed", type=int, default=0)
    ts.set_defaults(fn=cmd_truncate_sweep)

    e = sub.add_parser("eval", help="PCKh and FID on a held-out pose set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--poses", help="pose JSON list; defaults to toy data")
    e.add_argument("--toy-size", type=int, default=256)
    e.add_argument("--psi", type=float, default=0.75)
    e.add_argument("--alpha", type=float, default=0.5)
    e.add_argument("--report")
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    co = sub.add_parser("compose", help="place a person into another scene")
    co.add_argument("--checkpoint", required=True)
    co.add_argument("--pose", required=True)
    co.add_argument("--person-seed", type=int, default=0)
    co.add_argument("--scene-seed", type=int, default=1)
    co.add_argument("--steps", type=int, default=1000)
    co.add_argument("--lr", type=float, default=0.05)
    co.add_argument("--out")
    co.add_argument("--seed", type=int, default=0)
    co.set_defaults(fn=cmd_compose)

    a = sub.add_parser("animate", help="animate a pose sequence, scene fixed")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--poses", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(fn=cmd_animate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
