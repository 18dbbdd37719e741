"""Command-line surface: dataset generation, training, rendering, editing,
generation, inversion, meshing, evaluation, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, "rb") as fh:
        if path.endswith(".toml"):
            try:
                import tomllib  # py311+
            except ModuleNotFoundError:
                import tomli as tomllib
            return tomllib.load(fh)
        return json.load(fh)


def build_parser():
    p = argparse.ArgumentParser(
        prog="partfields",
        description="Part-based neural radiance fields: train, render, edit, evaluate.",
    )
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--config", help="JSON or TOML config file (train/render/loss fields)")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write an analytic multi-ellipsoid dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--objects", type=int, default=2)
    g.add_argument("--views", type=int, default=8)
    g.add_argument("--res", type=int, default=64)
    g.add_argument("--min-parts", type=int, default=2)
    g.add_argument("--max-parts", type=int, default=3)
    g.add_argument("--overlap", action="store_true", help="allow overlapping ellipsoids")

    t = sub.add_parser("train", help="fit the model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--steps", type=int, default=None, help="override total steps")
    t.add_argument("--parts", type=int, default=None)
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--resume", help="checkpoint to continue from")

    r = sub.add_parser("render", help="render a trained object from an orbit camera")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--object", required=True, help="object id or 'sample'")
    r.add_argument("--out", required=True, help="output PNG")
    r.add_argument("--azimuth", type=float, default=30.0)
    r.add_argument("--elevation", type=float, default=35.0)
    r.add_argument("--radius", type=float, default=2.6)
    r.add_argument("--size", type=int, default=128)
    r.add_argument("--samples", type=int, default=None)
    r.add_argument("--mode", choices=("hard", "soft"), default="hard")

    gen = sub.add_parser("generate", help="sample new instances from the latent prior")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--count", type=int, default=4)
    gen.add_argument("--size", type=int, default=128)
    gen.add_argument("--mesh", action="store_true", help="also export OBJ meshes")

    e = sub.add_parser("edit", help="apply an edit-script JSON and render")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--object", required=True)
    e.add_argument("--script", required=True, help="edit script JSON path")
    e.add_argument("--out", required=True, help="output PNG")
    e.add_argument("--azimuth", type=float, default=30.0)
    e.add_argument("--elevation", type=float, default=35.0)
    e.add_argument("--radius", type=float, default=2.6)
    e.add_argument("--size", type=int, default=128)

    ip = sub.add_parser("interpolate", help="blend two objects and render the result")
    ip.add_argument("--checkpoint", required=True)
    ip.add_argument("--object-a", required=True)
    ip.add_argument("--object-b", required=True)
    ip.add_argument("--alpha", type=float, default=0.5)
    ip.add_argument("--channel", choices=("shape", "texture", "both"), default="both")
    ip.add_argument("--out", required=True)
    ip.add_argument("--size", type=int, default=128)

    inv = sub.add_parser("invert", help="fit latents to posed masks (or images)")
    inv.add_argument("--checkpoint", required=True)
    inv.add_argument("--data", required=True, help="dataset dir with target object")
    inv.add_argument("--object", required=True, help="target object id inside --data")
    inv.add_argument("--mode", choices=("shape", "image"), default="shape")
    inv.add_argument("--steps", type=int, default=None)
    inv.add_argument("--views", type=int, default=5)
    inv.add_argument("--out", required=True, help="output JSON with fitted latents")

    m = sub.add_parser("mesh", help="extract an OBJ mesh from a trained object")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--object", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--resolution", type=int, default=32, help="initial grid resolution")
    m.add_argument("--levels", type=int, default=1, help="refinement levels")
    m.add_argument("--parts", action="store_true", help="per-part groups")

    ev = sub.add_parser("eval", help="MMD/COV report between two mesh directories")
    ev.add_argument("--generated", required=True)
    ev.add_argument("--reference", required=True)
    ev.add_argument("--points", type=int, default=2048)

    s = sub.add_parser("serve", help="run the HTTP editing service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8642)
    return p


def _load_state(path):
    from .training import TrainState

    return TrainState.load(path)


def _instance_for(state, name, seed=0):
    from . import edit as E

    if name == "sample":
        table = {
            oid: {"s": e["s"].data, "t": e["t"].data} for oid, e in state.embeddings.items()
        }
        prior = E.fit_prior(table)
        z_s, z_t = E.sample_latents(prior, np.random.default_rng(seed))
        return E.InstanceState.from_latents(state.weights, z_s, z_t, source={"kind": "sample"})
    if name not in state.embeddings:
        raise SystemExit(f"error: unknown object id {name!r} "
                         f"(have: {', '.join(sorted(state.embeddings))})")
    e = state.embeddings[name]
    return E.InstanceState.from_latents(
        state.weights, e["s"].data, e["t"].data, source={"kind": "object", "oid": name}
    )


def _render_instance(state, inst, args, mode="hard"):
    from .geometry import orbit_pose
    from .render import RenderConfig, render_image

    pose = orbit_pose(args.azimuth, args.elevation, args.radius, args.size, args.size)
    cfg = RenderConfig(mode=mode)
    n = getattr(args, "samples", None)
    rgb, mask, assigned = render_image(
        state.weights, inst.part_views(state.config.dtype), pose, cfg, n_samples=n
    )
    return rgb, mask, assigned


def cmd_gen_data(args):
    from .synthetic import generate_dataset

    specs = generate_dataset(
        args.out, n_objects=args.objects, n_views=args.views, resolution=args.res,
        n_ellipsoids=(args.min_parts, args.max_parts), seed=args.seed,
        non_overlapping=not args.overlap,
    )
    print(f"wrote {args.objects} objects x {args.views} views to {args.out} "
          f"({sum(len(s.ellipsoids) for s in specs.values())} ellipsoids total)")
    return 0


def cmd_train(args):
    from .dataset import load_dataset
    from .losses import LossWeights
    from .training import TrainConfig, TrainState, fit_resume

    index = load_dataset(args.data)
    file_cfg = _load_config_file(args.config)
    if args.resume:
        state = TrainState.load(args.resume)
        cfg = state.config
    else:
        cfg_dict = dict(file_cfg.get("train", file_cfg))
        cfg_dict.setdefault("seed", args.seed)
        cfg_dict.setdefault("precision", args.precision)
        if args.parts is not None:
            cfg_dict["n_parts"] = args.parts
        if args.steps is not None:
            cfg_dict["total_steps"] = args.steps
        if "loss" in cfg_dict and isinstance(cfg_dict["loss"], dict):
            cfg_dict["loss"] = LossWeights.from_dict(cfg_dict["loss"])
        cfg = TrainConfig(**cfg_dict)
        state = TrainState.init(cfg, index.object_ids)

    def progress(step, metrics, flags):
        if step % args.log_every == 0 or step == cfg.total_steps:
            parts = " ".join(f"{k}={v:.4f}" for k, v in metrics.items() if k != "lr")
            print(f"step {step}: {parts} lr={metrics['lr']:.2e}", flush=True)

    steps = None if args.steps is None else max(0, args.steps - state.step)
    fit_resume(state, index, steps=steps, checkpoint_path=args.out, progress=progress)
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_render(args):
    from . import pngio

    state = _load_state(args.checkpoint)
    inst = _instance_for(state, args.object, args.seed)
    rgb, mask, _ = _render_instance(state, inst, args, mode=args.mode)
    pngio.write_png(args.out, pngio.float_to_u8(rgb))
    print(f"wrote {args.out}")
    return 0


def cmd_generate(args):
    from . import pngio
    from .mesh import extract_mesh, mesh_to_obj, object_occupancy

    state = _load_state(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        inst = _instance_for(state, "sample", seed=args.seed + i)
        ns = argparse.Namespace(azimuth=30.0, elevation=35.0, radius=2.6, size=args.size)
        rgb, _, _ = _render_instance(state, inst, ns)
        pngio.write_png(os.path.join(args.out, f"sample{i:03d}.png"), pngio.float_to_u8(rgb))
        if args.mesh:
            field = object_occupancy(state.weights, inst.part_views(state.config.dtype))
            mesh = extract_mesh(field)
            with open(os.path.join(args.out, f"sample{i:03d}.obj"), "w") as fh:
                fh.write(mesh_to_obj(mesh))
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_edit(args):
    from . import pngio
    from .edit import apply_script

    state = _load_state(args.checkpoint)
    inst = _instance_for(state, args.object, args.seed)
    with open(args.script) as fh:
        script = json.load(fh)
    edited = apply_script(inst, script)
    rgb, _, _ = _render_instance(state, edited, args)
    pngio.write_png(args.out, pngio.float_to_u8(rgb))
    print(f"applied {len(script)} edits; wrote {args.out}")
    return 0


def cmd_interpolate(args):
    from . import pngio
    from .edit import interpolate

    state = _load_state(args.checkpoint)
    a = _instance_for(state, args.object_a, args.seed)
    b = _instance_for(state, args.object_b, args.seed)
    mid = interpolate(state.weights, a, b, args.alpha, scope="whole", channel=args.channel)
    ns = argparse.Namespace(azimuth=30.0, elevation=35.0, radius=2.6, size=args.size)
    rgb, _, _ = _render_instance(state, mid, ns)
    pngio.write_png(args.out, pngio.float_to_u8(rgb))
    print(f"wrote {args.out}")
    return 0


def cmd_invert(args):
    from .dataset import load_dataset
    from .edit import fit_prior, invert_image, invert_shape

    state = _load_state(args.checkpoint)
    index = load_dataset(args.data)
    entry = next((o for o in index.objects if o.oid == args.object), None)
    if entry is None:
        raise SystemExit(f"error: object {args.object!r} not found in {args.data}")
    views = [
        {"pose": v.pose, "mask": v.mask, "image": v.image}
        for v in entry.views[: args.views]
    ]
    table = {oid: {"s": e["s"].data, "t": e["t"].data} for oid, e in state.embeddings.items()}
    prior = fit_prior(table)
    fn = invert_image if args.mode == "image" else invert_shape
    steps = args.steps if args.steps is not None else (2000 if args.mode == "image" else 700)
    (z_s, z_t), report = fn(state.weights, views, steps=steps, seed=args.seed, prior=prior)
    with open(args.out, "w") as fh:
        json.dump(
            {
                "mode": args.mode,
                "z_s": z_s.tolist(),
                "z_t": z_t.tolist(),
                "initial_loss": report["initial"],
                "final_loss": report["final"],
            },
            fh,
        )
    print(f"inversion {args.mode}: loss {report['initial']:.4f} -> {report['final']:.4f}; wrote {args.out}")
    return 0


def cmd_mesh(args):
    from .edit import InstanceState
    from .mesh import extract_mesh, merge_meshes, mesh_to_obj, object_occupancy, part_occupancy

    state = _load_state(args.checkpoint)
    inst = _instance_for(state, args.object, args.seed)
    views = inst.part_views(state.config.dtype)
    if args.parts:
        meshes = [
            extract_mesh(part_occupancy(state.weights, pv), args.resolution, args.levels)
            for pv in views
        ]
        mesh = merge_meshes(meshes)
        text = mesh_to_obj(mesh, groups=True)
    else:
        field = object_occupancy(state.weights, views)
        text = mesh_to_obj(extract_mesh(field, args.resolution, args.levels))
    with open(args.out, "w") as fh:
        fh.write(text)
    print(f"wrote {args.out}")
    return 0


def _load_cloud_dir(path, n_points, seed):
    from .mesh import Mesh, sample_surface

    clouds = []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if name.endswith(".obj"):
            verts, faces = [], []
            with open(full) as fh:
                for line in fh:
                    if line.startswith("v "):
                        verts.append([float(x) for x in line.split()[1:4]])
                    elif line.startswith("f "):
                        faces.append([int(t.split("/")[0]) - 1 for t in line.split()[1:4]])
            mesh = Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))
            clouds.append(sample_surface(mesh, n_points, seed=seed))
        elif name.endswith(".xyz"):
            clouds.append(np.loadtxt(full).reshape(-1, 3))
    if not clouds:
        raise SystemExit(f"error: no .obj or .xyz files in {path}")
    return clouds


def cmd_eval(args):
    from .metrics import coverage, mmd, pairwise_chamfer

    G = _load_cloud_dir(args.generated, args.points, args.seed)
    R = _load_cloud_dir(args.reference, args.points, args.seed)
    cd = pairwise_chamfer(G, R)
    report = {
        "mmd": mmd(G, R, cd_matrix=cd),
        "cov": coverage(G, R, cd_matrix=cd),
        "n_generated": len(G),
        "n_reference": len(R),
        "points_per_cloud": args.points,
    }
    print(json.dumps(report))
    return 0


def cmd_serve(args):
    from .service import run_service

    run_service(args.checkpoint, args.host, args.port)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "render": cmd_render,
    "generate": cmd_generate,
    "edit": cmd_edit,
    "interpolate": cmd_interpolate,
    "invert": cmd_invert,
    "mesh": cmd_mesh,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SystemExit:
        raise
    except (KeyboardInterrupt, BrokenPipeError):
        return 1
    except Exception as exc:  # runtime failure -> exit 1 with message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
