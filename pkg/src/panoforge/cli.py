"""``panoforge`` command line: synthesis, projection, blending, reconstruction,
mask sampling, evaluation and the toy flow-matching demo.

Every subcommand that writes files also writes ``manifest.json`` (sorted
keys, inputs identified by file name and SHA-256) so identical runs give
byte-identical manifests. Exit codes: 0 ok, 2 usage, 3 data, 4 numerical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .erp import Modality, PanoMap
from .errors import DataError, NumericalError
from .io import default_suffix, load_pano, read_png, save_pano, write_png

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PATH_KEYS = {"image", "pano", "distance", "albedo", "normal", "roughness", "metallic", "rgb", "pred", "gt"}
SKIP_KEYS = {"command", "out", "config", "manifest"}


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def _vec3(text):
    try:
        vals = [float(x) for x in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(vals)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(x, Path):
        return x.name
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    cfg = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = val
    return cfg


def _config_view(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in SKIP_KEYS or k.startswith("_"):
            continue
        out[k] = Path(v).name if (k in PATH_KEYS and v is not None) else v
    return out


def write_manifest(out_dir, args, inputs=(), outputs=(), results=None):
    out_dir = Path(out_dir)
    config = _jsonable(_config_view(args))
    chash = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    man = {
        "command": args.command,
        "config": config,
        "config_sha256": chash,
        "inputs": [{"file": Path(p).name, "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"file": Path(p).name, "sha256": _sha256(p)} for p in sorted(outputs, key=lambda p: Path(p).name)],
        "results": results or {},
        "versions": {"numpy": np.__version__, "panoforge": __version__},
    }
    path = out_dir / "manifest.json"
    path.write_text(dumps(man))
    return path


def _out_dir(args):
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _camera(args):
    from .projection import PinholeCamera

    return PinholeCamera(math.radians(args.fov), args.cam_width, args.cam_height,
                         math.radians(args.yaw), math.radians(args.pitch), math.radians(args.roll))


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    from .scene import preset, render

    scene = preset(args.preset)
    maps = render(scene, 2 * args.height, args.height)
    out = _out_dir(args)
    files = []
    for mod in (Modality.RGB, Modality.DISTANCE, Modality.NORMAL, Modality.ALBEDO,
                Modality.ROUGHNESS, Modality.METALLIC):
        p = save_pano(out / f"{mod.value}{default_suffix(mod)}", maps[mod])
        files.append(p)
    sj = out / "scene.json"
    sj.write_text(scene.to_json())
    files.append(sj)
    files += [p for p in out.glob("*.valid.png")]
    write_manifest(out, args, outputs=files, results={"preset": scene.name})
    return EXIT_OK


def cmd_project(args):
    from .projection import project_to_pano

    img = read_png(args.image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    args.cam_height, args.cam_width = img.shape[:2]
    cam = _camera(args)
    masked, mask = project_to_pano(img, cam, 2 * args.height, args.height, Modality.RGB)
    out = _out_dir(args)
    files = [save_pano(out / "masked.png", masked), save_pano(out / "mask.png", mask)]
    files += [p for p in out.glob("*.valid.png")]
    write_manifest(out, args, [args.image], files, {"mask_fraction": float(mask.values().mean())})
    return EXIT_OK


def cmd_unproject(args):
    from .projection import pano_to_perspective

    mod = Modality(args.modality)
    pano = load_pano(args.pano, mod)
    cam = _camera(args)
    view = pano_to_perspective(pano, cam)
    out = _out_dir(args)
    if mod in (Modality.DISTANCE, Modality.NORMAL, Modality.MATERIAL):
        from .io import write_pfm

        path = out / "view.pfm"
        write_pfm(path, view)
    else:
        path = out / "view.png"
        write_png(path, np.clip(view, 0, 1), bits=16 if mod in (Modality.ROUGHNESS, Modality.METALLIC) else 8)
    write_manifest(out, args, [args.pano], [path])
    return EXIT_OK


def cmd_blend(args):
    from .projection import seam_blend

    mod = Modality(args.modality)
    pano = load_pano(args.pano, mod)
    out = _out_dir(args)
    path = save_pano(out / f"blended{default_suffix(mod)}", seam_blend(pano, args.band))
    write_manifest(out, args, [args.pano], [path])
    return EXIT_OK


def _load_textures(args):
    tex, files = {}, []
    for mod in (Modality.ALBEDO, Modality.NORMAL, Modality.ROUGHNESS, Modality.METALLIC):
        p = getattr(args, mod.value, None)
        if p:
            tex[mod] = load_pano(p, mod)
            files.append(p)
    return tex, files


def cmd_recon(args):
    from .recon import build_mesh, export_obj, raycast_distance

    dist = load_pano(args.distance, Modality.DISTANCE)
    tex, tex_files = _load_textures(args)
    for mod, pano in tex.items():
        if pano.shape[:2] != dist.shape[:2]:
            raise DataError(f"{mod.value} map is not pixel-aligned with the distance map")
    mesh = build_mesh(dist, args.origin, args.tau, tex)
    out = _out_dir(args)
    files = export_obj(mesh, out / "scene.obj", name="scene")
    results = {"n_vertices": len(mesh.vertices), "n_triangles": len(mesh.triangles),
               "n_rejected": int(mesh.rejected)}
    if args.check:
        t, hits = raycast_distance(mesh, dist.width, dist.height, args.origin)
        gt = dist.values().astype(np.float64)
        ok = dist.valid & np.isfinite(t)
        rel = np.abs(t[ok] - gt[ok]) / gt[ok]
        results["roundtrip_median_relerr"] = float(np.median(rel)) if rel.size else math.inf
        results["roundtrip_miss_fraction"] = float(1.0 - ok.sum() / max(dist.valid.sum(), 1))
    write_manifest(out, args, [args.distance, *tex_files], files, results)
    print(dumps(results), end="")
    return EXIT_OK


def cmd_mask(args):
    from .occlusion import DisplacementSampler, sample_displacement, warp_pano

    dist = load_pano(args.distance, Modality.DISTANCE)
    sources, src_files = [dist], [args.distance]
    for mod in (Modality.RGB, Modality.ALBEDO, Modality.NORMAL, Modality.ROUGHNESS, Modality.METALLIC):
        p = getattr(args, mod.value, None)
        if p:
            sources.append(load_pano(p, mod))
            src_files.append(p)
    if args.displacement is not None:
        disp = np.asarray(args.displacement, dtype=np.float64)
    else:
        sampler = DisplacementSampler(args.seed, args.rho, args.percentile)
        disp = sample_displacement(sampler, dist)
    res = warp_pano(sources, dist, disp, args.tau, args.origin)
    out = _out_dir(args)
    files = [save_pano(out / "mask.png", res.mask)]
    for mod, pano in res.warped.items():
        files.append(save_pano(out / f"warped_{mod.value}{default_suffix(mod)}", pano))
    files += [p for p in out.glob("*.valid.png")]
    results = {"displacement": disp, "mask_fraction": res.mask_fraction}
    write_manifest(out, args, src_files, files, results)
    print(dumps(results), end="")
    return EXIT_OK


def cmd_eval(args):
    from .metrics import evaluate

    mod = {"distance": Modality.DISTANCE, "normal": Modality.NORMAL, "image": Modality.RGB}[args.task]
    pred = load_pano(args.pred, mod)
    gt = load_pano(args.gt, mod)
    report = evaluate(args.task, pred, gt, args.median_scale).to_dict()
    text = dumps(report)
    sys.stdout.write(text)
    if args.manifest:
        Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
        write_manifest(Path(args.manifest).parent, args, [args.pred, args.gt], [], report)
    return EXIT_OK


def flow_demo(seed=0, assembly="separate", steps=20, train_steps=2000, lr=1e-2, model="mlp",
              grid=(4, 8), out=None):
    """Train a toy model on the Gaussian-shift task and report the checks."""
    from . import flowmatch as fm
    from .flowmatch.checkpoint import load_lora, merge_lora, save_checkpoint, save_lora

    data, cond = fm.gaussian_shift_dataset(grid=grid, seed=seed)
    spec = fm.TaskSpec((cond,), ("generic",), fm.Assembly(assembly))
    batch = fm.assemble_tokens(spec, data[0][0])
    n_routes = fm.n_routes_for(spec)
    if model == "linear":
        net = fm.LinearVelocity(batch.tokens.shape[1], batch.out_width, seed=seed)
    elif model == "mlp":
        net = fm.TinyMLP(batch.tokens.shape[1], batch.out_width, n_routes=n_routes, seed=seed)
    else:
        raise DataError(f"unknown model {model!r}")
    res = fm.train_toy(net, data, spec, fm.TrainSettings(steps=train_steps, lr=lr, seed=seed))
    report = {
        "assembly": spec.assembly.value,
        "model": model,
        "n_params": net.n_params(),
        "initial_loss": float(res.losses[0]),
        "final_loss": float(res.losses[-10:].mean()),
        "transport_error": fm.transport_error(net, data, spec, steps),
        "n_routes": n_routes,
        "route_counts": np.bincount(batch.routes).tolist(),
    }
    # Euler is exact on a constant field, whatever the step count
    c = fm.ConstantVelocity(np.full(batch.out_width, 0.37))
    z0 = data[0][0]
    zh = fm.euler_integrate(c, z0, spec, fm.TimestepSchedule.uniform(steps))
    report["constant_field_error"] = float(np.abs(zh - (z0 + 0.37)).max())
    if isinstance(net, fm.TinyMLP):
        diffs = []
        rng = np.random.default_rng(seed)
        for r in range(n_routes):
            merged = merge_lora(net.params, net.params, net.alpha, r)
            for which in (1, 2):
                layer = net.lora_layer(which, r)
                x = rng.standard_normal((64, layer.base_weight.shape[1]))
                diffs.append(np.abs(fm.lora_forward(layer, x) - x @ merged[f"W{which}"].T).max())
        report["lora_merge_max_abs_diff"] = float(max(diffs))
    files = []
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "model.pfck", net.params)
        files.append(out / "model.pfck")
        if isinstance(net, fm.TinyMLP):
            save_lora(out / "adapters.pflr", net.params, net.alpha)
            load_lora(out / "adapters.pflr")
            files.append(out / "adapters.pflr")
    return report, files


def cmd_flow_demo(args):
    report, files = flow_demo(args.seed, args.assembly, args.steps, args.train_steps, args.lr,
                              args.model, out=args.out)
    if args.out:
        write_manifest(args.out, args, outputs=files, results=report)
    sys.stdout.write(dumps(report))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _camera_flags(p):
    p.add_argument("--fov", type=float, default=90.0, help="horizontal field of view, degrees")
    p.add_argument("--yaw", type=float, default=0.0, help="degrees")
    p.add_argument("--pitch", type=float, default=0.0, help="degrees")
    p.add_argument("--roll", type=float, default=0.0, help="degrees")


def build_parser():
    ap = argparse.ArgumentParser(prog="panoforge", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"panoforge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file; command-line flags win")
        p.set_defaults(_func=func)
        return p

    p = add("synth", cmd_synth, "render an analytic preset to all modality files")
    p.add_argument("--preset", default="box-room")
    p.add_argument("--height", type=int, default=512, help="pano height (width = 2 * height)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("project", cmd_project, "place a perspective image on an empty panorama")
    p.add_argument("--image", required=True)
    _camera_flags(p)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--out", required=True)

    p = add("unproject", cmd_unproject, "render a perspective view from a panorama")
    p.add_argument("--pano", required=True)
    p.add_argument("--modality", default="rgb", choices=[m.value for m in Modality])
    _camera_flags(p)
    p.add_argument("--cam-width", type=int, default=512)
    p.add_argument("--cam-height", type=int, default=512)
    p.add_argument("--out", required=True)

    p = add("blend", cmd_blend, "crossfade the longitude seam")
    p.add_argument("--pano", required=True)
    p.add_argument("--modality", default="rgb", choices=[m.value for m in Modality])
    p.add_argument("--band", type=int, default=8)
    p.add_argument("--out", required=True)

    p = add("recon", cmd_recon, "mesh a distance map and export OBJ/MTL/PNG")
    p.add_argument("--distance", required=True)
    for m in ("albedo", "normal", "roughness", "metallic"):
        p.add_argument(f"--{m}")
    p.add_argument("--tau", type=float, default=1.3)
    p.add_argument("--origin", type=_vec3, default=(0.0, 0.0, 0.0))
    p.add_argument("--no-check", dest="check", action="store_false", help="skip the ray-cast round trip")
    p.add_argument("--out", required=True)

    p = add("mask", cmd_mask, "occlusion-aware mask for a displaced viewpoint")
    p.add_argument("--distance", required=True)
    for m in ("rgb", "albedo", "normal", "roughness", "metallic"):
        p.add_argument(f"--{m}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--percentile", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=1.3)
    p.add_argument("--origin", type=_vec3, default=(0.0, 0.0, 0.0))
    p.add_argument("--displacement", type=_vec3, default=None, help="x,y,z; overrides sampling")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "metric report as JSON on stdout")
    p.add_argument("--task", required=True, choices=["distance", "normal", "image"])
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--median-scale", action="store_true")
    p.add_argument("--manifest", help="also write a manifest.json next to this path")

    p = add("flow-demo", cmd_flow_demo, "toy MIMO flow-matching run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assembly", default="separate", choices=["shared-branch", "shared-token", "separate"])
    p.add_argument("--model", default="mlp", choices=["mlp", "linear"])
    p.add_argument("--steps", type=int, default=20, help="Euler steps at sampling time")
    p.add_argument("--train-steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--out")
    return ap


def _config_path(argv):
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(ap, argv):
    """Parse ``argv`` with config-file values as defaults, so explicit flags win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    if path is None or command not in sub.choices:
        return ap.parse_args(argv)
    cfg = read_config(path)
    sp = sub.choices[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, val in cfg.items():
        if key not in actions:
            continue  # keys for other subcommands share the file
        act = actions[key]
        if act.nargs == 0:  # store_true / store_false
            defaults[key] = val.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = act.type(val) if act.type else val
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices and defaults[key] not in act.choices:
                raise UsageError(f"config key {key!r}: {val!r} not in {list(act.choices)}")
        act.required = False
    sp.set_defaults(**defaults)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, OSError) as exc:
        print(f"panoforge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args._func(args)
    except NumericalError as exc:
        print(f"panoforge {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"panoforge {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
