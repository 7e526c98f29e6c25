"""Command-line front end: prepare, train, reconstruct, gauss-recon, eval.

Every subcommand reads an optional YAML config (``--config``); any key can
also be given as a flag (``--n-d 30``), and flags win. Flag values are
parsed as YAML scalars or lists, so ``--points [1000,5000]`` and
``--holes null`` work. The resolved config is written to the output
directory as ``config.yaml``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
import yaml

from .errors import ContractError, MireconError

log = logging.getLogger("mirecon")

COMMON = {"seed": 0, "threads": 1, "deterministic": True, "out": "out"}

PREPARE = {
    "meshes": None,
    "preset": "dense",
    "points": None,  # int or [lo, hi]; None takes the preset range
    "near": 800,
    "cube": 200,
    "n_d": None,
    "n_s": None,
    "k": None,
    "grid_size": 1.0 / 256.0,
    "noise": True,
    "beta_range": [0.02, 0.04],
    "clean_shape_prob": 0.1,
    "holes": None,  # [r_min, r_max] or None
    "save_clouds": True,
}

TRAIN = {
    "dataset": None,
    "epochs": 10,
    "lr": 1e-3,
    "batch_size": 64,
    "widths": "desk",
    "c": 16,
    "n_d": None,
    "n_s": None,
    "k": None,
    "resume": None,
    "plot": True,
}

RECONSTRUCT = {
    "checkpoint": None,
    "cloud": None,
    "res": 64,
    "band": None,  # distance band (world units) or None for the full grid
    "fill": "nearest",
    "format": "obj",
    "dump_grid": False,
    "n_d": None,
    "n_s": None,
    "k": None,
}

GAUSS = {"cloud": None, "res": 64, "band": None, "format": "obj", "dump_grid": False}

EVAL = {"recon": None, "gt": None, "samples": 10_000, "eval_seed": 20240101, "plot": True}

COMMANDS = {"prepare": PREPARE, "train": TRAIN, "reconstruct": RECONSTRUCT, "gauss-recon": GAUSS, "eval": EVAL}


class UsageError(MireconError):
    pass


class _Counter(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record):
        if record.levelno == logging.WARNING:
            self.count += 1


def _yaml_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def build_parser():
    ap = argparse.ArgumentParser(prog="mirecon", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML file with parameters for this subcommand")
        for key in list(COMMON) + list(keys):
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=_yaml_value, default=None)
    return ap


def resolve_config(command, args):
    """Defaults < config file < flags. Unknown file keys are an error."""
    cfg = dict(COMMON, **COMMANDS[command])
    if args.config:
        try:
            with open(args.config) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a mapping")
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(map(str, unknown))}")
        cfg.update(data)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(missing))


def _echo_config(cfg, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def _setup_threads(cfg):
    from .training import set_deterministic

    if cfg["deterministic"]:
        set_deterministic(int(cfg["threads"]))
    else:
        torch.set_num_threads(int(cfg["threads"]))


# ---------------------------------------------------------------------------


def cmd_prepare(cfg):
    from .datagen import DENSE_PRESET, SPARSE_PRESET, NoiseConfig, apply_noise, build_samples, generate_queries, \
        punch_holes
    from .dataset_io import DatasetManifest, ShapeRecord, write_dataset
    from .gauss import ModifiedIndicatorParams
    from .geometry import normalize_mesh, sample_surface
    from .meshio import load_mesh, save_cloud, save_mesh

    _require(cfg, "meshes")
    presets = {"dense": DENSE_PRESET, "sparse": SPARSE_PRESET}
    if cfg["preset"] not in presets:
        raise UsageError(f"preset must be one of {sorted(presets)}")
    preset = presets[cfg["preset"]]
    n_d, n_s, k = (cfg[key] if cfg[key] is not None else preset[key] for key in ("n_d", "n_s", "k"))
    points = cfg["points"] if cfg["points"] is not None else preset["points"]
    lo, hi = (points, points) if np.isscalar(points) else points

    mesh_dir = Path(cfg["meshes"])
    if not mesh_dir.is_dir():
        raise UsageError(f"mesh directory {mesh_dir} does not exist")
    files = sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in (".obj", ".ply"))
    if not files:
        raise MireconError(f"no .obj/.ply meshes in {mesh_dir}")

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = ModifiedIndicatorParams(grid_size=float(cfg["grid_size"]))
    seeds = np.random.SeedSequence(int(cfg["seed"])).spawn(len(files))
    records, batches, skipped, noisy = [], [], 0, 0
    for path, ss in zip(files, seeds):
        try:
            mesh = normalize_mesh(load_mesh(path, watertight=True))
        except MireconError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            skipped += 1
            continue
        rng = np.random.default_rng(ss)
        shape_seed = int(rng.integers(2**31))
        n_pts = int(rng.integers(int(lo), int(hi) + 1))
        cloud = sample_surface(mesh, n_pts, seed=shape_seed)
        if cfg["noise"]:
            noise = NoiseConfig.draw(rng, tuple(cfg["beta_range"]), float(cfg["clean_shape_prob"]))
        else:
            noise = NoiseConfig()
        noisy += noise.beta > 0 and noise.alpha_p > 0
        cloud = apply_noise(cloud, noise, seed=shape_seed + 1)
        radius = 0.0
        if cfg["holes"]:
            cloud, radius = punch_holes(cloud, tuple(cfg["holes"]), seed=shape_seed + 2, min_points=n_d,
                                        return_radius=True)
        q, t = generate_queries(mesh, int(cfg["near"]), int(cfg["cube"]), params, seed=shape_seed + 3)
        batches.append(build_samples(cloud, q, n_d, n_s, k, seed=shape_seed + 4, targets=t))
        records.append(ShapeRecord(path.stem, len(cloud), len(q), shape_seed, asdict(noise), radius))
        if cfg["save_clouds"]:
            (out / "clouds").mkdir(exist_ok=True)
            (out / "gt").mkdir(exist_ok=True)
            save_cloud(out / "clouds" / f"{path.stem}.ply", cloud)
            save_mesh(out / "gt" / f"{path.stem}.obj", mesh)
    if not records:
        raise MireconError("no usable meshes")
    write_dataset(out / "dataset.lmir", DatasetManifest(records), batches)
    n_samples = sum(len(b) for b in batches)
    print(f"prepared {len(records)} shapes, {n_samples} samples (n_d={n_d}, n_s={n_s}, k={k}); "
          f"noise draws: {noisy} noisy, {len(records) - noisy} clean; skipped {skipped}")
    return 0


def cmd_train(cfg):
    from .datagen import SampleBatch
    from .dataset_io import read_dataset
    from .network import DESK_CONFIG
    from .plotting import plot_loss_curve
    from .training import TrainConfig, train

    _require(cfg, "dataset")
    _, batches = read_dataset(cfg["dataset"])
    data = SampleBatch.concat(batches)
    dims = data.dims
    for key, val in zip(("n_d", "n_s", "k"), dims):
        if cfg[key] is not None and int(cfg[key]) != val:
            raise ContractError(f"config {key}={cfg[key]} but the dataset has {key}={val}")
    widths = {"desk": DESK_CONFIG, "full": {}}.get(cfg["widths"])
    if widths is None:
        raise UsageError("widths must be 'desk' or 'full'")
    tcfg = TrainConfig(lr=float(cfg["lr"]), batch_size=int(cfg["batch_size"]), epochs=int(cfg["epochs"]),
                       seed=int(cfg["seed"]), n_d=dims[0], n_s=dims[1], k=dims[2], c=int(cfg["c"]),
                       widths=dict(widths))
    model, history = train(data, tcfg, out_dir=cfg["out"], resume=cfg["resume"])
    if cfg["plot"] and history:
        plot_loss_curve(history, os.path.join(cfg["out"], "loss.png"))
    last = history[-1][1] if history else float("nan")
    print(f"trained {tcfg.epochs} epochs on {len(data)} samples, {len(history)} steps, final loss {last:.6f}")
    return 0


def _load_cloud(path):
    from .meshio import load_cloud

    return load_cloud(path)


def _write_mesh(mesh, cfg, stem):
    from .meshio import save_mesh

    fmt = str(cfg["format"]).lower()
    if fmt not in ("obj", "ply"):
        raise UsageError("format must be obj or ply")
    path = Path(cfg["out"]) / f"{stem}.{fmt}"
    save_mesh(path, mesh)
    return path


def cmd_reconstruct(cfg):
    from .network import load_checkpoint
    from .reconstruct import reconstruct_shape

    _require(cfg, "checkpoint", "cloud")
    model, _, _ = load_checkpoint(cfg["checkpoint"])
    model.eval()
    cloud = _load_cloud(cfg["cloud"])
    if len(cloud) < model.cfg.n_d:
        raise ContractError(f"cloud has {len(cloud)} points, the model needs at least n_d={model.cfg.n_d}")
    dims = [cfg[key] for key in ("n_d", "n_s", "k")]
    expect = None
    if any(d is not None for d in dims):
        expect = tuple(int(d) if d is not None else getattr(model.cfg, key)
                       for d, key in zip(dims, ("n_d", "n_s", "k")))
    mesh, grid = reconstruct_shape(cloud, model, int(cfg["res"]), band=cfg["band"], fill=cfg["fill"],
                                   seed=int(cfg["seed"]), expect_dims=expect)
    return _finish_recon(mesh, grid, cfg)


def _finish_recon(mesh, grid, cfg):
    Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
    stem = Path(cfg["cloud"]).stem
    if mesh.n_triangles == 0:
        log.warning("indicator never crosses 0.5: empty mesh")
    path = _write_mesh(mesh, cfg, stem)
    if cfg["dump_grid"]:
        grid.save_raw(Path(cfg["out"]) / f"{stem}.grid")
    print(f"wrote {path} ({mesh.n_vertices} vertices, {mesh.n_triangles} triangles)")
    return 0


def cmd_gauss_recon(cfg):
    from .reconstruct import gauss_reconstruct

    _require(cfg, "cloud")
    cloud = _load_cloud(cfg["cloud"])
    if cloud.normals is None:
        raise UsageError("gauss-recon needs oriented normals in the input cloud: the discrete Gauss "
                         "integral sums normal-weighted kernel terms (the learned `reconstruct` path needs none)")
    mesh, grid = gauss_reconstruct(cloud, int(cfg["res"]), band=cfg["band"])
    return _finish_recon(mesh, grid, cfg)


def _mesh_files(folder):
    folder = Path(folder)
    if not folder.is_dir():
        raise UsageError(f"{folder} is not a directory")
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in (".obj", ".ply")}


def cmd_eval(cfg):
    from .meshio import load_mesh
    from .metrics import EvalReport, best_consistency_rate, mesh_chamfer, normal_consistency_error
    from .plotting import plot_eval

    _require(cfg, "recon", "gt")
    methods = cfg["recon"] if isinstance(cfg["recon"], dict) else {"ours": cfg["recon"]}
    gt = _mesh_files(cfg["gt"])
    recon = {m: _mesh_files(d) for m, d in methods.items()}
    orphans = sorted({f"{m}/{s}" for m, files in recon.items() for s in set(files) ^ set(gt)})
    if orphans:
        raise UsageError("unpaired files: " + ", ".join(orphans))
    if not gt:
        raise UsageError("no meshes to evaluate")
    n, seed = int(cfg["samples"]), int(cfg["eval_seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    gt_meshes = {s: load_mesh(p, watertight=True) for s, p in gt.items()}
    reports = {}
    for m, files in recon.items():
        rep = EvalReport(method=m, n_samples=n)
        for s in gt:
            mesh = load_mesh(files[s])
            if mesh.n_triangles == 0:
                log.warning("%s/%s is empty; scored as worst case", m, s)
            cd = mesh_chamfer(mesh, gt_meshes[s], n, seed)
            rep.add(s, cd, normal_consistency_error(mesh, gt_meshes[s], n, seed))
        reports[m] = rep
    if len(reports) > 1:
        bcr = best_consistency_rate({m: r.nce for m, r in reports.items()})
        for r in reports.values():
            r.bcr = bcr
    for m, r in reports.items():
        name = "eval.csv" if len(reports) == 1 else f"eval_{m}.csv"
        (out / name).write_text(r.to_csv())
        if cfg["plot"]:
            plot_eval(r, out / name.replace(".csv", ".png"))
        print(r.pretty())
    return 0


HANDLERS = {"prepare": cmd_prepare, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "gauss-recon": cmd_gauss_recon, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    counter = _Counter()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    root = logging.getLogger()
    root.addHandler(counter)
    code = 0
    try:
        cfg = resolve_config(args.command, args)
        _setup_threads(cfg)
        _echo_config(cfg, cfg["out"])
        log.info("resolved config: %s", cfg)
        code = HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except (MireconError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    finally:
        root.removeHandler(counter)
    print(f"{args.command}: {'ok' if code == 0 else 'failed'}, {counter.count} warning(s)")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
