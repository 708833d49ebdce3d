"""Command-line entry point.

Exit codes: 0 on success, 1 on usage errors (synopsis on stderr), 2 on
runtime errors. Every subcommand writes ``<command>.config.txt`` with the
fully resolved configuration next to its main output; passing that file
back with ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from nerfpc.config import RunConfig
from nerfpc.errors import ConfigError, Exhausted, IoError, NerfpcError

SUBCOMMANDS = ("make-fixture", "detect-focus-areas", "render-edges", "train-toy", "extract", "eval", "bench-sdd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file (e.g. an earlier run's echo)")
    p.add_argument("--seed", type=int, help="random seed (config key: seed)")
    p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nerfpc", description="Point-cloud extraction from radiance fields.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("make-fixture", help="generate a synthetic scene with poses and images")
    p.add_argument("--kind", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cameras", type=int)
    p.add_argument("--resolution", type=int)
    _common(p)

    p = sub.add_parser("detect-focus-areas", help="find focus areas from camera poses")
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True, help="areas.json")
    p.add_argument("--max-areas", type=int)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--alpha", type=float, help="frustum half-angle in degrees")
    p.add_argument("--min-cluster-size", type=int)
    _common(p)

    p = sub.add_parser("render-edges", help="Canny edge map of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="edges.pgm")
    p.add_argument("--sigma", type=float)
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)
    _common(p)

    p = sub.add_parser("train-toy", help="train the toy hash-grid field")
    p.add_argument("--poses", required=True)
    p.add_argument("--images", help="image directory (default: paths relative to the poses file)")
    p.add_argument("--areas", help="areas.json from detect-focus-areas")
    p.add_argument("--iters", type=int)
    p.add_argument("--lambda-col", type=float)
    p.add_argument("--triplets", type=int)
    p.add_argument("--samples-per-ray", type=int)
    p.add_argument("--near", type=float)
    p.add_argument("--far", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True, help="field.bin")
    _common(p)

    p = sub.add_parser("extract", help="extract a colored point cloud")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--field", help="field.bin from train-toy")
    src.add_argument("--analytic", help="fixture kind, fixture directory or field.json")
    p.add_argument("--poses")
    p.add_argument("--points", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--eps3", type=float)
    p.add_argument("--no-sdd", action="store_true", help="disable the surrounding-depth check")
    p.add_argument("--color-mode", choices=("standard", "csd"))
    p.add_argument("--eps4", type=float)
    p.add_argument("--samples-per-ray", type=int)
    p.add_argument("--near", type=float)
    p.add_argument("--far", type=float)
    p.add_argument("--bounds", help="x0,y0,z0,x1,y1,z1")
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--out", required=True, help="cloud.ply")
    p.add_argument("--stats", help="stats.json")
    _common(p)

    p = sub.add_parser("eval", help="compare a test cloud against a reference cloud")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fscore-threshold", type=float, required=True, help="meters")
    p.add_argument("--out", help="report.json (default: stdout only)")
    _common(p)

    p = sub.add_parser("bench-sdd", help="query counts of two-step vs naive depth-check extraction")
    p.add_argument("--fixture", default="two_planes")
    p.add_argument("--points", type=int)
    p.add_argument("--out", required=True, help="bench.json")
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve(args, overrides: dict) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.set("seed", args.seed)
    for key, value in overrides.items():
        if value is not None:
            cfg.set(key, value)
    return cfg


def _echo(cfg: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(out_dir / f"{command}.config.txt")


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _parse_bounds(text: str):
    if not text:
        return None
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bounds {text!r}: {exc}") from exc
    if len(vals) != 6:
        raise ConfigError("bounds need six comma-separated numbers")
    return tuple(vals[:3]), tuple(vals[3:])


def _load_images(poses, poses_path: Path, image_dir):
    from nerfpc.assets_io import read_image

    images = []
    for pose in poses:
        if image_dir:
            path = Path(image_dir) / Path(pose.id).name
        else:
            path = poses_path.parent / pose.id
        images.append(read_image(path))
    return images


def _analytic_source(spec: str):
    """(field, poses or None, render metadata or None) from a kind name, fixture dir or field.json."""
    from nerfpc.assets_io import load_poses
    from nerfpc.field.analytic import AnalyticField
    from nerfpc.fixtures import KINDS, FixtureSpec, build_fixture

    path = Path(spec)
    if path.is_dir():
        field_path = path / "field.json"
        meta_path = path / "metadata.json"
        poses = load_poses(path / "transforms.json") if (path / "transforms.json").exists() else None
        meta = json.loads(meta_path.read_text())["render"] if meta_path.exists() else None
    elif path.is_file():
        field_path, poses, meta = path, None, None
    elif spec in KINDS:
        fx = build_fixture(FixtureSpec(spec), with_images=False)
        return fx.field, fx.poses, fx.metadata["render"]
    else:
        raise ConfigError(f"--analytic {spec!r} is neither a fixture kind nor an existing path")
    try:
        payload = json.loads(field_path.read_text())
    except (OSError, ValueError) as exc:
        raise IoError(f"{field_path}: {exc}") from exc
    return AnalyticField.from_dict(payload), poses, meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_fixture(args) -> int:
    from nerfpc.fixtures import FixtureSpec, build_fixture, write_fixture

    cfg = _resolve(args, {"fixture.cameras": args.cameras, "fixture.resolution": args.resolution})
    params = {}
    if cfg["fixture.cameras"]:
        params["cameras"] = cfg["fixture.cameras"]
    if cfg["fixture.resolution"]:
        params["resolution"] = cfg["fixture.resolution"]
    fixture = build_fixture(FixtureSpec(args.kind, params, cfg["seed"]))
    out = Path(args.out)
    write_fixture(fixture, out)
    _echo(cfg, out, "make-fixture")
    print(f"wrote {len(fixture.poses)} poses and images to {out}")
    return 0


def cmd_detect_focus_areas(args) -> int:
    from nerfpc.assets_io import load_poses, write_focus_areas
    from nerfpc.focus import LrfConfig, TSearch, default_t_search, detect_focus_areas

    cfg = _resolve(
        args,
        {
            "lrf.max_areas": args.max_areas,
            "lrf.neighbors": args.neighbors,
            "lrf.alpha_deg": args.alpha,
            "lrf.min_cluster_size": args.min_cluster_size,
        },
    )
    poses = load_poses(args.poses)
    base = default_t_search(poses)
    lrf = LrfConfig(
        max_areas=cfg["lrf.max_areas"],
        neighbors=cfg["lrf.neighbors"],
        alpha_deg=cfg["lrf.alpha_deg"],
        min_cluster_size=cfg["lrf.min_cluster_size"],
        single_cluster=cfg["lrf.single_cluster"],
        t_search=TSearch(base.t_min, base.t_max, cfg["lrf.t_steps"]),
        scene_box_scale=cfg["lrf.scene_box_scale"],
    )
    areas = detect_focus_areas(poses, lrf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_focus_areas(areas, out)
    _echo(cfg, out.parent, "detect-focus-areas")
    for a in areas:
        flag = " (low confidence)" if a.low_confidence else ""
        print(f"area center={np.round(a.center, 4).tolist()} radius={a.radius:.4f} cameras={len(a.member_camera_ids)}{flag}")
    return 0


def cmd_render_edges(args) -> int:
    from nerfpc.assets_io import read_image, write_pgm
    from nerfpc.collinearity.edges import detect_edges

    cfg = _resolve(args, {"ism.edge_sigma": args.sigma, "ism.edge_low": args.low, "ism.edge_high": args.high})
    edges = detect_edges(read_image(args.image), cfg["ism.edge_sigma"], cfg["ism.edge_low"], cfg["ism.edge_high"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, edges.mask.astype(np.uint8) * 255)
    _echo(cfg, out.parent, "render-edges")
    print(f"{int(edges.mask.sum())} edge pixels")
    return 0


def cmd_train_toy(args) -> int:
    import torch

    from nerfpc.assets_io import load_poses, read_focus_areas
    from nerfpc.collinearity.loss import CollinearityParams
    from nerfpc.field.toy import ToyFieldConfig, build_toy_field
    from nerfpc.field.training import TrainConfig, train_toy

    cfg = _resolve(
        args,
        {
            "train.iterations": args.iters,
            "ism.lambda_col": args.lambda_col,
            "train.triplets": args.triplets,
            "train.samples": args.samples_per_ray,
            "train.near": args.near,
            "train.far": args.far,
            "train.lr": args.lr,
        },
    )
    torch.manual_seed(cfg["seed"])
    poses_path = Path(args.poses)
    poses = load_poses(poses_path)
    images = _load_images(poses, poses_path, args.images)
    areas = read_focus_areas(args.areas) if args.areas else []
    field = build_toy_field(
        poses, areas, ToyFieldConfig(max_areas=cfg["lrf.max_areas"], seed=cfg["seed"]), cfg["lrf.scene_box_scale"]
    )
    tc = TrainConfig(
        iterations=cfg["train.iterations"],
        triplets=cfg["train.triplets"],
        lr=cfg["train.lr"],
        lambda_col=cfg["ism.lambda_col"],
        near=cfg["train.near"],
        far=cfg["train.far"],
        samples=cfg["train.samples"],
        resample=cfg["train.resample"],
        seed=cfg["seed"],
        collinearity=CollinearityParams(cfg["ism.tau"], cfg["ism.gamma"], cfg["ism.eps2"], cfg["ism.max_segment"]),
        edge_sigma=cfg["ism.edge_sigma"],
        edge_low=cfg["ism.edge_low"],
        edge_high=cfg["ism.edge_high"],
    )
    field, history = train_toy(field, poses, images, areas, tc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    field.save(out)
    _echo(cfg, out.parent, "train-toy")
    if history.total:
        print(f"iterations={len(history.total)} final_loss={history.total[-1]:.6g} photometric={history.photometric[-1]:.6g}")
    return 0


def _extraction_config(cfg: RunConfig):
    from nerfpc.extraction import ExtractionConfig
    from nerfpc.volume_render import RenderConfig

    patch = cfg["sdd.patch"]
    return ExtractionConfig(
        target_points=cfg["extract.points"],
        patch_w=patch,
        patch_h=patch,
        eps3=cfg["sdd.eps3"],
        sdd=cfg["sdd.enabled"],
        bounds=_parse_bounds(cfg["extract.bounds"]),
        seed=cfg["seed"],
        color_mode=cfg["csd.color_mode"],
        max_attempts=cfg["extract.max_attempts"],
        render=RenderConfig(
            near=cfg["render.near"],
            far=cfg["render.far"],
            samples=cfg["render.samples"],
            resample=cfg["render.resample"],
            eps4=cfg["csd.eps4"],
        ),
        batch_size=cfg["sdd.batch_size"],
    )


def cmd_extract(args) -> int:
    from nerfpc.assets_io import load_poses, write_ply
    from nerfpc.extraction import extract_point_cloud

    cfg = _resolve(
        args,
        {
            "extract.points": args.points,
            "sdd.patch": args.patch,
            "sdd.eps3": args.eps3,
            "sdd.enabled": False if args.no_sdd else None,
            "csd.color_mode": args.color_mode,
            "csd.eps4": args.eps4,
            "render.samples": args.samples_per_ray,
            "render.near": args.near,
            "render.far": args.far,
            "extract.bounds": args.bounds,
            "extract.max_attempts": args.max_attempts,
        },
    )
    poses = load_poses(args.poses) if args.poses else None
    if args.field:
        from nerfpc.field.toy import ToyHashField

        field = ToyHashField.load(args.field)
    else:
        field, fixture_poses, meta = _analytic_source(args.analytic)
        poses = poses or fixture_poses
        if meta:
            for key in ("near", "far"):
                if not cfg.is_set(f"render.{key}"):
                    cfg.set(f"render.{key}", meta[key])
    if not poses:
        raise ConfigError("--poses is required unless the analytic source provides poses")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out.parent, "extract")
    status = 0
    try:
        cloud, stats = extract_point_cloud(field, poses, _extraction_config(cfg))
    except Exhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        cloud, stats, status = exc.cloud, exc.stats, 2
    write_ply(cloud, out)
    if args.stats:
        _write_json(args.stats, stats.to_dict())
    print(f"{len(cloud)} points from {stats.attempted} attempts; rejected {stats.rejected_by}")
    return status


def cmd_eval(args) -> int:
    from nerfpc.assets_io import read_ply
    from nerfpc.metrics import evaluate

    cfg = _resolve(args, {})
    ref, test = read_ply(args.ref), read_ply(args.test)
    m = evaluate(ref, test, args.fscore_threshold)
    report = {
        "chamfer": m.chamfer,
        "hausdorff": m.hausdorff,
        "fscore": m.fscore,
        "fscore_threshold": m.threshold,
        "ref_points": len(ref),
        "test_points": len(test),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _write_json(args.out, report)
        _echo(cfg, Path(args.out).parent, "eval")
    print(text)
    return 0


def cmd_bench_sdd(args) -> int:
    from nerfpc.extraction import extract_naive, extract_point_cloud
    from nerfpc.fixtures import FixtureSpec, build_fixture

    cfg = _resolve(args, {"bench.points": args.points})
    fixture = build_fixture(FixtureSpec(args.fixture, {}, cfg["seed"]), with_images=False)
    for key in ("near", "far"):
        if not cfg.is_set(f"render.{key}"):
            cfg.set(f"render.{key}", fixture.metadata["render"][key])
    cfg.set("extract.points", cfg["bench.points"])
    ecfg = _extraction_config(cfg)
    t0 = time.perf_counter()
    cloud_two, stats_two = extract_point_cloud(fixture.field, fixture.poses, ecfg)
    t1 = time.perf_counter()
    cloud_naive, stats_naive = extract_naive(fixture.field, fixture.poses, ecfg)
    t2 = time.perf_counter()
    identical = bool(
        np.array_equal(cloud_two.positions, cloud_naive.positions) and np.array_equal(cloud_two.colors, cloud_naive.colors)
    )
    ratio = stats_naive.point_queries / max(stats_two.point_queries, 1)
    center_miss = stats_two.rejected_by["infinite_depth"] / max(stats_two.attempted, 1)
    bench = {
        "fixture": args.fixture,
        "points": cfg["bench.points"],
        "two_step": stats_two.to_dict(),
        "naive": stats_naive.to_dict(),
        "query_ratio": ratio,
        "center_miss_fraction": center_miss,
        "identical_clouds": identical,
    }
    timing = {"two_step_seconds": t1 - t0, "naive_seconds": t2 - t1, "wall_ratio": (t2 - t1) / max(t1 - t0, 1e-12)}
    out = Path(args.out)
    _write_json(out, bench)
    # wall times vary run to run, so they live apart from the reproducible counts
    _write_json(out.with_name(out.stem + "_timing.json"), timing)
    _echo(cfg, out.parent, "bench-sdd")
    print(json.dumps({**bench, **timing}, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "make-fixture": cmd_make_fixture,
    "detect-focus-areas": cmd_detect_focus_areas,
    "render-edges": cmd_render_edges,
    "train-toy": cmd_train_toy,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "bench-sdd": cmd_bench_sdd,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not args.command:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print("nerfpc: error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        import torch

        torch.set_num_threads(args.threads or os.cpu_count() or 1)
    except ImportError:
        pass
    try:
        return _COMMANDS[args.command](args)
    except NerfpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
