"""``maskprune`` command line: refine, render, eval, sweep and scenes generate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from maskprune import report
from maskprune.camera import (
    DEFAULT_DISTANCE,
    DEFAULT_ELEVATION,
    DEFAULT_FOV_Y,
    CameraPose,
    turntable_poses,
)
from maskprune.mesh_core import load_obj, remove_faces, sample_surface, save_obj
from maskprune.metrics import (
    CD_SCALE,
    DEFAULT_FSCORE_THRESHOLD,
    DEFAULT_SAMPLES,
    chamfer_distance,
    evaluate_3d,
    f_score,
    iou_2d,
)
from maskprune.pipeline import refine_view
from maskprune.prune import MODES, RenderSettings, combine_decisions, render_face_maps
from maskprune.scenes import SCENE_KINDS, SceneSpec, render_gt_mask, write_scene
from maskprune.soft_raster import aggregate_mask, binarize, load_mask, save_mask

logger = logging.getLogger("maskprune")

TAU_GRID = (0.01, 0.03, 0.05, 0.1, 0.15)


class CliError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    tau: float = 0.05
    k: int = 30
    sigma: float = 5e-7
    size: tuple[int, int] = (224, 224)
    azimuth: float = 0.0
    elevation: float = DEFAULT_ELEVATION
    distance: float = DEFAULT_DISTANCE
    fov: float = DEFAULT_FOV_Y
    mode: str = "per-view"
    seed: int = 0
    workers: int = 1
    n_views: int = 24
    taus: tuple[float, ...] = TAU_GRID
    samples: int = DEFAULT_SAMPLES
    fscore_threshold: float = DEFAULT_FSCORE_THRESHOLD

    def validate(self) -> "RunConfig":
        if not 0.0 <= self.tau <= 1.0:
            raise CliError(f"tau must be in [0, 1], got {self.tau}")
        if any(not 0.0 <= t <= 1.0 for t in self.taus):
            raise CliError("every tau in --taus must be in [0, 1]")
        if self.k < 1:
            raise CliError("k must be >= 1")
        if not self.sigma > 0:
            raise CliError("sigma must be > 0")
        if self.mode not in MODES:
            raise CliError(f"mode must be one of {MODES}")
        if self.n_views < 1 or self.samples < 1 or self.workers < 1:
            raise CliError("n-views, samples and workers must be >= 1")
        return self

    @property
    def settings(self) -> RenderSettings:
        return RenderSettings(k=self.k, sigma=self.sigma, workers=self.workers)

    def pose(self, azimuth: float | None = None) -> CameraPose:
        return CameraPose(self.azimuth if azimuth is None else azimuth, self.elevation,
                          self.distance, self.size, self.fov)


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = [int(p) for p in parts if p]
    except ValueError:
        raise CliError(f"bad image size {text!r}") from None
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) == 2:
        return vals[0], vals[1]
    raise CliError(f"bad image size {text!r}")


def _parse_taus(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


_CONVERT = {
    "tau": float, "k": int, "sigma": float, "size": _parse_size, "azimuth": float,
    "elevation": float, "distance": float, "fov": float, "mode": str, "seed": int,
    "workers": int, "n_views": int, "taus": _parse_taus, "samples": int,
    "fscore_threshold": float,
}


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERT:
            raise CliError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERT[key](value)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}") from None
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, then the config file, then explicit flags."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key, conv in _CONVERT.items():
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = conv(val) if isinstance(val, str) and conv is not str else val
    return replace(RunConfig(), **merged).validate()


def _load_manifest(path: str, cfg: RunConfig) -> list[tuple[int, CameraPose, Path | None]]:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read views manifest {path}: {exc}") from None
    views = []
    for i, v in enumerate(data.get("views", [])):
        pose = CameraPose(
            float(v.get("azimuth", 0.0)),
            float(v.get("elevation", cfg.elevation)),
            float(v.get("distance", cfg.distance)),
            tuple(v.get("image_size", cfg.size)),
            float(v.get("fov_y", cfg.fov)),
        )
        mask = p.parent / v["mask"] if v.get("mask") else None
        views.append((int(v.get("index", i)), pose, mask))
    if not views:
        raise CliError(f"{path}: manifest lists no views")
    return sorted(views, key=lambda t: t[0])


def _views(args, cfg: RunConfig, turntable: bool = False):
    if getattr(args, "views", None):
        return _load_manifest(args.views, cfg)
    if turntable:
        return [(i, replace(p, image_size=cfg.size), None) for i, p in enumerate(
            turntable_poses(cfg.n_views, cfg.elevation, cfg.distance, cfg.size, cfg.fov))]
    return [(0, cfg.pose(), Path(args.mask) if getattr(args, "mask", None) else None)]


def _read_mask(path: Path, shape, luma: bool) -> np.ndarray:
    if not path.is_file():
        raise CliError(f"mask file not found: {path}")
    try:
        m = load_mask(path, luma=luma)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read mask {path}: {exc}") from None
    if m.shape != tuple(shape):
        raise CliError(f"mask {path} has shape {m.shape}, expected {tuple(shape)}")
    return m


def _read_mesh(path: str):
    if not Path(path).is_file():
        raise CliError(f"mesh file not found: {path}")
    try:
        return load_obj(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read mesh {path}: {exc}") from None


def _map_views(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_refine(args) -> int:
    cfg = resolve_config(args)
    mesh = _read_mesh(args.mesh)
    views = _views(args, cfg)
    gts = []
    for idx, pose, mask in views:
        if mask is None:
            raise CliError("refine needs a ground-truth mask (--mask or masks in --views)")
        gts.append(_read_mask(mask, pose.image_size, args.luma))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results = _map_views(
        lambda i: refine_view(mesh, views[i][1], gts[i], cfg.tau, cfg.settings),
        list(range(len(views))), cfg.workers)

    combined = None
    if cfg.mode != "per-view":
        combined = combine_decisions([r.decision for r in results], cfg.mode)

    decision_rows, summaries = [], []
    for (idx, pose, _), gt, res in zip(views, gts, results):
        pruned = res.decision.pruned if combined is None else combined & set(res.maps.faces.tolist())
        alpha_r = aggregate_mask(res.maps, pruned) if pruned else res.alpha_hat
        save_mask(res.alpha_hat, out / f"alpha_hat_{idx:03d}.png")
        save_mask(alpha_r, out / f"alpha_hat_r_{idx:03d}.png")
        report.plot_masks(gt, res.alpha_hat, alpha_r, out / f"compare_{idx:03d}.png",
                          title=f"azimuth {pose.azimuth:g}, tau {cfg.tau:g}")
        scores = res.table.scores
        for face, g, G, s in zip(res.table.faces.tolist(), res.table.gamma.tolist(),
                                 res.table.Gamma.tolist(), scores.tolist()):
            decision_rows.append({"view": idx, "face": face, "gamma": g, "Gamma": G,
                                  "score": s, "pruned": face in res.decision.pruned})
        summary = {"view": idx, **res.summary(mesh.n_faces),
                   "n_removed": len(pruned), "iou_after": iou_2d(alpha_r, gt)}
        summaries.append(summary)
        if cfg.mode == "per-view":
            name = "refined.obj" if len(views) == 1 else f"refined_{idx:03d}.obj"
            save_obj(res.refined, out / name)
        print(
            f"view {idx:3d} az={pose.azimuth:6.1f} |F|={mesh.n_faces} |U|={len(res.maps)} "
            f"|Fp|={len(res.decision.pruned)} t={res.decision.threshold:.6g} "
            f"iou {res.iou_before:.4f} -> {summary['iou_after']:.4f}"
        )
    if combined is not None:
        save_obj(remove_faces(mesh, sorted(combined)), out / "refined.obj")
        print(f"{cfg.mode}: removed {len(combined)} of {mesh.n_faces} faces")

    header = {"tau": cfg.tau, "k": cfg.k, "sigma": cfg.sigma, "mode": cfg.mode,
              "mesh": str(args.mesh), "image_size": list(cfg.size)}
    report.write_records(out / "decision.jsonl", "decision", decision_rows, **header)
    report.write_records(out / "summary.jsonl", "summary", summaries, **header)
    return 0


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    mesh = _read_mesh(args.mesh)
    views = _views(args, cfg, turntable=args.turntable)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, pose, _ in views:
        save_mask(aggregate_mask(render_face_maps(mesh, pose, cfg.settings)),
                  out / f"soft_{idx:03d}.png")
        entry = {"index": idx, "azimuth": pose.azimuth, "elevation": pose.elevation,
                 "distance": pose.distance, "image_size": list(pose.image_size),
                 "fov_y": pose.fov_y}
        if args.hard:
            name = f"mask_{idx:03d}.png"
            save_mask(render_gt_mask(mesh, pose), out / name)
            entry["mask"] = name
        entries.append(entry)
    (out / "manifest.json").write_text(json.dumps(
        {"version": 1, "mesh": str(args.mesh), "views": entries}, indent=2, sort_keys=True) + "\n")
    print(f"rendered {len(views)} view(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    pred = _read_mesh(args.pred)
    ref = _read_mesh(args.ref)
    views = _views(args, cfg, turntable=not args.views and args.n_views is not None)
    records = []
    for idx, pose, mask in views:
        alpha = aggregate_mask(render_face_maps(pred, pose, cfg.settings))
        if mask is not None:
            gt = _read_mask(mask, pose.image_size, args.luma)
        else:
            gt = binarize(aggregate_mask(render_face_maps(ref, pose, cfg.settings)))
        records.append({"kind": "2d", "view": idx, "azimuth": pose.azimuth,
                        "iou2d": iou_2d(alpha, gt)})
    m3 = evaluate_3d(pred, ref, cfg.samples, cfg.seed, cfg.fscore_threshold)
    records.append({"kind": "3d", **m3})
    mean_iou = float(np.mean([r["iou2d"] for r in records if r["kind"] == "2d"]))
    print(report.metric_table([(Path(args.pred).stem[:16], {"iou2d": mean_iou, **m3})]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_records(out / "eval.jsonl", "eval", records, pred=str(args.pred),
                             ref=str(args.ref), samples=cfg.samples, seed=cfg.seed,
                             fscore_threshold=cfg.fscore_threshold, cd_scale=CD_SCALE)
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    mesh = _read_mesh(args.mesh)
    gt_mesh = _read_mesh(args.gt_mesh) if args.gt_mesh else None
    ref = _read_mesh(args.ref) if args.ref else gt_mesh
    views = _views(args, cfg, turntable=True)
    if gt_mesh is None and any(m is None for _, _, m in views):
        raise CliError("sweep needs --gt-mesh or a --views manifest with masks")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ref_pts = sample_surface(ref, cfg.samples, cfg.seed) if (ref is not None and not args.no_3d) else None
    base_pts = sample_surface(mesh, cfg.samples, cfg.seed) if ref_pts is not None else None
    base_cd = chamfer_distance(base_pts, ref_pts) * CD_SCALE if ref_pts is not None else None

    def one_view(item):
        idx, pose, mask = item
        gt = render_gt_mask(gt_mesh, pose) if mask is None else _read_mask(mask, pose.image_size, args.luma)
        maps = render_face_maps(mesh, pose, cfg.settings)
        rows = []
        for tau in cfg.taus:
            res = refine_view(mesh, pose, gt, tau, cfg.settings, maps=maps)
            row = {"view": idx, **res.summary(mesh.n_faces)}
            if ref_pts is not None:
                row["chamfer_before"] = base_cd
                if res.refined.n_faces and res.refined.face_areas().sum() > 0:
                    pts = sample_surface(res.refined, cfg.samples, cfg.seed)
                    row["chamfer_after"] = chamfer_distance(pts, ref_pts) * CD_SCALE
                    row["fscore_after"] = f_score(pts, ref_pts, cfg.fscore_threshold)
                else:
                    row["chamfer_after"] = row["fscore_after"] = None
            rows.append(row)
        return rows

    records = [r for rows in _map_views(one_view, views, cfg.workers) for r in rows]
    records.sort(key=lambda r: (r["tau"], r["view"]))
    header = {"taus": list(cfg.taus), "k": cfg.k, "sigma": cfg.sigma, "mesh": str(args.mesh),
              "n_views": len(views), "samples": cfg.samples, "seed": cfg.seed}
    report.write_records(out / "sweep.jsonl", "sweep", records, **header)
    columns = ["tau", "view", "azimuth", "elevation", "n_faces", "n_rendered", "n_pruned",
               "threshold", "iou_before", "iou_after", "chamfer_before", "chamfer_after",
               "fscore_after"]
    report.write_csv(out / "sweep.csv", records, columns)
    if not args.no_plots:
        report.plot_viewpoint_sweep(records, out)
        report.plot_tau_trend(records, out)
    for tau in cfg.taus:
        rows = [r for r in records if r["tau"] == tau]
        print(f"tau={tau:<5g} mean |Fp|={np.mean([r['n_pruned'] for r in rows]):8.1f} "
              f"mean iou {np.mean([r['iou_before'] for r in rows]):.4f} -> "
              f"{np.mean([r['iou_after'] for r in rows]):.4f}")
    return 0


def _parse_param(text: str):
    if "=" not in text:
        raise CliError(f"--param expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def cmd_scenes_generate(args) -> int:
    cfg = resolve_config(args)
    params = dict(_parse_param(p) for p in args.param or [])
    poses = tuple(turntable_poses(cfg.n_views, cfg.elevation, cfg.distance, cfg.size, cfg.fov))
    try:
        spec = SceneSpec(args.kind, params, poses)
        path = write_scene(spec, args.out)
    except TypeError as exc:
        raise CliError(f"bad scene parameters: {exc}") from None
    print(f"wrote {path}")
    return 0


def _add_common(p: argparse.ArgumentParser, views: bool = True) -> None:
    p.add_argument("--config", help="key=value config file (flags override it)")
    p.add_argument("--tau", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--size", help="image size, e.g. 224 or 224x224")
    p.add_argument("--azimuth", type=float)
    p.add_argument("--elevation", type=float)
    p.add_argument("--distance", type=float)
    p.add_argument("--fov", type=float, help="vertical field of view in degrees")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="threads used across views")
    if views:
        p.add_argument("--views", help="JSON manifest listing poses (and masks)")
    p.add_argument("--luma", action="store_true", help="accept color masks via luminance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="prune a mesh against ground-truth masks")
    _add_common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--mask")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("render", help="render soft (and hard) silhouettes")
    _add_common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--turntable", action="store_true", help="render --n-views turntable poses")
    p.add_argument("--n-views", dest="n_views", type=int)
    p.add_argument("--hard", action="store_true", help="also write hard coverage masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="2D IoU, Chamfer, F-score and METRO")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--n-views", dest="n_views", type=int,
                   help="evaluate on a turntable instead of a single pose")
    p.add_argument("--samples", type=int)
    p.add_argument("--fscore-threshold", dest="fscore_threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="prune over a tau grid and a turntable")
    _add_common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--gt-mesh", dest="gt_mesh", help="mesh whose hard silhouettes are the ground truth")
    p.add_argument("--ref", help="reference mesh for 3D metrics (default: --gt-mesh)")
    p.add_argument("--taus", help="comma-separated tau values")
    p.add_argument("--n-views", dest="n_views", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--fscore-threshold", dest="fscore_threshold", type=float)
    p.add_argument("--no-3d", dest="no_3d", action="store_true")
    p.add_argument("--no-plots", dest="no_plots", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scenes", help="synthetic scenes")
    scenes_sub = p.add_subparsers(dest="scenes_command", required=True)
    g = scenes_sub.add_parser("generate", help="write mesh, masks and manifest")
    _add_common(g, views=False)
    g.add_argument("--kind", required=True, choices=SCENE_KINDS)
    g.add_argument("--param", action="append", help="generator parameter key=value")
    g.add_argument("--n-views", dest="n_views", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_scenes_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if getattr(args, "out", None) else None
    marker = out / "INCOMPLETE" if out is not None else None
    if marker is not None and marker.exists():
        marker.unlink()
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        if isinstance(exc, CliError):
            print(f"maskprune: error: {exc}", file=sys.stderr)
        else:
            print(f"maskprune: error: {exc}", file=sys.stderr)
            if args.verbose:
                traceback.print_exc()
        if marker is not None and out.is_dir():
            marker.write_text(f"{type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
