"""Command-line interface.

    camtraj estimate ref_00.pmap ref_01.pmap ... --self self_00.pmap ... --out est.txt
    camtraj eval est.txt gt.txt --pairs all --csv report.csv --plot acc.png
    camtraj loss --pred p0.pmap p1.pmap --gt g0.pmap g1.pmap --alpha 0.2
    camtraj synth --out-dir case/ --seed 3 --sigma 0.01
    camtraj consistency --features case/features.npy --traj est.txt case/self_*.pmap
    camtraj compare a.txt b.txt

Exit codes: 0 success, 2 input error, 3 degenerate geometry, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .errors import CamTrajError, DegenerateGeometryError, InputError
from .geometry import ConfidenceMap, Convention, Intrinsics, Trajectory
from .losses import RecLossConfig, gen_loss, rec_loss, total_loss
from .metrics import Mode, metric_report, pairwise_errors, warp_consistency
from .pipeline import estimate_trajectory
from .pose_recovery import Method, RansacConfig
from .registration import OptimizerConfig, compare_trajectories

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_INTERNAL = 0, 2, 3, 4


def _read_maps(paths, role):
    maps, confs = [], []
    for p in paths:
        pm, conf = cio.read_pointmap(p)
        maps.append(pm)
        confs.append(conf)
    if maps and any(m.shape != maps[0].shape for m in maps):
        raise InputError(f"{role} point maps do not share dimensions")
    return maps, confs


def cmd_estimate(args) -> int:
    if len(args.ref) < 2:
        raise InputError("estimate needs at least two point-map files")
    ref, confs = _read_maps(args.ref, "reference")
    for f, pm in enumerate(ref):
        if pm.frame != 0:
            raise InputError(f"{args.ref[f]}: reference maps must be expressed in frame 0, got frame {pm.frame}")
    self_maps = None
    if args.self_maps:
        if len(args.self_maps) != len(ref):
            raise InputError("--self needs one file per reference map")
        self_maps, _ = _read_maps(args.self_maps, "self")
        if self_maps[0].shape != ref[0].shape:
            raise InputError("self and reference maps do not share dimensions")
        for f, pm in enumerate(self_maps):
            if pm.frame != f:
                raise InputError(f"{args.self_maps[f]}: expected a frame-{f} map, got frame {pm.frame}")
    if all(c is None for c in confs):
        confs = None
    else:
        confs = [c if c is not None else ConfidenceMap.ones(*ref[0].shape) for c in confs]

    traj, result = estimate_trajectory(
        ref,
        self_maps,
        confs,
        method=Method(args.method),
        weights=(args.w_fl, args.w_tranl),
        focal=args.focal,
        optimizer=OptimizerConfig(max_iters=args.max_iters, verbose=args.verbose),
        ransac=RansacConfig(seed=args.seed),
    )
    cio.write_trajectory(args.out, traj)
    if args.verbose:
        print(f"objective {result.initial_objective:.9g} -> {result.objective:.9g} "
              f"({result.iterations} iterations, converged={result.converged})")
        for f, fl in enumerate(traj.focals):
            print(f"frame {f} focal {fl:.6f}")
    if args.plot:
        from .plotting import plot_trajectories

        plot_trajectories({"estimate": traj}, args.plot)
    return EXIT_OK


def _read_camera_file(path, size, world_from_camera: bool):
    if size is None:
        raise InputError("--size W H is required for camera-file ground truth")
    conv = Convention.WORLD_FROM_CAMERA if world_from_camera else Convention.CAMERA_FROM_WORLD
    recs = cio.parse_camera_file(Path(path).read_text(), size[0], size[1], conv)
    return Trajectory(tuple(r.pose for r in recs), [r.intrinsics.focal for r in recs], [r.timestamp for r in recs])


def cmd_eval(args) -> int:
    est = cio.read_trajectory(args.est)
    if args.gt_format == "camera":
        gt = _read_camera_file(args.gt, args.size, args.world_from_camera)
    else:
        gt = cio.read_trajectory(args.gt)
    samples = pairwise_errors(est, gt, Mode(args.pairs))
    report = metric_report(samples, args.threshold)
    sys.stdout.write(report.to_text())
    if args.csv:
        if args.csv == "-":
            sys.stdout.write(report.to_csv())
        else:
            Path(args.csv).write_text(report.to_csv())
    if args.plot:
        from .plotting import plot_accuracy

        plot_accuracy(samples, args.plot)
    if args.plot_traj:
        from .plotting import plot_trajectories

        plot_trajectories({"estimate": est, "ground truth": gt}, args.plot_traj)
    return EXIT_OK


def cmd_loss(args) -> int:
    pred, confs = _read_maps(args.pred, "predicted")
    gt, _ = _read_maps(args.gt, "ground-truth")
    confs = [c if c is not None else ConfidenceMap.ones(*p.shape) for c, p in zip(confs, pred)]
    cfg = RecLossConfig(alpha=args.alpha, lam=args.lam, reduction=args.reduction, scale_mode=args.scale_mode)
    br = rec_loss(list(zip(pred, confs)), gt, cfg)
    print(f"rec {br.total:.9g}")
    print(f"data {br.data_term:.9g}")
    print(f"confidence {br.confidence_term:.9g}")
    if br.skipped_frames:
        print("skipped " + " ".join(str(k) for k in br.skipped_frames))
    if args.eps is not None or args.eps_pred is not None:
        if args.eps is None or args.eps_pred is None:
            raise InputError("--eps and --eps-pred must be given together")
        g = gen_loss(np.load(args.eps), np.load(args.eps_pred))
        print(f"gen {g:.9g}")
        print(f"total {total_loss(g, br.total, cfg):.9g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import Motion, NoiseSpec, SceneSpec, SceneType, TrajectorySpec, corrupt, generate

    scene = SceneSpec(kind=SceneType(args.scene), seed=args.seed)
    tspec = TrajectorySpec(frames=args.frames, motion=Motion(args.motion), focal=args.focal,
                           width=args.width, height=args.height)
    case = generate(scene, tspec)
    ref, own = case.ref_maps, case.self_maps
    ref_conf = self_conf = [None] * len(ref)
    if args.sigma > 0 or args.outliers > 0:
        r = corrupt(ref, NoiseSpec(args.sigma, args.outliers, seed=args.seed))
        s = corrupt(own, NoiseSpec(args.sigma, args.outliers, seed=args.seed + 10_000))
        ref, own, ref_conf, self_conf = r.pointmaps, s.pointmaps, r.confidences, s.confidences
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in range(len(ref)):
        cio.write_pointmap(out / f"ref_{f:02d}.pmap", ref[f], ref_conf[f])
        cio.write_pointmap(out / f"self_{f:02d}.pmap", own[f], self_conf[f])
    cio.write_trajectory(out / "gt.txt", case.trajectory)
    np.save(out / "features.npy", np.stack(case.features))
    print(f"wrote {len(ref)} frames to {out}")
    return EXIT_OK


def cmd_consistency(args) -> int:
    maps, _ = _read_maps(args.pointmaps, "input")
    feats = np.load(args.features)
    if feats.ndim != 4 or len(feats) != len(maps):
        raise InputError("features must be an (F, H, W, D) array with one grid per point map")
    traj = cio.read_trajectory(args.traj) if args.traj else None
    if traj is not None and len(traj) != len(maps):
        raise InputError("trajectory length does not match the number of point maps")
    H, W = maps[0].shape
    focal = args.focal or (traj.focals[0] if traj is not None else None)
    if focal is None:
        raise InputError("a focal is needed: pass --focal or --traj")
    K = Intrinsics.from_focal(float(focal), W, H)
    res = warp_consistency(list(feats), maps, traj, K, resample=args.resample)
    print(f"score {res.mean:.6f}")
    print(f"error {res.error:.6f}")
    for f, s in enumerate(res.per_frame):
        print(f"frame {f} {s:.6f} visible {res.visible[f]}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a = cio.read_trajectory(args.a)
    b = cio.read_trajectory(args.b)
    d = compare_trajectories(a, b)
    print(f"{d.rotation_deg:.2f} {d.translation_deg:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="camtraj", description="Camera trajectories from point maps.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate a trajectory from first-frame point maps")
    e.add_argument("ref", nargs="+", help="point maps of every frame in frame-0 coordinates")
    e.add_argument("--self", dest="self_maps", nargs="+", help="point maps of every frame in its own camera")
    e.add_argument("--out", required=True, help="trajectory text output")
    e.add_argument("--method", choices=[m.value for m in Method], default=Method.PROCRUSTES.value)
    e.add_argument("--w-fl", type=float, default=1.0, help="focal smoothness weight")
    e.add_argument("--w-tranl", type=float, default=1.0, help="translation smoothness weight")
    e.add_argument("--focal", type=float, default=None, help="known focal in pixels")
    e.add_argument("--max-iters", type=int, default=OptimizerConfig().max_iters)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--plot", help="write a top-down trajectory figure (PNG)")
    e.add_argument("--verbose", action="store_true")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="score an estimated trajectory against ground truth")
    v.add_argument("est")
    v.add_argument("gt")
    v.add_argument("--gt-format", choices=["traj", "camera"], default="traj",
                   help="ground truth as trajectory text or a RealEstate10K-style camera file")
    v.add_argument("--size", type=int, nargs=2, metavar=("W", "H"), help="image size for camera files")
    v.add_argument("--world-from-camera", action="store_true",
                   help="camera-file extrinsics are world-from-camera rather than camera-from-world")
    v.add_argument("--pairs", choices=[m.value for m in Mode], default=Mode.ALL_PAIRS.value)
    v.add_argument("--threshold", type=float, default=5.0)
    v.add_argument("--csv", help="write the report as CSV ('-' for stdout)")
    v.add_argument("--plot", help="write RRA/RTA accuracy curves (PNG)")
    v.add_argument("--plot-traj", help="write a top-down comparison of both trajectories (PNG)")
    v.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    v.add_argument("--verbose", action="store_true")
    v.set_defaults(func=cmd_eval)

    l = sub.add_parser("loss", help="reconstruction (and optional generation) loss")
    l.add_argument("--pred", nargs="+", required=True, help="predicted point maps (confidence read from file)")
    l.add_argument("--gt", nargs="+", required=True, help="ground-truth point maps")
    l.add_argument("--alpha", type=float, default=0.2)
    l.add_argument("--lam", type=float, default=1.0)
    l.add_argument("--reduction", choices=["sum", "mean"], default="sum")
    l.add_argument("--scale-mode", choices=["frame", "pooled"], default="frame")
    l.add_argument("--eps", help="true noise (.npy)")
    l.add_argument("--eps-pred", help="predicted noise (.npy)")
    l.add_argument("--verbose", action="store_true")
    l.set_defaults(func=cmd_loss)

    s = sub.add_parser("synth", help="write a synthetic fixture")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--focal", type=float, default=56.0)
    s.add_argument("--scene", choices=["room", "pointcloud"], default="room")
    s.add_argument("--motion", choices=["linear", "arc", "spline"], default="linear")
    s.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise, fraction of scene scale")
    s.add_argument("--outliers", type=float, default=0.0, help="outlier fraction")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("consistency", help="warped-feature consistency into the first view")
    c.add_argument("pointmaps", nargs="+")
    c.add_argument("--features", required=True, help="(F, H, W, D) feature array (.npy)")
    c.add_argument("--traj", help="trajectory for point maps outside frame 0")
    c.add_argument("--focal", type=float, default=None)
    c.add_argument("--resample", choices=["bilinear", "nearest"], default="bilinear")
    c.add_argument("--verbose", action="store_true")
    c.set_defaults(func=cmd_consistency)

    m = sub.add_parser("compare", help="mean rotation / translation-direction difference of two trajectories")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--verbose", action="store_true")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DegenerateGeometryError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CamTrajError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
