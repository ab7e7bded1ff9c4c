"""Command-line entry point: simulate, optimize, verify.

Exit codes: 0 success, 1 verification/runtime failure, 2 usage or
configuration error. All CSV files carry a header row; column meanings are
documented in docs/formats.md. Output files are written atomically
(temp file + rename).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from .geometry import SystemState, min_pair_distance
from .scene import ConfigError, build_backend, build_bodies, build_task, load_scene_config
from .stepper import StepError, StepProblem, step
from .trajopt import OptimConfig, optimize, optimize_receding, rollout


def _atomic_write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _frame_header(bodies):
    cols = ["frame"]
    for b in bodies:
        cols += [f"{b.name}_{c}" for c in ("tx", "ty", "tz", "qw", "qx", "qy", "qz")]
    cols += ["min_pair_distance", "potential", "eval_seconds", "exact_terms", "centered_terms"]
    return cols


def _frame_row(i, bodies, poses, backend):
    from .bsh import InteractionCounts

    row = [i]
    for b, p in zip(bodies, poses):
        q = p.quaternion()
        row += [f"{v:.17g}" for v in (*p.translation, *q)]
    state = SystemState(bodies, poses)
    counts = InteractionCounts()
    t0 = time.perf_counter()
    ev = backend.evaluate(state, order=0, counts=counts)
    dt = time.perf_counter() - t0
    row += [
        f"{min_pair_distance(state):.17g}",
        f"{ev.value:.17g}",
        f"{dt:.6g}",
        counts.exact_terms,
        counts.centered_terms,
    ]
    return row


def cmd_simulate(args) -> int:
    cfg = load_scene_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    bodies, poses, prev = build_bodies(cfg)
    backend = build_backend(cfg, bodies, args.backend, threads=args.threads)
    from .scene import friction_params

    fric = friction_params(cfg)
    rows = [_frame_row(0, bodies, poses, backend)]
    for frame in range(cfg.horizon):
        prob = StepProblem(
            bodies, poses, prev, cfg.dt, cfg.mu, np.asarray(cfg.gravity), backend,
            friction=fric, relaxed=getattr(backend, "nonsmooth", False),
        )
        try:
            res = step(prob)
        except StepError as exc:
            print(f"simulate: step failed at frame {frame}: {exc}", file=sys.stderr)
            return 1
        prev, poses = poses, res.poses_next
        rows.append(_frame_row(frame + 1, bodies, poses, backend))
    _atomic_write_csv(args.out, _frame_header(bodies), rows)
    print(f"wrote {cfg.horizon + 1} frames to {args.out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = load_scene_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    bodies, poses, prev = build_bodies(cfg)
    backend = build_backend(cfg, bodies, args.backend, threads=args.threads)
    task = build_task(cfg, bodies, poses, prev)
    ocfg = OptimConfig(
        alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2, iters=cfg.iters,
        seed=cfg.seed, stop_loss_ratio=cfg.stop_loss_ratio,
    )
    out_dir = Path(args.out)
    if task.receding is not None:
        applied, losses, _ = optimize_receding(task, ocfg, backend)
        rows = [
            (i, f"{losses[i]:.17g}", "", "") for i in range(len(losses))
        ]
        _atomic_write_csv(out_dir / "convergence.csv", ["iter", "loss", "grad_norm", "wall_seconds"], rows)
        print(f"receding-horizon run: {len(applied)} applied actions")
        return 0
    state, traj = optimize(task, ocfg, backend)
    rows = [
        (
            i,
            f"{state.loss_history[i]:.17g}",
            f"{state.grad_norm_history[i]:.17g}",
            f"{state.wall_history[i]:.6g}",
        )
        for i in range(len(state.loss_history))
    ]
    _atomic_write_csv(out_dir / "convergence.csv", ["iter", "loss", "grad_norm", "wall_seconds"], rows)
    frame_rows = [
        _frame_row(i, bodies, traj.poses[i], backend) for i in range(len(traj.poses))
    ]
    _atomic_write_csv(out_dir / "trajectory.csv", _frame_header(bodies), frame_rows)
    print(
        f"optimized {len(state.loss_history)} iterations: loss "
        f"{state.loss_history[0]:.6g} -> {state.best_loss:.6g}; wrote {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# verification suites


def _verify_gradients(out_path, seed) -> int:
    from .backends import BshBackend
    from .geometry import Pose, TriMeshBody, make_box
    from .oracles import fd_check
    from .verify_support import random_two_body_state, seam_state

    rng = np.random.default_rng(seed)
    rows = []
    failed = False
    for trial in range(8):
        state, backend = (
            random_two_body_state(rng) if trial < 4 else seam_state(rng, "d1" if trial % 2 else "d2")
        )
        x0, value_fn, grad_fn, hess_fn = _state_functions(state, backend)
        rep = fd_check(value_fn, x0, h=1e-6, grad_fn=grad_fn, hess_fn=hess_fn)
        ok = rep.grad_rel_err < 1e-5 and rep.hess_rel_err < 1e-4
        failed |= not ok
        rows.append(
            (f"trial{trial}", f"{rep.grad_rel_err:.3e}", f"{rep.hess_rel_err:.3e}",
             "pass" if ok else "FAIL")
        )
    _atomic_write_csv(out_path, ["check", "grad_rel_err", "hess_rel_err", "status"], rows)
    return 1 if failed else 0


def _state_functions(state, backend):
    bodies = state.bodies
    base = [p.copy() for p in state.poses]

    def apply_u(u):
        poses = [p.copy() for p in base]
        poses[0].translation = base[0].translation + u[:3]
        poses[1].translation = base[1].translation + u[3:]
        return SystemState(bodies, poses)

    def value_fn(u):
        return backend.evaluate(apply_u(u), order=0).value

    def grad_fn(u):
        ev = backend.evaluate(apply_u(u), order=1)
        na = bodies[0].num_vertices
        ga = ev.grad[ev.support < na].sum(axis=0)
        gb = ev.grad[ev.support >= na].sum(axis=0)
        return np.concatenate([ga, gb])

    def hess_fn(u):
        ev = backend.evaluate(apply_u(u), order=2)
        na = bodies[0].num_vertices
        sel_a = np.flatnonzero(ev.support < na)
        sel_b = np.flatnonzero(ev.support >= na)
        h = np.zeros((6, 6))
        full = ev.hess
        for bi, rows_sel in ((0, sel_a), (1, sel_b)):
            for bj, cols_sel in ((0, sel_a), (1, sel_b)):
                block = np.zeros((3, 3))
                for vi in rows_sel:
                    for vj in cols_sel:
                        block += full[3 * vi : 3 * vi + 3, 3 * vj : 3 * vj + 3]
                h[3 * bi : 3 * bi + 3, 3 * bj : 3 * bj + 3] = block
        return h

    return np.zeros(6), value_fn, grad_fn, hess_fn


def _verify_properties(out_path, seed) -> int:
    from .verify_support import property_checks

    rows, failed = property_checks(seed)
    _atomic_write_csv(out_path, ["check", "value", "threshold", "status"], rows)
    return 1 if failed else 0


def _verify_complexity(out_path, seed) -> int:
    from .oracles import uniform_grid_experiment

    rows = uniform_grid_experiment([8, 16, 32, 64])
    _atomic_write_csv(out_path, ["N", "exact_terms", "centered_terms"], rows)
    totals = [r[1] + r[2] for r in rows]
    ratios = [totals[i + 1] / totals[i] for i in range(len(totals) - 1)]
    print("terms:", totals, "ratios per 4x triangles:", [f"{r:.2f}" for r in ratios])
    return 0 if all(r <= 6.0 for r in ratios) else 1


def _verify_ipc_demo(out_path, seed) -> int:
    from .oracles import (
        pair_sweep_d2,
        point_segment_distance_curve,
        second_derivative_jump,
    )

    curve = point_segment_distance_curve()
    rows = [
        (f"{x:.10g}", f"{d:.10g}", f"{dp:.10g}")
        for x, d, dp in zip(curve.xs, curve.dist, curve.dist_d1)
    ]
    _atomic_write_csv(out_path, ["x", "d", "d_prime"], rows)

    def ipc_d2(x):
        if x < 1.0:
            return 1.0 / np.hypot(x - 1.0, 1.0) ** 3
        if x <= 2.0:
            return 0.0
        return 1.0 / np.hypot(x - 2.0, 1.0) ** 3

    jump1 = second_derivative_jump(ipc_d2, 1.0)
    jump2 = second_derivative_jump(ipc_d2, 2.0)
    ours1 = second_derivative_jump(pair_sweep_d2, 1.0)
    ours2 = second_derivative_jump(pair_sweep_d2, 2.0)
    print(
        f"distance-model d'' jumps: {jump1:.3f} at x=1, {jump2:.3f} at x=2; "
        f"plane-barrier sweep jumps: {ours1:.2e}, {ours2:.2e}"
    )
    ok = jump1 > 0.3 and jump2 > 0.3 and ours1 < 1e-4 and ours2 < 1e-4
    return 0 if ok else 1


SUITES = {
    "gradients": _verify_gradients,
    "properties": _verify_properties,
    "complexity": _verify_complexity,
    "ipc-demo": _verify_ipc_demo,
}


def cmd_verify(args) -> int:
    out = args.out or f"verify_{args.suite}.csv"
    return SUITES[args.suite](out, args.seed if args.seed is not None else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffcontact",
        description="Differentiable contact potentials: simulate, optimize, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="roll a scene forward and write a frame CSV")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--backend", default="bsh", choices=["bsh", "brute", "local-baseline"])
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--threads", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    opt = sub.add_parser("optimize", help="optimize the task's control signals")
    opt.add_argument("--config", required=True)
    opt.add_argument("--out", required=True, help="output directory")
    opt.add_argument("--backend", default="bsh", choices=["bsh", "brute", "local-baseline"])
    opt.add_argument("--seed", type=int, default=None)
    opt.add_argument("--threads", type=int, default=1)
    opt.set_defaults(func=cmd_optimize)

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITES))
    ver.add_argument("--out", default=None)
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--threads", type=int, default=1)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StepError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
