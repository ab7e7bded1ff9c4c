"""Scene and task configuration: TOML in, bodies/backends/tasks out.

One human-editable TOML file describes a scene: bodies (mesh path, pose,
mass), physics constants, an optional task section, and optimizer
settings. Validation is strict: unknown keys are rejected and messages
name the offending key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python <= 3.10
    import tomli as tomllib
from pathlib import Path

import numpy as np

from . import so3
from .backends import make_backend
from .friction import FrictionParams
from .geometry import Pose, TriMeshBody, load_obj
from .trajopt import InitialStateControl, PdSequenceControl, Task, TargetSpec


class ConfigError(ValueError):
    pass


@dataclass
class BodySpec:
    name: str
    mesh: str
    mass: float = 1.0
    inertia: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    rotation: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    static: bool = False


@dataclass
class TaskSpec:
    type: str  # "initial_state" | "pd_targets"
    controlled_body: str
    target_body: str
    target_position: list
    eps_target: float = 0.05
    u0: list = field(default_factory=list)
    bounds_lo: list | None = None
    bounds_hi: list | None = None
    loss_per_frame: bool = False
    receding: int | None = None
    kp: float = 50.0
    kd: float = 1.0


@dataclass
class SceneConfig:
    name: str
    bodies: list
    gravity: list = field(default_factory=lambda: [0.0, 0.0, -9.8])
    mu: float = 1e-7
    epsilon: float = 0.1
    dt: float = 0.04
    horizon: int = 100
    seed: int = 0
    lam: float = 0.0
    d_parallel_stiffness: float = 1.0
    delta_baseline: float = 0.01
    task: TaskSpec | None = None
    alpha: float = 3e-2
    beta1: float = 0.3
    beta2: float = 0.5
    iters: int = 400
    stop_loss_ratio: float | None = None
    random_sampling_candidates: int = 0
    base_dir: Path = field(default_factory=Path)


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return table[key]


def _check_keys(table: dict, allowed: set, where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def _vec3(value, where: str):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigError(f"{where}: expected 3 numbers")
    return arr.tolist()


def load_scene_config(path) -> SceneConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")

    _check_keys(raw, {"scene", "friction", "body", "task", "optimizer"}, str(path))
    scene = _require(raw, "scene", str(path))
    _check_keys(
        scene,
        {"name", "gravity", "mu", "epsilon", "dt", "horizon", "seed", "delta_baseline"},
        "scene",
    )
    cfg = SceneConfig(
        name=scene.get("name", path.stem),
        bodies=[],
        gravity=_vec3(scene.get("gravity", [0, 0, -9.8]), "scene.gravity"),
        mu=float(scene.get("mu", 1e-7)),
        epsilon=float(scene.get("epsilon", 0.1)),
        dt=float(scene.get("dt", 0.04)),
        horizon=int(scene.get("horizon", 100)),
        seed=int(scene.get("seed", 0)),
        delta_baseline=float(scene.get("delta_baseline", 0.01)),
        base_dir=path.parent,
    )
    for key, value, cond in (
        ("scene.mu", cfg.mu, cfg.mu > 0),
        ("scene.epsilon", cfg.epsilon, cfg.epsilon > 0),
        ("scene.dt", cfg.dt, cfg.dt > 0),
        ("scene.horizon", cfg.horizon, cfg.horizon >= 1),
    ):
        if not cond:
            raise ConfigError(f"{key}: invalid value {value}")

    fric = raw.get("friction", {})
    _check_keys(fric, {"lambda", "d_parallel_stiffness"}, "friction")
    cfg.lam = float(fric.get("lambda", 0.0))
    cfg.d_parallel_stiffness = float(fric.get("d_parallel_stiffness", 1.0))
    if cfg.lam < 0:
        raise ConfigError("friction.lambda: must be nonnegative")

    bodies = _require(raw, "body", str(path))
    if not isinstance(bodies, list) or not bodies:
        raise ConfigError("at least one [[body]] section is required")
    names = set()
    for i, b in enumerate(bodies):
        where = f"body[{i}]"
        _check_keys(
            b,
            {"name", "mesh", "mass", "inertia", "position", "rotation", "velocity", "static"},
            where,
        )
        spec = BodySpec(
            name=str(_require(b, "name", where)),
            mesh=str(_require(b, "mesh", where)),
            mass=float(b.get("mass", 1.0)),
            inertia=list(b.get("inertia", [1.0, 1.0, 1.0])),
            position=_vec3(b.get("position", [0, 0, 0]), f"{where}.position"),
            rotation=_vec3(b.get("rotation", [0, 0, 0]), f"{where}.rotation"),
            velocity=_vec3(b.get("velocity", [0, 0, 0]), f"{where}.velocity"),
            static=bool(b.get("static", False)),
        )
        if spec.mass <= 0 and not spec.static:
            raise ConfigError(f"{where}: dynamic bodies need positive mass")
        if spec.name in names:
            raise ConfigError(f"{where}: duplicate body name '{spec.name}'")
        names.add(spec.name)
        cfg.bodies.append(spec)

    if "task" in raw:
        t = raw["task"]
        _check_keys(
            t,
            {
                "type", "controlled_body", "target_body", "target_position",
                "eps_target", "u0", "bounds_lo", "bounds_hi", "loss_per_frame",
                "receding", "kp", "kd",
            },
            "task",
        )
        ttype = str(_require(t, "type", "task"))
        if ttype not in ("initial_state", "pd_targets"):
            raise ConfigError(f"task.type: unknown type '{ttype}'")
        spec = TaskSpec(
            type=ttype,
            controlled_body=str(_require(t, "controlled_body", "task")),
            target_body=str(_require(t, "target_body", "task")),
            target_position=_vec3(_require(t, "target_position", "task"), "task.target_position"),
            eps_target=float(t.get("eps_target", 0.05)),
            u0=list(t.get("u0", [])),
            bounds_lo=t.get("bounds_lo"),
            bounds_hi=t.get("bounds_hi"),
            loss_per_frame=bool(t.get("loss_per_frame", False)),
            receding=int(t["receding"]) if "receding" in t else None,
            kp=float(t.get("kp", 50.0)),
            kd=float(t.get("kd", 1.0)),
        )
        for nm in (spec.controlled_body, spec.target_body):
            if nm not in names:
                raise ConfigError(f"task: unknown body '{nm}'")
        cfg.task = spec

    opt = raw.get("optimizer", {})
    _check_keys(
        opt,
        {"alpha", "beta1", "beta2", "iters", "stop_loss_ratio", "random_sampling_candidates"},
        "optimizer",
    )
    cfg.alpha = float(opt.get("alpha", 3e-2))
    cfg.beta1 = float(opt.get("beta1", 0.3))
    cfg.beta2 = float(opt.get("beta2", 0.5))
    cfg.iters = int(opt.get("iters", 400))
    if "stop_loss_ratio" in opt:
        cfg.stop_loss_ratio = float(opt["stop_loss_ratio"])
    cfg.random_sampling_candidates = int(opt.get("random_sampling_candidates", 0))
    if cfg.random_sampling_candidates:
        raise ConfigError(
            "optimizer.random_sampling_candidates: sampling-based initialization "
            "is a configuration hook and is not implemented"
        )
    return cfg


def build_bodies(cfg: SceneConfig):
    """Instantiate bodies and their initial (and previous) poses."""
    bodies, poses, prev = [], [], []
    for spec in cfg.bodies:
        mesh_path = cfg.base_dir / spec.mesh
        if not mesh_path.exists():
            raise ConfigError(f"body '{spec.name}': mesh file not found: {mesh_path}")
        verts, faces = load_obj(mesh_path)
        inertia = np.asarray(spec.inertia, dtype=float)
        inertia = np.diag(inertia) if inertia.ndim == 1 else inertia
        bodies.append(
            TriMeshBody(
                spec.name, verts, faces, mass=spec.mass, inertia=inertia,
                static=spec.static,
            )
        )
        rot = so3.exp_so3(np.asarray(spec.rotation, dtype=float))
        pos = np.asarray(spec.position, dtype=float)
        poses.append(Pose(pos.copy(), rot))
        vel = np.asarray(spec.velocity, dtype=float)
        prev.append(Pose(pos - cfg.dt * vel, rot.copy()))
    return bodies, poses, prev


def friction_params(cfg: SceneConfig) -> FrictionParams | None:
    if cfg.lam <= 0:
        return None
    return FrictionParams(
        lam=cfg.lam, epsilon=cfg.epsilon, d_parallel_stiffness=cfg.d_parallel_stiffness
    )


def build_backend(cfg: SceneConfig, bodies, name: str = "bsh", threads: int = 1):
    return make_backend(
        name, bodies, epsilon=cfg.epsilon, delta=cfg.delta_baseline, threads=threads
    )


def build_task(cfg: SceneConfig, bodies, poses, prev) -> Task:
    if cfg.task is None:
        raise ConfigError("this command requires a [task] section in the config")
    spec = cfg.task
    index = {b.name: i for i, b in enumerate(bodies)}
    controlled = index[spec.controlled_body]
    if spec.type == "initial_state":
        control = InitialStateControl(controlled)
        base = poses[controlled].translation
        u0 = np.asarray(
            spec.u0 if spec.u0 else [base[0], base[1], 0.0, 0.0], dtype=float
        )
        if u0.shape != (4,):
            raise ConfigError("task.u0: initial_state control takes 4 numbers")
    else:
        control = PdSequenceControl(controlled, kp=spec.kp, kd=spec.kd, horizon=cfg.horizon)
        if spec.u0:
            u0 = np.asarray(spec.u0, dtype=float)
            if u0.size != control.dim:
                raise ConfigError(
                    f"task.u0: pd_targets control takes {control.dim} numbers"
                )
        else:
            u0 = np.tile(poses[controlled].translation, cfg.horizon)
    bounds = None
    if spec.bounds_lo is not None or spec.bounds_hi is not None:
        if spec.bounds_lo is None or spec.bounds_hi is None:
            raise ConfigError("task bounds need both bounds_lo and bounds_hi")
        lo = np.asarray(spec.bounds_lo, dtype=float)
        hi = np.asarray(spec.bounds_hi, dtype=float)
        if lo.shape != u0.shape or hi.shape != u0.shape:
            raise ConfigError("task bounds must match the control dimension")
        bounds = (lo, hi)
    return Task(
        bodies=bodies,
        base_poses=poses,
        base_prev_poses=prev,
        dt=cfg.dt,
        mu=cfg.mu,
        gravity=np.asarray(cfg.gravity),
        horizon=cfg.horizon,
        control=control,
        targets=[TargetSpec(index[spec.target_body], spec.target_position, spec.eps_target)],
        u0=u0,
        friction=friction_params(cfg),
        bounds=bounds,
        receding=spec.receding,
        loss_per_frame=spec.loss_per_frame,
    )
