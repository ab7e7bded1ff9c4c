"""Trajectory loss, analytic gradients through step Jacobians, and Adam.

Controls come in two flavours: initial-condition parameters (horizontal
position and velocity of one body, 4 numbers) and per-step PD targets for
one controlled body. The trajectory gradient is accumulated backward
through the per-step implicit-function-theorem Jacobians; controls enter
either through the first two states or through each step's PD term.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .friction import FrictionParams
from .geometry import Pose, SystemState, min_pair_distance
from .stepper import PdControl, StepProblem, step, step_jacobians


@dataclass
class TargetSpec:
    body: int
    position: np.ndarray  # desired center-of-mass position
    eps: float = 0.05  # tolerance radius of the hinge loss

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


@dataclass
class InitialStateControl:
    """u = (px, py, vx, vy): initial horizontal position and velocity."""

    body: int

    @property
    def dim(self) -> int:
        return 4

    def build_initial(self, base_t, base_tm1, u, dt):
        poses_t = [p.copy() for p in base_t]
        poses_tm1 = [p.copy() for p in base_tm1]
        poses_t[self.body].translation = poses_t[self.body].translation.copy()
        poses_t[self.body].translation[0] = u[0]
        poses_t[self.body].translation[1] = u[1]
        vel = np.array([u[2], u[3], 0.0])
        poses_tm1[self.body].translation = (
            poses_t[self.body].translation - dt * vel
        )
        poses_tm1[self.body].rotation = poses_t[self.body].rotation.copy()
        return poses_t, poses_tm1

    def chain_initial(self, adj0, adj_m1, dyn_index, dt):
        """Pull adjoints on (s^0, s^-1) back to u."""
        k = dyn_index[self.body]
        du = np.zeros(4)
        du[0] = adj0[6 * k + 0] + adj_m1[6 * k + 0]
        du[1] = adj0[6 * k + 1] + adj_m1[6 * k + 1]
        du[2] = -dt * adj_m1[6 * k + 0]
        du[3] = -dt * adj_m1[6 * k + 1]
        return du


@dataclass
class PdSequenceControl:
    """u = (H, 3) translation targets for one PD-driven body."""

    body: int
    kp: float
    kd: float = 0.0
    horizon: int = 0

    @property
    def dim(self) -> int:
        return 3 * self.horizon

    def build_initial(self, base_t, base_tm1, u, dt):
        return [p.copy() for p in base_t], [p.copy() for p in base_tm1]

    def controls_at(self, t, u, num_bodies):
        out = [None] * num_bodies
        out[self.body] = PdControl(
            kp=self.kp, target=np.asarray(u[3 * t : 3 * t + 3], dtype=float), kd=self.kd
        )
        return out

    def chain_initial(self, adj0, adj_m1, dyn_index, dt):
        return np.zeros(self.dim)


@dataclass
class Task:
    bodies: list
    base_poses: list
    base_prev_poses: list
    dt: float
    mu: float
    gravity: np.ndarray
    horizon: int
    control: object
    targets: list
    u0: np.ndarray
    friction: FrictionParams | None = None
    bounds: tuple | None = None  # (lo, hi) arrays over u
    receding: int | None = None
    loss_per_frame: bool = False
    step_tol: float = 1e-9

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.receding is not None and self.receding > self.horizon:
            raise ValueError("receding horizon cannot exceed the trajectory horizon")

    @property
    def dynamic(self):
        return [i for i, b in enumerate(self.bodies) if not b.static]


@dataclass
class FrameMetrics:
    min_distance: float
    potential: float
    eval_seconds: float
    exact_terms: int
    centered_terms: int


@dataclass
class Trajectory:
    poses: list  # length H+1: x^0 .. x^H (each a list of Pose)
    jac_t: list
    jac_tm1: list
    jac_u: list
    loss: float = np.nan
    metrics: list = field(default_factory=list)


def rollout(task: Task, u, backend, with_jacobians=False, record_metrics=False) -> Trajectory:
    """Forward simulation over the horizon; optionally records per-step
    Jacobians for the backward pass. Raises StepError with frame context."""
    u = np.asarray(u, dtype=float)
    poses_t, poses_tm1 = task.control.build_initial(
        task.base_poses, task.base_prev_poses, u, task.dt
    )
    traj = Trajectory(poses=[[p.copy() for p in poses_t]], jac_t=[], jac_tm1=[], jac_u=[])
    nb = len(task.bodies)
    for t in range(task.horizon):
        controls = None
        if isinstance(task.control, PdSequenceControl):
            controls = task.control.controls_at(t, u, nb)
        prob = StepProblem(
            task.bodies,
            poses_t,
            poses_tm1,
            task.dt,
            task.mu,
            task.gravity,
            backend,
            friction=task.friction,
            controls=controls,
            tol=task.step_tol,
            relaxed=getattr(backend, "nonsmooth", False),
        )
        try:
            res = step(prob)
        except Exception as exc:
            from .stepper import StepError

            raise StepError(f"frame {t}: {exc}") from exc
        if with_jacobians:
            jac = step_jacobians(prob, res)
            traj.jac_t.append(jac.wrt_t)
            traj.jac_tm1.append(jac.wrt_tm1)
            traj.jac_u.append(jac.wrt_controls)
        if record_metrics:
            from .bsh import InteractionCounts

            counts = InteractionCounts()
            t0 = time.perf_counter()
            ev = backend.evaluate(SystemState(task.bodies, res.poses_next), order=0, counts=counts)
            dt_eval = time.perf_counter() - t0
            traj.metrics.append(
                FrameMetrics(
                    min_pair_distance(SystemState(task.bodies, res.poses_next)),
                    ev.value,
                    dt_eval,
                    counts.exact_terms,
                    counts.centered_terms,
                )
            )
        poses_tm1, poses_t = poses_t, res.poses_next
        traj.poses.append([p.copy() for p in poses_t])
    traj.loss = loss(traj, task)
    return traj


def loss(traj: Trajectory, task: Task) -> float:
    """Hinge on squared center-of-mass distance to each target."""
    frames = range(1, len(traj.poses)) if task.loss_per_frame else [len(traj.poses) - 1]
    total = 0.0
    for f in frames:
        for tgt in task.targets:
            delta = traj.poses[f][tgt.body].translation - tgt.position
            total += max(float(delta @ delta) - tgt.eps**2, 0.0)
    return total


def _loss_state_grads(traj: Trajectory, task: Task):
    """d loss / d s^t (local input coordinates) for every frame."""
    dyn = task.dynamic
    dyn_index = {b: k for k, b in enumerate(dyn)}
    n = 6 * len(dyn)
    grads = [np.zeros(n) for _ in traj.poses]
    frames = range(1, len(traj.poses)) if task.loss_per_frame else [len(traj.poses) - 1]
    for f in frames:
        for tgt in task.targets:
            delta = traj.poses[f][tgt.body].translation - tgt.position
            if float(delta @ delta) - tgt.eps**2 > 0.0:
                k = dyn_index[tgt.body]
                grads[f][6 * k : 6 * k + 3] += 2.0 * delta
    return grads


def grad_loss(traj: Trajectory, task: Task) -> np.ndarray:
    """Reverse accumulation of d loss / d u through the step Jacobians."""
    if not traj.jac_t:
        raise ValueError("rollout must be run with with_jacobians=True")
    h = task.horizon
    dyn_index = {b: k for k, b in enumerate(task.dynamic)}
    state_grads = _loss_state_grads(traj, task)
    n = len(state_grads[0])
    # step t maps (s^t, s^{t-1}) -> s^{t+1}; adj[t] = d loss / d s^t
    adj = [np.zeros(n) for _ in range(h + 1)]
    adj[h] = state_grads[h].copy()
    for t in range(h - 1, -1, -1):
        adj[t] = state_grads[t] + traj.jac_t[t].T @ adj[t + 1]
        if t + 2 <= h:
            adj[t] += traj.jac_tm1[t + 1].T @ adj[t + 2]
    adj_m1 = traj.jac_tm1[0].T @ adj[1] if h >= 1 else np.zeros(n)
    du = task.control.chain_initial(adj[0], adj_m1, dyn_index, task.dt)
    if isinstance(task.control, PdSequenceControl):
        du = np.zeros(task.control.dim)
        for t in range(h):
            if traj.jac_u[t] is not None:
                du[3 * t : 3 * t + 3] = traj.jac_u[t].T @ adj[t + 1]
    return du


@dataclass
class OptimState:
    u: np.ndarray
    m: np.ndarray
    v: np.ndarray
    iteration: int = 0
    loss_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    wall_history: list = field(default_factory=list)
    best_u: np.ndarray | None = None
    best_loss: float = np.inf


@dataclass
class OptimConfig:
    alpha: float = 3e-2
    beta1: float = 0.3
    beta2: float = 0.5
    iters: int = 400
    adam_eps: float = 1e-8
    seed: int = 0
    stop_loss_ratio: float | None = None  # early stop when loss <= ratio * initial
    sampling_candidates: int = 0  # hook only; search is not implemented

    def __post_init__(self):
        if self.sampling_candidates:
            raise NotImplementedError(
                "random-sampling initialization is a configuration hook only"
            )


def adam_step(state: OptimState, grad: np.ndarray, cfg: OptimConfig) -> np.ndarray:
    state.iteration += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    mh = state.m / (1 - cfg.beta1**state.iteration)
    vh = state.v / (1 - cfg.beta2**state.iteration)
    return state.u - cfg.alpha * mh / (np.sqrt(vh) + cfg.adam_eps)


def optimize(task: Task, cfg: OptimConfig, backend):
    """Adam on the rollout loss. Deterministic given identical inputs."""
    state = OptimState(u=task.u0.copy(), m=np.zeros_like(task.u0), v=np.zeros_like(task.u0))
    start = time.perf_counter()
    initial_loss = None
    for _ in range(cfg.iters):
        traj = rollout(task, state.u, backend, with_jacobians=True)
        grad = grad_loss(traj, task)
        state.loss_history.append(traj.loss)
        state.grad_norm_history.append(float(np.linalg.norm(grad)))
        state.wall_history.append(time.perf_counter() - start)
        if initial_loss is None:
            initial_loss = traj.loss
        if traj.loss < state.best_loss:
            state.best_loss = traj.loss
            state.best_u = state.u.copy()
        if (
            cfg.stop_loss_ratio is not None
            and initial_loss > 0
            and traj.loss <= cfg.stop_loss_ratio * initial_loss
        ):
            break
        state.u = adam_step(state, grad, cfg)
        if task.bounds is not None:
            state.u = np.clip(state.u, task.bounds[0], task.bounds[1])
    final_traj = rollout(task, state.best_u if state.best_u is not None else state.u, backend)
    return state, final_traj


def optimize_receding(task: Task, cfg: OptimConfig, backend, inner_iters: int = 8):
    """Receding-horizon mode: repeatedly optimize an h-frame sub-trajectory
    of PD targets and apply only the first action."""
    if not isinstance(task.control, PdSequenceControl):
        raise ValueError("receding horizon requires per-step PD controls")
    if task.receding is None:
        raise ValueError("task.receding must be set")
    h_sub = task.receding
    poses_t = [p.copy() for p in task.base_poses]
    poses_tm1 = [p.copy() for p in task.base_prev_poses]
    applied = []
    losses = []
    guess = task.u0[: 3 * h_sub].copy()
    nb = len(task.bodies)
    for frame in range(task.horizon):
        sub_control = PdSequenceControl(
            task.control.body, task.control.kp, task.control.kd, horizon=h_sub
        )
        sub = Task(
            bodies=task.bodies,
            base_poses=poses_t,
            base_prev_poses=poses_tm1,
            dt=task.dt,
            mu=task.mu,
            gravity=task.gravity,
            horizon=h_sub,
            control=sub_control,
            targets=task.targets,
            u0=guess,
            friction=task.friction,
            step_tol=task.step_tol,
        )
        sub_cfg = OptimConfig(
            alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2, iters=inner_iters,
            seed=cfg.seed,
        )
        sub_state, _ = optimize(sub, sub_cfg, backend)
        best = sub_state.best_u
        first = best[:3]
        applied.append(first.copy())
        prob = StepProblem(
            task.bodies, poses_t, poses_tm1, task.dt, task.mu, task.gravity,
            backend, friction=task.friction,
            controls=sub_control.controls_at(0, best, nb), tol=task.step_tol,
        )
        res = step(prob)
        poses_tm1, poses_t = poses_t, res.poses_next
        losses.append(sub_state.best_loss)
        # shift the guess window by one action
        guess = np.concatenate([best[3:], best[-3:]])
    return applied, losses, poses_t
