"""Synthetic-world generation and downstream evaluation.

Worlds are desk-scale trajectories (loop, figure-eight, corridor with a
revisit) with map points scattered in front of each camera, exact stereo
projections plus Gaussian pixel noise as measurements, and stored pose /
point estimates perturbed from the ground truth so that every utility and
bundle adjustment run from a realistic linearization point.

Evaluation refines the selected subset with Gauss-Newton bundle adjustment
(first pose anchored) and reports APE / RPE against the ground truth plus a
loop-coverage recall proxy.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    ConfigurationError,
    DataError,
    GenerationError,
    UnderConstrainedError,
)
from .geometry import (
    DEPTH_FLOOR,
    CameraIntrinsics,
    SE3,
    batch_camera_points,
    batch_jacobians,
    batch_project_stereo,
    se3_perturb,
)
from .map_model import Keyframe, MapPoint, Observation, SelectionProblem, SlamMap, forced_set
from . import greedy as greedy_mod
from .utilities import DEFAULT_B_COVER, make_state

DEFAULT_CAMERA = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, baseline=0.1)
IMAGE_WIDTH = 640.0
IMAGE_HEIGHT = 480.0
RECALL_THRESHOLD = 40

WORLD_SHAPES = ("loop", "figure8", "corridor")


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of one synthetic world; fully deterministic per seed."""

    shape: str = "loop"
    n_frames: int = 20
    points_per_region: int = 50
    radius: float = 12.0          # maximum observation distance, metres
    loop_fraction: float = 0.2    # trailing fraction of frames flagged as loop frames
    sigma: float = 1.0            # pixel noise std-dev
    mono_fraction: float = 0.0    # fraction of observations kept monocular
    seed: int = 0
    pose_noise: float = 0.05      # stored-pose translation perturbation, metres
    pose_noise_deg: float = 0.5   # stored-pose rotation perturbation, degrees
    point_noise: float = 0.05     # stored-point perturbation, metres
    min_depth: float = 0.2

    def __post_init__(self):
        if self.shape not in WORLD_SHAPES:
            raise ConfigurationError("unknown world shape %r" % (self.shape,))
        if self.n_frames < 2:
            raise ConfigurationError("need at least 2 frames")
        if self.points_per_region < 1 or self.radius <= 0:
            raise ConfigurationError("counts and radius must be positive")
        for frac in (self.loop_fraction, self.mono_fraction):
            if not 0.0 <= frac <= 1.0:
                raise ConfigurationError("fractions must lie in [0, 1]")
        if self.sigma < 0 or self.pose_noise < 0 or self.point_noise < 0:
            raise ConfigurationError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    poses: tuple       # (t,) SE3 world -> camera, temporal order
    points: np.ndarray  # (n, 3) world positions, row i = point id i + 1


def _look_pose(position, forward):
    """World->camera pose of a camera at `position` looking along `forward`
    (XY plane), image down aligned with world -z."""
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    d = np.array([0.0, 0.0, -1.0])
    r = np.cross(d, f)
    r = r / np.linalg.norm(r)
    R_cw = np.column_stack([r, d, f])
    R = R_cw.T
    return SE3(R, -R @ np.asarray(position, dtype=float))


def _trajectory(spec: WorldSpec):
    """Ground-truth camera positions and forward directions."""
    t = spec.n_frames
    if spec.shape == "loop":
        R = 6.0
        th = 2.0 * math.pi * np.arange(t) / t
        pos = np.column_stack([R * np.cos(th), R * np.sin(th), np.zeros(t)])
        fwd = np.column_stack([-np.sin(th), np.cos(th), np.zeros(t)])
    elif spec.shape == "figure8":
        R = 6.0
        th = 2.0 * math.pi * np.arange(t) / t
        pos = np.column_stack([R * np.sin(th), R * np.sin(th) * np.cos(th), np.zeros(t)])
        dx = np.cos(th)
        dy = np.cos(2.0 * th)
        nrm = np.hypot(dx, dy)
        fwd = np.column_stack([dx / nrm, dy / nrm, np.zeros(t)])
    else:  # corridor with a revisit: out along +x and back over the same line
        L = 10.0
        half = (t + 1) // 2
        xs_out = np.linspace(0.0, L, half)
        xs_back = np.linspace(L, 0.0, t - half + 1)[1:] if t > half else np.empty(0)
        xs = np.concatenate([xs_out, xs_back])
        pos = np.column_stack([xs, np.zeros(t), np.zeros(t)])
        fwd = np.tile([1.0, 0.0, 0.0], (t, 1))
    return pos, fwd


def generate_world(spec: WorldSpec):
    """Build a (SlamMap, GroundTruth) pair from the spec.

    Map points are back-projected from random pixels / depths of their home
    frame; observations exist wherever a ground-truth projection lands in
    the image within the distance budget.  The stored map carries noisy
    measurements and perturbed pose / point estimates.
    """
    rng = np.random.default_rng(spec.seed)
    cam = DEFAULT_CAMERA
    t = spec.n_frames
    positions, forwards = _trajectory(spec)
    gt_poses = [_look_pose(positions[j], forwards[j]) for j in range(t)]

    # one region of points per frame, sampled in that frame's view frustum
    pts = []
    for j in range(t):
        m = spec.points_per_region
        u = rng.uniform(0.15 * IMAGE_WIDTH, 0.85 * IMAGE_WIDTH, m)
        v = rng.uniform(0.15 * IMAGE_HEIGHT, 0.85 * IMAGE_HEIGHT, m)
        z = rng.uniform(max(spec.min_depth * 2.0, 0.3 * spec.radius), 0.9 * spec.radius, m)
        p_cam = np.column_stack([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z])
        inv = gt_poses[j].inverse()
        pts.append(p_cam @ inv.rotation.T + inv.translation)
    gt_points = np.vstack(pts)
    n = gt_points.shape[0]

    # visibility sweep: one vectorized projection pass per frame
    obs_frame, obs_point, obs_meas = [], [], []
    for j in range(t):
        R, tv = gt_poses[j].rotation, gt_poses[j].translation
        p_cam = gt_points @ R.T + tv
        z = p_cam[:, 2]
        ok = z > spec.min_depth
        ok &= np.linalg.norm(gt_points - positions[j], axis=1) <= spec.radius
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = batch_project_stereo(cam, p_cam)
        ok &= (proj[:, 0] >= 0) & (proj[:, 0] <= IMAGE_WIDTH)
        ok &= (proj[:, 2] >= 0) & (proj[:, 2] <= IMAGE_WIDTH)
        ok &= (proj[:, 1] >= 0) & (proj[:, 1] <= IMAGE_HEIGHT)
        idx = np.flatnonzero(ok)
        obs_frame.append(np.full(len(idx), j + 1, dtype=np.int64))
        obs_point.append(idx)
        obs_meas.append(proj[idx])
    obs_frame = np.concatenate(obs_frame)
    obs_point = np.concatenate(obs_point)
    obs_meas = np.vstack(obs_meas) if len(obs_frame) else np.zeros((0, 3))
    if len(obs_frame) == 0:
        raise GenerationError("spec produced no visible points")

    noise = rng.normal(0.0, spec.sigma, obs_meas.shape) if spec.sigma > 0 else np.zeros(obs_meas.shape)
    obs_meas = obs_meas + noise
    mono = rng.random(len(obs_frame)) < spec.mono_fraction

    # stored (perturbed) estimates
    d_trans = rng.normal(0.0, spec.pose_noise, (t, 3)) if spec.pose_noise > 0 else np.zeros((t, 3))
    d_rot = (
        rng.normal(0.0, math.radians(spec.pose_noise_deg), (t, 3))
        if spec.pose_noise_deg > 0
        else np.zeros((t, 3))
    )
    est_poses = [
        se3_perturb(np.concatenate([d_trans[j], d_rot[j]]), gt_poses[j]) for j in range(t)
    ]
    d_pts = rng.normal(0.0, spec.point_noise, (n, 3)) if spec.point_noise > 0 else np.zeros((n, 3))
    est_points = gt_points + d_pts

    n_loop = int(math.ceil(spec.loop_fraction * t))
    loop_from = t - n_loop + 1 if n_loop else t + 1
    keyframes = [
        Keyframe(j, j, est_poses[j - 1], is_loop_frame=(j >= loop_from)) for j in range(1, t + 1)
    ]
    points = [MapPoint(i + 1, est_points[i]) for i in range(n)]
    observations = [
        Observation(
            int(obs_point[r]) + 1,
            int(obs_frame[r]),
            "mono" if mono[r] else "stereo",
            obs_meas[r, :2] if mono[r] else obs_meas[r],
            sigma=spec.sigma if spec.sigma > 0 else 1.0,
        )
        for r in range(len(obs_frame))
    ]
    world = SlamMap(DEFAULT_CAMERA, keyframes, points, observations)
    return world, GroundTruth(tuple(gt_poses), gt_points)


# ---------------------------------------------------------------------------
# Bundle adjustment


@dataclass
class BaResult:
    poses: list            # (t,) SE3, refined (frame 1 anchored)
    points: dict           # point id -> refined 3-vector (optimized points only)
    cost_history: list     # weighted squared residual norm per accepted iterate
    iterations: int

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]


def _ba_structure(m: SlamMap, selected_set):
    """Rows (point idx, temporal frame, stereo flag, meas, sigma) restricted to
    selected, sufficiently constrained points."""
    tb = m.tables
    sel_idx = np.array(sorted(tb.point_index[p] for p in selected_set), dtype=np.int64)
    keep_rows = []
    opt_points = []
    for pi in sel_idx:
        rows = tb.rows_of_point(int(pi))
        dims = np.where(tb.obs_stereo[rows], 3, 2)
        if dims.sum() >= 3 and rows.stop - rows.start >= 2:
            keep_rows.append(np.arange(rows.start, rows.stop))
            opt_points.append(int(pi))
    if not keep_rows:
        raise UnderConstrainedError(list(range(1, m.n_frames + 1)))
    keep = np.concatenate(keep_rows)
    return keep, opt_points


def gauss_newton_ba(m: SlamMap, selected_set, max_iters=50, tol=1e-12) -> BaResult:
    """Refine poses 2..t and the selected points by Gauss-Newton on the
    weighted reprojection error; frame 1 stays at its stored pose (gauge
    anchor).  Step halving keeps the cost sequence non-increasing.

    Points whose observations cannot determine them (fewer than 3 residual
    rows or a single frame) are dropped from the problem; frames left with
    fewer than 6 residual rows raise UnderConstrainedError.
    """
    tb = m.tables
    t = m.n_frames
    cam = m.camera
    keep, opt_points = _ba_structure(m, selected_set)
    frames0 = tb.obs_frame[keep] - 1            # 0-based temporal
    pidx = tb.obs_point[keep]
    stereo = tb.obs_stereo[keep]
    meas = tb.obs_meas[keep]
    sqw = 1.0 / tb.obs_sigma[keep]
    dims = np.where(stereo, 3, 2)

    rows_per_frame = np.zeros(t, dtype=np.int64)
    np.add.at(rows_per_frame, frames0, dims)
    bad = [j + 1 for j in range(1, t) if rows_per_frame[j] < 6]
    if bad:
        raise UnderConstrainedError(bad)

    point_col = {pi: c for c, pi in enumerate(opt_points)}
    pcols = np.array([point_col[int(p)] for p in pidx], dtype=np.int64)
    n_opt = len(opt_points)
    n_pose_vars = 6 * (t - 1)

    poses = [m.frame_by_index(j).pose for j in range(1, t + 1)]
    pts = tb.positions[np.array(opt_points, dtype=np.int64)].copy()

    def residual_cost(poses_, pts_):
        R = np.stack([poses_[j].rotation for j in frames0])
        tv = np.stack([poses_[j].translation for j in frames0])
        p_cam = batch_camera_points(R, tv, pts_[pcols])
        if np.any(p_cam[:, 2] <= DEPTH_FLOOR):
            return None, None, math.inf
        proj = batch_project_stereo(cam, p_cam)
        res = proj - meas
        res[~stereo, 2] = 0.0
        cost = float(np.sum((res * sqw[:, None]) ** 2))
        return p_cam, res, cost

    p_cam, res, cost = residual_cost(poses, pts)
    if not math.isfinite(cost):
        raise DataError("stored estimates place selected points behind a camera")
    history = [cost]
    iters = 0
    for _ in range(max_iters):
        R = np.stack([poses[j].rotation for j in frames0])
        A, M = batch_jacobians(cam, R, p_cam)
        A[~stereo, 2, :] = 0.0
        M[~stereo, 2, :] = 0.0
        A = A * sqw[:, None, None]
        M = M * sqw[:, None, None]
        wres = res * sqw[:, None]

        n_obs = len(keep)
        row_base = 3 * np.arange(n_obs)
        rr = np.repeat(row_base, 3) + np.tile(np.arange(3), n_obs)
        # pose block columns (frame 1 anchored -> no columns)
        has_pose = frames0 > 0
        pose_cols = ((frames0[has_pose] - 1) * 6)[:, None, None] + np.arange(6)[None, None, :]
        pose_cols = np.broadcast_to(pose_cols, (has_pose.sum(), 3, 6)).ravel()
        pose_rows = np.broadcast_to(
            rr.reshape(n_obs, 3)[has_pose][:, :, None], (has_pose.sum(), 3, 6)
        ).ravel()
        pose_vals = A[has_pose].ravel()

        pt_cols = (n_pose_vars + pcols * 3)[:, None, None] + np.arange(3)[None, None, :]
        pt_cols = np.broadcast_to(pt_cols, (n_obs, 3, 3)).ravel()
        pt_rows = np.broadcast_to(rr.reshape(n_obs, 3)[:, :, None], (n_obs, 3, 3)).ravel()
        pt_vals = M.ravel()

        J = sp.coo_matrix(
            (
                np.concatenate([pose_vals, pt_vals]),
                (np.concatenate([pose_rows, pt_rows]), np.concatenate([pose_cols, pt_cols])),
            ),
            shape=(3 * n_obs, n_pose_vars + 3 * n_opt),
        ).tocsr()
        g = J.T @ wres.ravel()
        H = (J.T @ J).tocsc()
        damp = 1e-10 * max(H.diagonal().max(), 1.0)
        H = H + damp * sp.identity(H.shape[0], format="csc")
        try:
            delta = splu(H).solve(-g)
        except RuntimeError:
            raise UnderConstrainedError(bad or list(range(2, t + 1)))
        if not np.all(np.isfinite(delta)):
            raise UnderConstrainedError(list(range(2, t + 1)))

        step = 1.0
        accepted = False
        for _half in range(25):
            d = step * delta
            new_poses = [poses[0]] + [
                se3_perturb(d[6 * (j - 1) : 6 * j], poses[j]) for j in range(1, t)
            ]
            new_pts = pts + d[n_pose_vars:].reshape(n_opt, 3)
            pc2, res2, cost2 = residual_cost(new_poses, new_pts)
            if cost2 < cost:
                poses, pts, p_cam, res, cost = new_poses, new_pts, pc2, res2, cost2
                accepted = True
                break
            step *= 0.5
        iters += 1
        if not accepted:
            break
        history.append(cost)
        if history[-2] - history[-1] < tol:
            break

    refined = {int(tb.point_ids[pi]): pts[c] for pi, c in point_col.items()}
    return BaResult(poses, refined, history, iters)


# ---------------------------------------------------------------------------
# Metrics


def _centers(poses):
    return np.stack([p.inverse().translation for p in poses])


def ape(estimated, ground_truth) -> float:
    """RMSE of camera positions after closed-form rigid alignment (no scale)."""
    if len(estimated) != len(ground_truth):
        raise DataError("trajectory lengths differ")
    if len(estimated) < 2:
        raise DataError("need at least 2 poses")
    P = _centers(estimated)
    Q = _centers(ground_truth)
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ S @ U.T
    aligned = (P - mp) @ R.T + mq
    return float(np.sqrt(np.mean(np.sum((aligned - Q) ** 2, axis=1))))


def rpe(estimated, ground_truth, delta_frames=1) -> float:
    """RMSE of relative translation error over windows of `delta_frames`."""
    t = len(estimated)
    if len(ground_truth) != t:
        raise DataError("trajectory lengths differ")
    if not 1 <= delta_frames < t:
        raise ConfigurationError("delta must satisfy 1 <= delta < t")
    E = [p.inverse() for p in estimated]     # camera -> world
    G = [p.inverse() for p in ground_truth]
    errs = []
    for j in range(t - delta_frames):
        rel_e = E[j].inverse().compose(E[j + delta_frames])
        rel_g = G[j].inverse().compose(G[j + delta_frames])
        err = rel_g.inverse().compose(rel_e)
        errs.append(np.linalg.norm(err.translation))
    return float(np.sqrt(np.mean(np.square(errs))))


def recall_proxy(m: SlamMap, selected_set, threshold=RECALL_THRESHOLD) -> float:
    """Fraction of loop frames retaining at least `threshold` selected points."""
    loops = [k.index for k in m.keyframes if k.is_loop_frame]
    if not loops:
        raise ConfigurationError("recall proxy undefined: map has no loop frames")
    tb = m.tables
    sel_idx = {tb.point_index[p] for p in selected_set if p in tb.point_index}
    hit = sum(1 for j in loops if len(tb.frame_points[j] & sel_idx) >= threshold)
    return hit / len(loops)


# ---------------------------------------------------------------------------
# Budget sweep


@dataclass
class EvalReport:
    kind: str
    budget: int
    seed: int
    ape_m: float
    rpe_rmse: float
    recall: float
    utility: float
    select_seconds: float
    gain_evals: int
    rpe_per_delta: dict = field(default_factory=dict)


CSV_HEADER = "kind,budget,seed,ape_m,rpe_rmse,recall_proxy,utility,select_seconds,gain_evals"


def report_csv_row(r: EvalReport) -> str:
    return "%s,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%d" % (
        r.kind,
        r.budget,
        r.seed,
        r.ape_m,
        r.rpe_rmse,
        r.recall,
        r.utility,
        r.select_seconds,
        r.gain_evals,
    )


def select_subset(problem: SelectionProblem, kind, b_cover=DEFAULT_B_COVER, method="lazy",
                  epsilon=0.05, seed=0):
    """Run one selector; kind may be a utility kind or 'random'."""
    if kind == "random":
        return greedy_mod.random_select(problem, seed=seed)
    state = make_state(problem, kind, b_cover=b_cover)
    if method == "classic":
        return greedy_mod.classic_greedy(problem, state)
    if method == "stochastic":
        return greedy_mod.stochastic_greedy(problem, state, epsilon=epsilon, seed=seed)
    return greedy_mod.lazy_greedy(problem, state)


def evaluate_selection(m: SlamMap, gt: GroundTruth, selection, threshold=RECALL_THRESHOLD,
                       max_iters=50, tol=1e-12, rpe_deltas=(1,)) -> EvalReport:
    """Bundle-adjust the selected subset and score it against ground truth."""
    ba = gauss_newton_ba(m, set(selection.ids), max_iters=max_iters, tol=tol)
    gt_poses = list(gt.poses)
    per_delta = {d: rpe(ba.poses, gt_poses, d) for d in rpe_deltas}
    return EvalReport(
        kind=selection.kind,
        budget=selection.k,
        seed=0,
        ape_m=ape(ba.poses, gt_poses),
        rpe_rmse=per_delta[rpe_deltas[0]],
        recall=recall_proxy(m, set(selection.ids), threshold),
        utility=selection.value,
        select_seconds=selection.seconds,
        gain_evals=selection.gain_evals,
        rpe_per_delta=per_delta,
    )


def parse_budget(token, n_points: int) -> int:
    """Budget as an absolute count or a percentage string like '15%'."""
    if isinstance(token, str) and token.endswith("%"):
        pct = float(token[:-1])
        if not 0.0 < pct <= 100.0:
            raise ConfigurationError("percentage budget must lie in (0, 100]")
        return int(math.ceil(pct / 100.0 * n_points))
    k = int(token)
    if k <= 0:
        raise ConfigurationError("budget must be positive")
    return k


def _worker_count() -> int:
    env = os.environ.get("MAPSELECT_THREADS", "")
    try:
        cap = int(env)
    except ValueError:
        cap = 0
    return max(1, cap) if cap > 0 else 1


def budget_sweep(spec: WorldSpec, kinds, budgets, seeds, b_cover=DEFAULT_B_COVER,
                 threshold=RECALL_THRESHOLD, method="lazy", use_forced=True,
                 max_iters=50) -> list:
    """One EvalReport per (kind, budget, seed), deterministic given seeds."""
    runs = [(kind, budget, seed) for kind in kinds for budget in budgets for seed in seeds]

    def one(run):
        kind, budget, seed = run
        world, gt = generate_world(replace(spec, seed=seed))
        k = parse_budget(budget, world.n_points)
        forced = frozenset(forced_set(world)) if use_forced else frozenset()
        k = max(k, len(forced))
        problem = SelectionProblem(world, k, forced=forced)
        selection = select_subset(problem, kind, b_cover=b_cover, method=method, seed=seed)
        report = evaluate_selection(world, gt, selection, threshold=threshold, max_iters=max_iters)
        report.seed = seed
        report.budget = k
        return report

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, runs))
    return [one(r) for r in runs]
