"""Shared fixtures: hand-rolled small random maps, independent of the
synthetic-world generator, so generator and selectors can cross-check each
other."""

import numpy as np
import pytest

from mapselect.geometry import CameraIntrinsics, SE3, rotvec_to_matrix
from mapselect.map_model import Keyframe, MapPoint, Observation, SelectionProblem, SlamMap

CAM = CameraIntrinsics(fx=400.0, fy=420.0, cx=320.0, cy=240.0, baseline=0.12)
WIDTH, HEIGHT = 640.0, 480.0


def random_small_map(rng, t_max=8, n_max=12, mono_prob=0.2, loop_frames=True,
                     orphan_prob=0.0, keep_prob=0.85):
    """A random well-formed map: cameras on a jittered circle looking at the
    origin, points back-projected from random pixels of a random home frame,
    observations wherever the ground-truth projection lands in-image."""
    t = int(rng.integers(2, t_max + 1))
    n = int(rng.integers(4, n_max + 1))

    poses = []
    for j in range(t):
        th = 2.0 * np.pi * j / t + rng.normal(0, 0.1)
        center = np.array([5.0 * np.cos(th), 5.0 * np.sin(th), rng.normal(0, 0.3)])
        fwd = -center / np.linalg.norm(center)
        d = np.array([0.0, 0.0, -1.0])
        d = d - fwd * (d @ fwd)
        d /= np.linalg.norm(d)
        r = np.cross(d, fwd)
        R_cw = np.column_stack([r, d, fwd])
        # small random in-plane twist keeps rotations generic
        R_cw = R_cw @ rotvec_to_matrix(rng.normal(0, 0.05, 3))
        R = R_cw.T
        poses.append(SE3(R, -R @ center))

    pts = []
    for i in range(n):
        home = int(rng.integers(0, t))
        u = rng.uniform(0.2 * WIDTH, 0.8 * WIDTH)
        v = rng.uniform(0.2 * HEIGHT, 0.8 * HEIGHT)
        z = rng.uniform(2.0, 8.0)
        p_cam = np.array([(u - CAM.cx) / CAM.fx * z, (v - CAM.cy) / CAM.fy * z, z])
        inv = poses[home].inverse()
        pts.append(inv.apply(p_cam))

    observations = []
    for i, p in enumerate(pts):
        if rng.random() < orphan_prob:
            continue
        rows = []
        for j in range(t):
            pc = poses[j].apply(p)
            if pc[2] < 0.5:
                continue
            u = CAM.fx * pc[0] / pc[2] + CAM.cx
            v = CAM.fy * pc[1] / pc[2] + CAM.cy
            ur = CAM.fx * (pc[0] - CAM.baseline) / pc[2] + CAM.cx
            if not (0 <= u <= WIDTH and 0 <= ur <= WIDTH and 0 <= v <= HEIGHT):
                continue
            if rng.random() > keep_prob and rows:
                continue
            kind = "mono" if rng.random() < mono_prob else "stereo"
            meas = np.array([u, v]) if kind == "mono" else np.array([u, v, ur])
            sigma = float(rng.choice([0.8, 1.0, 1.5]))
            rows.append(Observation(i + 1, j + 1, kind, meas + rng.normal(0, 0.5, meas.shape), sigma))
        observations.extend(rows)
    if not observations:
        return random_small_map(rng, t_max, n_max, mono_prob, loop_frames, orphan_prob, keep_prob)

    n_loop = int(rng.integers(1, max(2, t // 2 + 1))) if loop_frames else 0
    loop_set = set(range(t - n_loop + 1, t + 1)) if n_loop else set()
    keyframes = [Keyframe(j, j, poses[j - 1], is_loop_frame=j in loop_set) for j in range(1, t + 1)]
    points = [MapPoint(i + 1, pts[i]) for i in range(n)]
    return SlamMap(CAM, keyframes, points, observations)


def small_problem(rng, budget=None, **kwargs):
    m = random_small_map(rng, **kwargs)
    k = budget if budget is not None else int(rng.integers(1, m.n_points + 1))
    return SelectionProblem(m, min(k, m.n_points))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
