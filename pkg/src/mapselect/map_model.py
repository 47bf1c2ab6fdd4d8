"""SLAM map data model, co-visibility queries and selection heuristics.

Frames carry an external id plus a contiguous temporal index 1..t; all
algorithms address frames by the temporal index so that matrix blocks stay
dense.  Maps are immutable after load/validation and safe to share between
concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UnknownIdError
from .geometry import (
    DEPTH_FLOOR,
    CameraIntrinsics,
    SE3,
    transform_point,
)


@dataclass(frozen=True)
class MapPoint:
    id: int
    position: np.ndarray  # world frame, metres

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class Keyframe:
    id: int
    index: int  # temporal order, 1..t
    pose: SE3   # world -> camera
    is_loop_frame: bool = False


@dataclass(frozen=True)
class Observation:
    point_id: int
    frame_id: int
    kind: str  # "stereo" | "mono"
    measurement: np.ndarray  # stereo: (u_left, v, u_right); mono: (u, v)
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "measurement", np.asarray(self.measurement, dtype=float))


class _Tables:
    """Columnar caches built once per map: index maps plus flat observation
    arrays sorted by (point index, frame index)."""

    def __init__(self, m: "SlamMap"):
        self.point_ids = np.array([p.id for p in m.points], dtype=np.int64)
        self.point_index = {p.id: i for i, p in enumerate(m.points)}
        self.frame_ids = [k.id for k in m.keyframes]
        # temporal index -> keyframe
        self.by_index = {k.index: k for k in m.keyframes}
        self.frame_id_to_index = {k.id: k.index for k in m.keyframes}
        self.positions = (
            np.stack([p.position for p in m.points])
            if m.points
            else np.zeros((0, 3))
        )

        n_obs = len(m.observations)
        pt = np.empty(n_obs, dtype=np.int64)   # point array index
        fr = np.empty(n_obs, dtype=np.int64)   # temporal frame index (1-based)
        stereo = np.empty(n_obs, dtype=bool)
        meas = np.zeros((n_obs, 3))
        sigma = np.empty(n_obs)
        for r, o in enumerate(m.observations):
            pt[r] = self.point_index[o.point_id]
            fr[r] = self.frame_id_to_index[o.frame_id]
            stereo[r] = o.kind == "stereo"
            meas[r, : o.measurement.shape[0]] = o.measurement
            sigma[r] = o.sigma
        order = np.lexsort((fr, pt))
        self.obs_point = pt[order]
        self.obs_frame = fr[order]
        self.obs_stereo = stereo[order]
        self.obs_meas = meas[order]
        self.obs_sigma = sigma[order]
        # CSR over points: rows for point i are obs_start[i]:obs_start[i+1]
        self.obs_start = np.zeros(len(m.points) + 1, dtype=np.int64)
        np.add.at(self.obs_start[1:], self.obs_point, 1)
        np.cumsum(self.obs_start, out=self.obs_start)
        # per temporal frame: set of observed point array indices
        self.frame_points = {k.index: set() for k in m.keyframes}
        for r in range(n_obs):
            self.frame_points[int(self.obs_frame[r])].add(int(self.obs_point[r]))

        # dense id -> array-index lookup when ids are compact enough
        self._id_lookup = None
        if len(self.point_ids) and self.point_ids.min() >= 0:
            span = int(self.point_ids.max()) + 1
            if span <= 8 * len(self.point_ids) + 1024:
                self._id_lookup = np.full(span, -1, dtype=np.int64)
                self._id_lookup[self.point_ids] = np.arange(len(self.point_ids))

    def point_indices(self, ids):
        """Vectorized point id -> array index mapping."""
        ids = np.asarray(ids, dtype=np.int64)
        if self._id_lookup is not None:
            out = self._id_lookup[ids]
        else:
            out = np.fromiter(
                (self.point_index[int(p)] for p in ids), dtype=np.int64, count=len(ids)
            )
        return out

    def rows_of_point(self, pi: int) -> slice:
        return slice(int(self.obs_start[pi]), int(self.obs_start[pi + 1]))


@dataclass
class SlamMap:
    """A keyframe map: camera, keyframes, map points and pixel observations."""

    camera: CameraIntrinsics
    keyframes: list
    points: list
    observations: list
    _tables: _Tables = field(default=None, repr=False, compare=False)

    @property
    def tables(self) -> _Tables:
        if self._tables is None:
            self._tables = _Tables(self)
        return self._tables

    @property
    def n_frames(self) -> int:
        return len(self.keyframes)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def point_by_id(self, point_id: int) -> MapPoint:
        idx = self.tables.point_index.get(point_id)
        if idx is None:
            raise UnknownIdError("unknown point id %r" % (point_id,))
        return self.points[idx]

    def frame_by_index(self, index: int) -> Keyframe:
        kf = self.tables.by_index.get(index)
        if kf is None:
            raise UnknownIdError("unknown frame index %r" % (index,))
        return kf

    def pose_arrays(self):
        """Stacked rotations (t,3,3) and translations (t,3) in temporal order."""
        ks = sorted(self.keyframes, key=lambda k: k.index)
        R = np.stack([k.pose.rotation for k in ks])
        t = np.stack([k.pose.translation for k in ks])
        return R, t


def covisible_frames(m: SlamMap, point_id: int):
    """Temporal indices of the frames observing `point_id`, ascending."""
    tb = m.tables
    pi = tb.point_index.get(point_id)
    if pi is None:
        raise UnknownIdError("unknown point id %r" % (point_id,))
    return sorted(int(f) for f in tb.obs_frame[tb.rows_of_point(pi)])


def covisibility_count(m: SlamMap, frame_a: int, frame_b: int) -> int:
    """Number of map points observed in both temporal frames."""
    tb = m.tables
    for f in (frame_a, frame_b):
        if f not in tb.frame_points:
            raise UnknownIdError("unknown frame index %r" % (f,))
    return len(tb.frame_points[frame_a] & tb.frame_points[frame_b])


def pairing(m: SlamMap):
    """Pair every frame j >= 2 with the earlier frame sharing the most points.

    Ties break towards the smallest earlier index; frames with zero shared
    points with every predecessor map to None.  Frame 1 has no entry.
    """
    tb = m.tables
    t = m.n_frames
    pairs = {}
    for j in range(2, t + 1):
        best, best_count = None, 0
        pts_j = tb.frame_points[j]
        for jp in range(1, j):
            c = len(pts_j & tb.frame_points[jp])
            if c > best_count:
                best, best_count = jp, c
        pairs[j] = best
    return pairs


def forced_set(m: SlamMap):
    """Ids of all points observed in the frame with the largest temporal index."""
    if m.n_frames == 0:
        return set()
    tb = m.tables
    last = max(tb.frame_points)
    return {int(tb.point_ids[pi]) for pi in tb.frame_points[last]}


def validate(m: SlamMap):
    """Return a list of invariant-violation diagnostics (empty iff well formed)."""
    diags = []
    point_ids = set()
    position_by_id = {}
    for p in m.points:
        if p.id in point_ids:
            diags.append("duplicate point id %d" % p.id)
        point_ids.add(p.id)
        position_by_id[p.id] = p.position
        if not np.all(np.isfinite(p.position)):
            diags.append("point %d has non-finite position" % p.id)

    frame_ids = set()
    indices = []
    for k in m.keyframes:
        if k.id in frame_ids:
            diags.append("duplicate frame id %d" % k.id)
        frame_ids.add(k.id)
        indices.append(k.index)
        if not k.pose.is_valid():
            diags.append("frame %d pose rotation not orthonormal" % k.id)
    if indices and sorted(indices) != list(range(1, len(indices) + 1)):
        diags.append("frame indices are not a contiguous 1..t ordering")

    seen = set()
    frame_by_id = {k.id: k for k in m.keyframes}
    for o in m.observations:
        if o.point_id not in point_ids:
            diags.append("observation references missing point %r" % (o.point_id,))
            continue
        if o.frame_id not in frame_ids:
            diags.append("observation references missing frame %r" % (o.frame_id,))
            continue
        key = (o.point_id, o.frame_id)
        if key in seen:
            diags.append("duplicate observation of point %d in frame %d" % key)
        seen.add(key)
        if not (o.sigma > 0):
            diags.append("observation %s has non-positive sigma" % (key,))
        if not np.all(np.isfinite(o.measurement)):
            diags.append("observation %s has non-finite measurement" % (key,))
        expected = 3 if o.kind == "stereo" else 2
        if o.kind not in ("stereo", "mono"):
            diags.append("observation %s has unknown kind %r" % (key, o.kind))
        elif o.measurement.shape[0] != expected:
            diags.append("observation %s has wrong measurement arity" % (key,))
        kf = frame_by_id.get(o.frame_id)
        if kf is not None and kf.pose.is_valid():
            pos = position_by_id.get(o.point_id)
            if pos is None:
                continue
            depth = transform_point(kf.pose, pos)[2]
            if depth <= DEPTH_FLOOR:
                diags.append(
                    "observation %s has depth %.3g below the floor" % (key, depth)
                )
    return diags


@dataclass(frozen=True)
class SelectionProblem:
    """Immutable input to every selector: a map, a budget and noise priors."""

    map: SlamMap
    budget: int
    forced: frozenset = frozenset()
    prior_epsilon: float = 1e-4
    noise_scale: float = 1.0
    cache_contributions: bool = True

    def __post_init__(self):
        object.__setattr__(self, "forced", frozenset(self.forced))
        if not self.prior_epsilon > 0:
            raise DataError("prior_epsilon must be positive")
        if not self.noise_scale > 0:
            raise DataError("noise_scale must be positive")
        n = self.map.n_points
        if not (len(self.forced) <= self.budget <= max(n, 1)):
            from .errors import BudgetError

            raise BudgetError(
                "budget %d violates |forced|=%d <= k <= n=%d"
                % (self.budget, len(self.forced), n)
            )
        missing = [pid for pid in self.forced if pid not in self.map.tables.point_index]
        if missing:
            raise UnknownIdError("forced set references unknown points %s" % missing)
