"""Utility functions over map-point subsets as incremental state machines.

Every state exposes value / marginal_gain / commit and is normalized so
that the empty selection has value 0.  Gain probes are read-only and may
run concurrently against a frozen state; commit mutates and must be
serialized with respect to probes (single committer).

Kinds:
  slam      log-det information gain of the joint trajectory posterior,
            maintained with low-rank Cholesky updates on a 6t x 6t factor
  local     per-frame log-det gains treating each pose as an independent
            localisation problem (map points assumed perfectly known)
  odom      per-frame-pair conditional log-det gains over co-visible stereo
            points (a lower bound on the slam information gain)
  cover     saturated coverage of the loop-closure frames
  combined  odom + cover, each normalized by its full-map value
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import linalg
from .errors import (
    ConfigurationError,
    DegenerateProblemError,
    DuplicateSelectionError,
    EmptyProblemError,
    UnknownIdError,
)
from .geometry import batch_camera_points, batch_jacobians
from .map_model import SelectionProblem, pairing

DEFAULT_B_COVER = 300


@dataclass(frozen=True)
class GainResult:
    point_id: int
    gain: float


class _ObsData:
    """Per-observation Jacobian blocks shared by the utility states.

    With cache_contributions on (the default) the stacked blocks are
    precomputed once, costing O(n |X_i|) memory; off, rows are recomputed
    from the map arrays at every probe.
    """

    def __init__(self, problem: SelectionProblem):
        m = problem.map
        tb = m.tables
        self.tb = tb
        self.cam = m.camera
        self.cached = problem.cache_contributions
        self.w = 1.0 / (tb.obs_sigma * problem.noise_scale) ** 2
        self.R, self.tvec = m.pose_arrays() if m.n_frames else (np.zeros((0, 3, 3)), np.zeros((0, 3)))
        self.positions = tb.positions
        self._A3 = self._M3 = self._E = None
        if self.cached:
            self._A3, self._M3 = self._compute_jac(np.arange(len(tb.obs_frame)))
            self._E = self._pose_info_from(self._A3, self.w)

    def _compute_jac(self, rows):
        tb = self.tb
        fidx = tb.obs_frame[rows] - 1
        p_cam = batch_camera_points(self.R[fidx], self.tvec[fidx], self.positions[tb.obs_point[rows]])
        A, M = batch_jacobians(self.cam, self.R[fidx], p_cam)
        mono = ~tb.obs_stereo[rows]
        A[mono, 2, :] = 0.0
        M[mono, 2, :] = 0.0
        return A, M

    @staticmethod
    def _pose_info_from(A, w):
        return np.einsum("nri,nrj->nij", A, A) * w[:, None, None]

    def jac(self, rows):
        if self.cached:
            return self._A3[rows], self._M3[rows]
        return self._compute_jac(rows)

    def pose_info(self, rows):
        """A^T Omega A blocks (len(rows), 6, 6)."""
        if self.cached:
            return self._E[rows]
        A, _ = self._compute_jac(rows)
        return self._pose_info_from(A, self.w[rows])


class UtilityState:
    """Base selection state; subclasses fill in the incremental machinery."""

    kind = "base"

    def __init__(self, problem: SelectionProblem):
        if problem.map.n_frames == 0:
            raise EmptyProblemError("map has no keyframes")
        self.problem = problem
        self.selected = set()
        self._value = 0.0

    # -- public contract ---------------------------------------------------

    def value(self) -> float:
        return self._value

    def marginal_gain(self, point_id: int) -> GainResult:
        """f(S + {i}) - f(S) without mutating the state."""
        self._check_candidate(point_id)
        g = float(self.gains(np.array([point_id]))[0])
        return GainResult(point_id, g)

    def commit(self, point_id: int) -> float:
        """Add the point to the selection; returns the updated value."""
        self._check_candidate(point_id)
        self._apply(point_id)
        self.selected.add(point_id)
        return self._value

    def gains(self, point_ids) -> np.ndarray:
        """Vectorized marginal gains for unselected candidate ids."""
        raise NotImplementedError

    def stamp(self, point_id: int) -> int:
        """Monotone token that changes whenever the point's gain may change."""
        return len(self.selected)

    def value_of(self, point_ids) -> float:
        """Utility of an arbitrary id set, computed without touching state."""
        raise NotImplementedError

    # -- helpers -----------------------------------------------------------

    def _check_candidate(self, point_id):
        if point_id not in self.problem.map.tables.point_index:
            raise UnknownIdError("unknown point id %r" % (point_id,))
        if point_id in self.selected:
            raise DuplicateSelectionError("point %r already selected" % (point_id,))

    def _apply(self, point_id):
        raise NotImplementedError

    def _indices(self, point_ids):
        return self.problem.map.tables.point_indices(point_ids)

    def stamps(self, point_ids) -> np.ndarray:
        """Vectorized stamp(); overridden where a faster path exists."""
        return np.array([self.stamp(int(p)) for p in point_ids], dtype=np.int64)


def _gather_rows(starts, idxs):
    """Row indices of a CSR layout for the given group indices, plus the
    ownership array mapping each row back to its position in idxs."""
    counts = starts[idxs + 1] - starts[idxs]
    total = int(counts.sum())
    own = np.repeat(np.arange(len(idxs)), counts)
    rows = np.repeat(starts[idxs], counts) + (np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts))
    return rows, own, counts


def _batch_logdet(mats):
    sign, ld = np.linalg.slogdet(mats)
    return ld


@njit(cache=True)
def _chol_logdet6(M):
    """In-place Cholesky log-determinant of an SPD 6x6 matrix."""
    acc = 0.0
    for j in range(6):
        d = M[j, j]
        for k in range(j):
            d -= M[j, k] * M[j, k]
        d = math.sqrt(d)
        M[j, j] = d
        acc += math.log(d)
        for i in range(j + 1, 6):
            s = M[i, j]
            for k in range(j):
                s -= M[i, k] * M[j, k]
            M[i, j] = s / d
    return 2.0 * acc


@njit(cache=True)
def _seg_logdet_gains(starts, slots, contribs, lam, slot_ld, idxs, out):
    """Marginal gains for a CSR incidence layout: for each group, sum over
    its rows of logdet(lam[slot] + contribs[row]) - slot_ld[slot]."""
    M = np.empty((6, 6))
    for g in range(idxs.shape[0]):
        pi = idxs[g]
        acc = 0.0
        for r in range(starts[pi], starts[pi + 1]):
            s = slots[r]
            for a in range(6):
                for b in range(6):
                    M[a, b] = lam[s, a, b] + contribs[r, a, b]
            acc += _chol_logdet6(M) - slot_ld[s]
        out[g] = acc


@njit(cache=True)
def _slot_logdets(lam, slots, out):
    for i in range(slots.shape[0]):
        M = lam[slots[i]].copy()
        out[i] = _chol_logdet6(M)


@njit(cache=True)
def _seg_stamps(starts, slots, versions, idxs, out):
    for g in range(idxs.shape[0]):
        pi = idxs[g]
        acc = 0
        for r in range(starts[pi], starts[pi + 1]):
            acc += versions[slots[r]]
        out[g] = acc


def _csr_stamps(starts, slot_of_row, versions, idxs):
    """Per-group sums of slot versions for a CSR incidence layout."""
    out = np.empty(len(idxs), dtype=np.int64)
    _seg_stamps(starts, slot_of_row, versions, idxs, out)
    return out


class LocalUtilityState(UtilityState):
    """Sum over frames of log-det pose information, points taken as known."""

    kind = "local"

    def __init__(self, problem, obs=None):
        super().__init__(problem)
        self.obs = obs or _ObsData(problem)
        tb = self.obs.tb
        t = problem.map.n_frames
        eps = problem.prior_epsilon
        self._lam = np.tile(eps * np.eye(6), (t, 1, 1))
        self._frame_ld = np.full(t, 6.0 * math.log(eps))
        self._versions = np.zeros(t, dtype=np.int64)
        self._starts = tb.obs_start
        self._obs_frame0 = tb.obs_frame - 1

    def gains(self, point_ids):
        idxs = self._indices(point_ids)
        if self.obs.cached:
            out = np.empty(len(idxs))
            _seg_logdet_gains(
                self._starts, self._obs_frame0, self.obs._E, self._lam, self._frame_ld, idxs, out
            )
            return out
        rows, own, _ = _gather_rows(self._starts, idxs)
        if len(rows) == 0:
            return np.zeros(len(point_ids))
        f0 = self._obs_frame0[rows]
        ld = _batch_logdet(self._lam[f0] + self.obs.pose_info(rows))
        return np.bincount(own, weights=ld - self._frame_ld[f0], minlength=len(point_ids))

    def _apply(self, point_id):
        tb = self.obs.tb
        pi = tb.point_index[point_id]
        rows = np.arange(self._starts[pi], self._starts[pi + 1])
        if len(rows) == 0:
            return
        f0 = self._obs_frame0[rows]
        self._lam[f0] += self.obs.pose_info(rows)
        if self.obs.cached:
            new_ld = np.empty(len(rows))
            _slot_logdets(self._lam, f0, new_ld)
        else:
            new_ld = _batch_logdet(self._lam[f0])
        self._value += float(np.sum(new_ld - self._frame_ld[f0]))
        self._frame_ld[f0] = new_ld
        self._versions[f0] += 1

    def stamp(self, point_id):
        pi = self.obs.tb.point_index[point_id]
        rows = slice(int(self._starts[pi]), int(self._starts[pi + 1]))
        return int(self._versions[self._obs_frame0[rows]].sum())

    def stamps(self, point_ids):
        return _csr_stamps(self._starts, self._obs_frame0, self._versions, self._indices(point_ids))

    def value_of(self, point_ids):
        idxs = self._indices(list(point_ids))
        if not len(idxs):
            return 0.0
        t = self.problem.map.n_frames
        eps = self.problem.prior_epsilon
        lam = np.tile(eps * np.eye(6), (t, 1, 1))
        if len(idxs):
            rows, _, _ = _gather_rows(self._starts, np.sort(idxs))
            if len(rows):
                np.add.at(lam, self._obs_frame0[rows], self.obs.pose_info(rows))
        return float(np.sum(_batch_logdet(lam))) - 6.0 * t * math.log(eps)


class OdomUtilityState(UtilityState):
    """Sum over paired frames of the conditional pose log-det, built from
    stereo points co-visible in both frames of each pair."""

    kind = "odom"

    def __init__(self, problem, obs=None):
        super().__init__(problem)
        self.obs = obs or _ObsData(problem)
        tb = self.obs.tb
        eps = problem.prior_epsilon
        self._pairs = [(j, pj) for j, pj in sorted(pairing(problem.map).items()) if pj is not None]
        n_pairs = len(self._pairs)

        inc_pair, inc_point, inc_rowj, inc_rowp = self._build_incidence(tb)
        order = np.lexsort((inc_pair, inc_point))
        self._inc_pair = inc_pair[order]
        self._inc_point = inc_point[order]
        self._inc_rowj = inc_rowj[order]
        self._inc_rowp = inc_rowp[order]
        n = self.problem.map.n_points
        self._inc_starts = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self._inc_starts[1:], self._inc_point, 1)
        np.cumsum(self._inc_starts, out=self._inc_starts)

        self._G = None
        if self.obs.cached:
            self._G = self._contribs(np.arange(len(self._inc_pair)))
        self._M = np.tile(eps * np.eye(6), (max(n_pairs, 1), 1, 1))[:n_pairs]
        self._pair_ld = np.full(n_pairs, 6.0 * math.log(eps))
        self._versions = np.zeros(n_pairs, dtype=np.int64)

    def _build_incidence(self, tb):
        # observation row lookup by (point index, temporal frame)
        row_of = {}
        for r in range(len(tb.obs_frame)):
            if tb.obs_stereo[r]:
                row_of[(int(tb.obs_point[r]), int(tb.obs_frame[r]))] = r
        stereo_pts = {}
        for j, pts in tb.frame_points.items():
            stereo_pts[j] = np.array(
                sorted(p for p in pts if (p, j) in row_of), dtype=np.int64
            )
        pair_l, point_l, rowj_l, rowp_l = [], [], [], []
        for s, (j, pj) in enumerate(self._pairs):
            shared = np.intersect1d(stereo_pts[j], stereo_pts[pj], assume_unique=True)
            for p in shared:
                pair_l.append(s)
                point_l.append(int(p))
                rowj_l.append(row_of[(int(p), j)])
                rowp_l.append(row_of[(int(p), pj)])
        return (
            np.array(pair_l, dtype=np.int64),
            np.array(point_l, dtype=np.int64),
            np.array(rowj_l, dtype=np.int64),
            np.array(rowp_l, dtype=np.int64),
        )

    def _contribs(self, inc_rows):
        """Conditional information added to the moving-frame block of each
        incidence: C - B (P + damping)^-1 B^T with the point block summed
        over both frames of the pair."""
        if self._G is not None:
            return self._G[inc_rows]
        if len(inc_rows) == 0:
            return np.zeros((0, 6, 6))
        rj = self._inc_rowj[inc_rows]
        rp = self._inc_rowp[inc_rows]
        Aj, Mj = self.obs.jac(rj)
        _, Mp = self.obs.jac(rp)
        wj = self.obs.w[rj][:, None, None]
        wp = self.obs.w[rp][:, None, None]
        C = np.einsum("nri,nrj->nij", Aj, Aj) * wj
        B = np.einsum("nri,nrj->nij", Aj, Mj) * wj
        P = np.einsum("nri,nrj->nij", Mj, Mj) * wj + np.einsum("nri,nrj->nij", Mp, Mp) * wp
        damp = linalg.SCHUR_DAMPING_SCALE * np.trace(P, axis1=1, axis2=2) / 3.0
        P = P + damp[:, None, None] * np.eye(3)
        X = np.linalg.solve(P, np.transpose(B, (0, 2, 1)))
        return C - B @ X

    def gains(self, point_ids):
        idxs = self._indices(point_ids)
        if self._G is not None:
            out = np.empty(len(idxs))
            _seg_logdet_gains(
                self._inc_starts, self._inc_pair, self._G, self._M, self._pair_ld, idxs, out
            )
            return out
        rows, own, _ = _gather_rows(self._inc_starts, idxs)
        if len(rows) == 0:
            return np.zeros(len(point_ids))
        slots = self._inc_pair[rows]
        ld = _batch_logdet(self._M[slots] + self._contribs(rows))
        return np.bincount(own, weights=ld - self._pair_ld[slots], minlength=len(point_ids))

    def _apply(self, point_id):
        pi = self.obs.tb.point_index[point_id]
        rows = np.arange(self._inc_starts[pi], self._inc_starts[pi + 1])
        if len(rows) == 0:
            return
        slots = self._inc_pair[rows]
        self._M[slots] += self._contribs(rows)
        if self._G is not None:
            new_ld = np.empty(len(rows))
            _slot_logdets(self._M, slots, new_ld)
        else:
            new_ld = _batch_logdet(self._M[slots])
        self._value += float(np.sum(new_ld - self._pair_ld[slots]))
        self._pair_ld[slots] = new_ld
        self._versions[slots] += 1

    def stamp(self, point_id):
        pi = self.obs.tb.point_index[point_id]
        rows = slice(int(self._inc_starts[pi]), int(self._inc_starts[pi + 1]))
        return int(self._versions[self._inc_pair[rows]].sum())

    def stamps(self, point_ids):
        return _csr_stamps(self._inc_starts, self._inc_pair, self._versions, self._indices(point_ids))

    def value_of(self, point_ids):
        idxs = self._indices(list(point_ids))
        if not len(idxs):
            return 0.0
        eps = self.problem.prior_epsilon
        n_pairs = len(self._pairs)
        M = np.tile(eps * np.eye(6), (max(n_pairs, 1), 1, 1))[:n_pairs]
        if len(idxs):
            rows, _, _ = _gather_rows(self._inc_starts, np.sort(idxs))
            if len(rows):
                np.add.at(M, self._inc_pair[rows], self._contribs(rows))
        return float(np.sum(_batch_logdet(M))) - 6.0 * n_pairs * math.log(eps)


class CoverUtilityState(UtilityState):
    """Saturated coverage of the loop-closure frames, averaged over them."""

    kind = "cover"

    def __init__(self, problem, b_cover=DEFAULT_B_COVER):
        super().__init__(problem)
        if not b_cover > 0:
            raise ConfigurationError("b_cover must be positive")
        tb = problem.map.tables
        loops = sorted(
            k.index for k in problem.map.keyframes if k.is_loop_frame
        )
        if not loops:
            raise ConfigurationError("coverage utility needs a non-empty loop-frame set")
        self.b_cover = int(b_cover)
        self._loops = loops
        inc_point, inc_slot = [], []
        for s, j in enumerate(loops):
            for p in tb.frame_points[j]:
                inc_point.append(p)
                inc_slot.append(s)
        inc_point = np.array(inc_point, dtype=np.int64)
        inc_slot = np.array(inc_slot, dtype=np.int64)
        order = np.lexsort((inc_slot, inc_point))
        self._inc_point = inc_point[order]
        self._inc_slot = inc_slot[order]
        n = problem.map.n_points
        self._inc_starts = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self._inc_starts[1:], self._inc_point, 1)
        np.cumsum(self._inc_starts, out=self._inc_starts)
        self._counts = np.zeros(len(loops), dtype=np.int64)
        self._versions = np.zeros(len(loops), dtype=np.int64)

    def gains(self, point_ids):
        idxs = self._indices(point_ids)
        rows, own, _ = _gather_rows(self._inc_starts, idxs)
        if len(rows) == 0:
            return np.zeros(len(point_ids))
        unsat = (self._counts[self._inc_slot[rows]] < self.b_cover).astype(float)
        return np.bincount(own, weights=unsat, minlength=len(point_ids)) / len(self._loops)

    def _apply(self, point_id):
        pi = self.problem.map.tables.point_index[point_id]
        rows = slice(int(self._inc_starts[pi]), int(self._inc_starts[pi + 1]))
        slots = self._inc_slot[rows]
        unsat = self._counts[slots] < self.b_cover
        self._value += float(np.sum(unsat)) / len(self._loops)
        self._counts[slots] += 1
        crossed = slots[self._counts[slots] == self.b_cover]
        self._versions[crossed] += 1

    def stamp(self, point_id):
        pi = self.problem.map.tables.point_index[point_id]
        rows = slice(int(self._inc_starts[pi]), int(self._inc_starts[pi + 1]))
        return int(self._versions[self._inc_slot[rows]].sum())

    def stamps(self, point_ids):
        return _csr_stamps(self._inc_starts, self._inc_slot, self._versions, self._indices(point_ids))

    def value_of(self, point_ids):
        idxs = self._indices(list(point_ids))
        counts = np.zeros(len(self._loops), dtype=np.int64)
        if len(idxs):
            rows, _, _ = _gather_rows(self._inc_starts, np.sort(idxs))
            np.add.at(counts, self._inc_slot[rows], 1)
        return float(np.sum(np.minimum(counts, self.b_cover))) / len(self._loops)


class SlamUtilityState(UtilityState):
    """Log-det information gain of the full trajectory posterior.

    A Cholesky factor of the 6t x 6t pose information is maintained across
    commits; gain probes use determinant-lemma solves against the frozen
    factor and never mutate it.  A dense shadow matrix backs transparent
    refactorization if a downdate breaks down.
    """

    kind = "slam"

    def __init__(self, problem, obs=None):
        super().__init__(problem)
        t = problem.map.n_frames
        self.t = t
        eps = problem.prior_epsilon
        d = 6 * t
        self._matrix = eps * np.eye(d)
        self._factor = linalg.CholFactor(math.sqrt(eps) * np.eye(d))
        self._c0 = d * math.log(eps)
        self._commits = 0
        self._cache = {} if problem.cache_contributions else None
        self._dense_cache = {}

    def _factors(self, point_id):
        """Dense (6t, k) update / (6t, 3) downdate factors, or None for orphans."""
        if self._cache is not None and point_id in self._cache:
            return self._cache[point_id]
        tb = self.problem.map.tables
        rows = tb.rows_of_point(tb.point_index[point_id])
        if rows.stop == rows.start:
            out = None
        else:
            contribution = linalg.point_joint_info(self.problem, point_id)
            out = linalg.marginal_factors(contribution, self.t)
        if self._cache is not None:
            self._cache[point_id] = out
        return out

    def gains(self, point_ids):
        out = np.zeros(len(point_ids))
        for i, pid in enumerate(point_ids):
            fac = self._factors(pid)
            if fac is not None:
                out[i] = linalg.update_gain(self._factor, *fac)
        return out

    def _apply(self, point_id):
        fac = self._factors(point_id)
        self._commits += 1
        if fac is None:
            return
        U, D = fac
        self._matrix += U @ U.T - D @ D.T
        old = self._factor.logdet
        try:
            linalg.apply_low_rank(self._factor, U, D)
        except linalg.NumericalBreakdownError:
            self._factor = linalg.chol_init(self._matrix)
        self._value += self._factor.logdet - old

    def stamp(self, point_id):
        return self._commits

    def stamps(self, point_ids):
        return np.full(len(point_ids), self._commits, dtype=np.int64)

    def value_of(self, point_ids):
        tb = self.problem.map.tables
        A = self.problem.prior_epsilon * np.eye(6 * self.t)
        for pid in point_ids:
            dm = self._dense_cache.get(pid)
            if dm is None:
                rows = tb.rows_of_point(tb.point_index[pid])
                if rows.stop == rows.start:
                    dm = 0.0
                else:
                    dm = linalg.dense_marginal(
                        linalg.point_joint_info(self.problem, pid), self.t
                    )
                self._dense_cache[pid] = dm
            A = A + dm
        return linalg.logdet(A) - self._c0


class CombinedUtilityState(UtilityState):
    """Odometry plus loop coverage, each normalized by its full-map value."""

    kind = "combined"

    def __init__(self, problem, b_cover=DEFAULT_B_COVER, obs=None):
        super().__init__(problem)
        self._odom = OdomUtilityState(problem, obs=obs)
        self._cover = CoverUtilityState(problem, b_cover=b_cover)
        all_ids = [int(p) for p in problem.map.tables.point_ids]
        self._norm_odom = self._odom.value_of(all_ids)
        self._norm_cover = self._cover.value_of(all_ids)
        if not self._norm_odom > 0:
            raise DegenerateProblemError("full-map odometry utility is zero")
        if not self._norm_cover > 0:
            raise DegenerateProblemError("full-map coverage utility is zero")

    def gains(self, point_ids):
        return (
            self._odom.gains(point_ids) / self._norm_odom
            + self._cover.gains(point_ids) / self._norm_cover
        )

    def _apply(self, point_id):
        self._odom.commit(point_id)
        self._cover.commit(point_id)
        self._value = (
            self._odom.value() / self._norm_odom
            + self._cover.value() / self._norm_cover
        )

    def stamp(self, point_id):
        return self._odom.stamp(point_id) + self._cover.stamp(point_id)

    def stamps(self, point_ids):
        return self._odom.stamps(point_ids) + self._cover.stamps(point_ids)

    def value_of(self, point_ids):
        return (
            self._odom.value_of(point_ids) / self._norm_odom
            + self._cover.value_of(point_ids) / self._norm_cover
        )


def make_slam_state(problem) -> SlamUtilityState:
    return SlamUtilityState(problem)


def make_local_state(problem) -> LocalUtilityState:
    return LocalUtilityState(problem)


def make_odom_state(problem) -> OdomUtilityState:
    return OdomUtilityState(problem)


def make_cover_state(problem, b_cover=DEFAULT_B_COVER) -> CoverUtilityState:
    return CoverUtilityState(problem, b_cover)


def make_combined_state(problem, b_cover=DEFAULT_B_COVER) -> CombinedUtilityState:
    return CombinedUtilityState(problem, b_cover)


UTILITY_KINDS = ("slam", "local", "odom", "cover", "combined")


def make_state(problem, kind, b_cover=DEFAULT_B_COVER) -> UtilityState:
    """Factory over all utility kinds."""
    if kind == "slam":
        return make_slam_state(problem)
    if kind == "local":
        return make_local_state(problem)
    if kind == "odom":
        return make_odom_state(problem)
    if kind == "cover":
        return make_cover_state(problem, b_cover)
    if kind == "combined":
        return make_combined_state(problem, b_cover)
    raise ConfigurationError("unknown utility kind %r" % (kind,))
