"""Per-point information assembly, Schur marginalization and Cholesky updates.

The pose information contributed by one map point is kept in two low-rank
factors: an update factor U built from the scaled measurement Jacobians
(C = U U^T) and a downdate factor D carrying the Schur correction
(B P^-1 B^T = D D^T), so the marginal is U U^T - D D^T.  Incremental
log-determinants are maintained with rank-1 Cholesky updates and downdates.

CholFactor is single-owner mutable: gain probes use triangular solves
against a frozen factor and never mutate it; commits must be serialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .errors import (
    DataError,
    FactorizationError,
    NumericalBreakdownError,
    RankDeficiencyError,
)
from .geometry import batch_camera_points, batch_jacobians

# Relative damping added to a point block before inversion; points observed
# only monocularly from a single frame make P singular otherwise.
SCHUR_DAMPING_SCALE = 1e-9


def default_damping(P) -> float:
    return SCHUR_DAMPING_SCALE * float(np.trace(P)) / 3.0


class BlockSymMatrix:
    """Symmetric matrix stored as a dict of dense blocks on a uniform grid."""

    def __init__(self, n_blocks: int, block_size: int):
        self.n_blocks = n_blocks
        self.block_size = block_size
        self.blocks = {}  # (a, b) with a <= b -> ndarray

    @property
    def dimension(self) -> int:
        return self.n_blocks * self.block_size

    def add_block(self, a: int, b: int, block):
        block = np.asarray(block, dtype=float)
        if a > b:
            a, b = b, a
            block = block.T
        key = (a, b)
        if key in self.blocks:
            self.blocks[key] = self.blocks[key] + block
        else:
            self.blocks[key] = block.copy()

    def to_dense(self):
        s = self.block_size
        M = np.zeros((self.dimension, self.dimension))
        for (a, b), blk in self.blocks.items():
            M[a * s : (a + 1) * s, b * s : (b + 1) * s] += blk
            if a != b:
                M[b * s : (b + 1) * s, a * s : (a + 1) * s] += blk.T
        return M


@dataclass(frozen=True)
class PointContribution:
    """Information blocks of the joint (poses, one point) problem.

    frames holds the ascending temporal indices observing the point; row f of
    C/B/U corresponds to frames[f].  C[f] = U[f] @ U[f].T exactly.
    """

    point_id: int
    frames: np.ndarray  # (F,) temporal indices
    C: np.ndarray       # (F, 6, 6) pose blocks
    B: np.ndarray       # (F, 6, 3) pose-point coupling
    P: np.ndarray       # (3, 3) point block
    U: tuple            # per frame (6, meas_dim) measurement factors


def point_joint_info(problem, point_id: int) -> PointContribution:
    """Assemble C, B, P for one point from its observations at the stored
    linearization point, with noise weight 1/(sigma * noise_scale)^2."""
    m = problem.map
    tb = m.tables
    pi = tb.point_index.get(point_id)
    if pi is None:
        from .errors import UnknownIdError

        raise UnknownIdError("unknown point id %r" % (point_id,))
    rows = tb.rows_of_point(pi)
    if rows.stop == rows.start:
        raise DataError("point %r has no observations" % (point_id,))

    frames = tb.obs_frame[rows]
    stereo = tb.obs_stereo[rows]
    sigmas = tb.obs_sigma[rows] * problem.noise_scale
    Rmat, tvec = m.pose_arrays()
    fidx = frames - 1
    p_cam = batch_camera_points(
        Rmat[fidx], tvec[fidx], np.repeat(m.points[pi].position[None, :], len(frames), 0)
    )
    A, M = batch_jacobians(m.camera, Rmat[fidx], p_cam)

    F = len(frames)
    C = np.zeros((F, 6, 6))
    Bc = np.zeros((F, 6, 3))
    P = np.zeros((3, 3))
    U = []
    for f in range(F):
        rows_f = 3 if stereo[f] else 2
        w = 1.0 / sigmas[f] ** 2
        Af = A[f, :rows_f]
        Mf = M[f, :rows_f]
        Uf = Af.T * math.sqrt(w)
        C[f] = Uf @ Uf.T
        Bc[f] = Af.T @ Mf * w
        P += Mf.T @ Mf * w
        U.append(Uf)
    return PointContribution(point_id, frames.copy(), C, Bc, P, tuple(U))


def _point_chol(contribution: PointContribution, damping=None):
    P = contribution.P
    if damping is None:
        damping = default_damping(P)
    try:
        return np.linalg.cholesky(P + damping * np.eye(3))
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(
            "point %r block singular even with damping" % (contribution.point_id,)
        )


def schur_marginal(contribution: PointContribution, damping=None):
    """Marginal pose information blocks C - B (P + damping I)^-1 B^T.

    Returns a dict keyed by temporal frame-index pairs (ja, jb), covering
    all of X_i x X_i; blocks outside X_i are zero and omitted.
    """
    Lp = _point_chol(contribution, damping)
    # D[f] = B[f] @ inv(Lp).T so that B P^-1 B^T = D D^T
    D = np.stack(
        [solve_triangular(Lp, contribution.B[f].T, lower=True).T for f in range(len(contribution.frames))]
    )
    out = {}
    frames = contribution.frames
    for a in range(len(frames)):
        for b in range(len(frames)):
            blk = -D[a] @ D[b].T
            if a == b:
                blk = blk + contribution.C[a]
            out[(int(frames[a]), int(frames[b]))] = blk
    return out


def contribution_factors(contribution: PointContribution, t: int, damping=None):
    """Dense (6t, k) update factor U and (6t, 3) downdate factor D with
    marginal = U U^T - D D^T; rows outside X_i are zero."""
    Lp = _point_chol(contribution, damping)
    k = sum(u.shape[1] for u in contribution.U)
    U = np.zeros((6 * t, k))
    D = np.zeros((6 * t, 3))
    col = 0
    for f, j in enumerate(contribution.frames):
        r0 = 6 * (int(j) - 1)
        uf = contribution.U[f]
        U[r0 : r0 + 6, col : col + uf.shape[1]] = uf
        col += uf.shape[1]
        D[r0 : r0 + 6] = solve_triangular(Lp, contribution.B[f].T, lower=True).T
    return U, D


def marginal_factors(contribution: PointContribution, t: int, damping=None, tol=1e-12):
    """Well-conditioned low-rank factors of one point's marginal information.

    The raw update/downdate split of contribution_factors cancels
    catastrophically when a point adds little pose information (e.g. a
    single stereo observation); probing with it against a weak prior loses
    every significant digit.  Eigendecomposing the marginal on its 6F x 6F
    support instead yields factors whose magnitudes match the marginal
    itself: positive eigenpairs become update columns, (tiny, damping-born)
    negative ones become downdate columns.
    """
    blocks = schur_marginal(contribution, damping)
    frames = contribution.frames
    F = len(frames)
    S = np.zeros((6 * F, 6 * F))
    offset = {int(j): 6 * a for a, j in enumerate(frames)}
    for (ja, jb), blk in blocks.items():
        S[offset[ja] : offset[ja] + 6, offset[jb] : offset[jb] + 6] = blk
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(float(np.abs(lam).max()), 1e-300)
    pos = lam > tol * scale
    neg = lam < -tol * scale
    U_s = V[:, pos] * np.sqrt(lam[pos])
    D_s = V[:, neg] * np.sqrt(-lam[neg])
    U = np.zeros((6 * t, U_s.shape[1]))
    D = np.zeros((6 * t, D_s.shape[1]))
    for a, j in enumerate(frames):
        r0 = 6 * (int(j) - 1)
        U[r0 : r0 + 6] = U_s[6 * a : 6 * a + 6]
        D[r0 : r0 + 6] = D_s[6 * a : 6 * a + 6]
    return U, D


def dense_marginal(contribution: PointContribution, t: int, damping=None):
    """Dense 6t x 6t marginal pose information of one point."""
    M = BlockSymMatrix(t, 6)
    for (ja, jb), blk in schur_marginal(contribution, damping).items():
        if ja <= jb:
            M.add_block(ja - 1, jb - 1, blk)
    return M.to_dense()


def logdet(matrix) -> float:
    """Natural-log determinant of a symmetric positive-definite matrix."""
    try:
        L = np.linalg.cholesky(np.asarray(matrix, dtype=float))
    except np.linalg.LinAlgError:
        raise FactorizationError("matrix is not positive definite")
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@njit(cache=True)
def _choldate(L, x, sign):
    """Rank-1 Cholesky update (sign=+1) or downdate (sign=-1), in place.

    Returns 0 on success, k+1 if positive definiteness broke at column k.
    """
    d = L.shape[0]
    for k in range(d):
        Lkk = L[k, k]
        r2 = Lkk * Lkk + sign * x[k] * x[k]
        if r2 <= 0.0:
            return k + 1
        r = math.sqrt(r2)
        c = r / Lkk
        s = x[k] / Lkk
        L[k, k] = r
        for i in range(k + 1, d):
            L[i, k] = (L[i, k] + sign * s * x[i]) / c
            x[i] = c * x[i] - s * L[i, k]
    return 0


class CholFactor:
    """Lower-triangular factor of an SPD matrix with a running log-det."""

    def __init__(self, L: np.ndarray):
        self.L = L
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(L))))

    @property
    def dimension(self) -> int:
        return self.L.shape[0]

    def solve_lower(self, B):
        """L^-1 B via forward substitution."""
        return solve_triangular(self.L, B, lower=True)

    def reconstruct(self):
        return self.L @ self.L.T

    def copy(self) -> "CholFactor":
        return CholFactor(self.L.copy())


def chol_init(matrix) -> CholFactor:
    try:
        L = np.linalg.cholesky(np.asarray(matrix, dtype=float))
    except np.linalg.LinAlgError:
        raise FactorizationError("matrix is not positive definite")
    return CholFactor(L)


def apply_low_rank(factor: CholFactor, U, D) -> float:
    """Add U U^T - D D^T to the factored matrix; returns the log-det delta.

    Updates first, then downdates.  Raises NumericalBreakdownError without
    touching the factor if a downdate would break positive definiteness
    (the caller falls back to refactoring from scratch).
    """
    L = factor.L.copy()
    for col in range(U.shape[1]):
        if _choldate(L, U[:, col].copy(), 1.0) != 0:
            raise NumericalBreakdownError("rank-1 update broke down")
    for col in range(D.shape[1]):
        if _choldate(L, D[:, col].copy(), -1.0) != 0:
            raise NumericalBreakdownError("rank-1 downdate broke positive definiteness")
    old = factor.logdet
    factor.L = L
    factor.logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return factor.logdet - old


def chol_update(factor: CholFactor, contribution: PointContribution, damping=None) -> float:
    """Add one point's marginal information to the factor; returns the
    log-det delta.  Update-then-downdate with the U/D factors of the point."""
    t = factor.dimension // 6
    U, D = marginal_factors(contribution, t, damping)
    return apply_low_rank(factor, U, D)


def update_gain(factor: CholFactor, U, D) -> float:
    """log-det change of adding U U^T - D D^T, without mutating the factor.

    Uses the matrix determinant lemma against the current factor:
    logdet(A + W J W^T) - logdet(A) = logdet(I + J W^T A^-1 W).
    """
    k_u = U.shape[1]
    W = np.concatenate([U, D], axis=1)
    Y = factor.solve_lower(W)
    M = Y.T @ Y
    M[k_u:] = -M[k_u:]
    G = np.eye(M.shape[0]) + M
    sign, ld = np.linalg.slogdet(G)
    if sign <= 0:
        raise NumericalBreakdownError("determinant-lemma probe lost positive definiteness")
    return float(ld)


def dense_logdet_oracle(problem, selected_set) -> float:
    """Log-det of prior + sum of selected dense marginals, built from scratch.

    Test oracle for the incremental path; intended for small maps.
    """
    t = problem.map.n_frames
    tb = problem.map.tables
    A = problem.prior_epsilon * np.eye(6 * t)
    for pid in sorted(selected_set):
        rows = tb.rows_of_point(tb.point_index[pid])
        if rows.stop == rows.start:
            continue  # orphan points contribute nothing
        A += dense_marginal(point_joint_info(problem, pid), t)
    return logdet(A)
