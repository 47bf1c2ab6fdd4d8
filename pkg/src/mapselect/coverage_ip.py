"""Set multi-cover integer-program baseline ("ip100").

Minimizes q^T x + lambda * sum_j max(0, b - coverage_j(x)) subject to an
exact selection size, where q_i prices rarely-observed points and the
penalty term pushes every frame towards at least b selected points.  With
the selection size fixed, minimizing this objective is the same as
maximizing lambda * sum_j min(coverage_j, b) - q^T x, a monotone submodular
term plus a modular cost, which the greedy solver exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, CombinatorialBlowupError, ConfigurationError
from .map_model import SelectionProblem

IP100_B = 100
IP100_LAMBDA = 25.0


@dataclass(frozen=True)
class IpModel:
    q: np.ndarray          # (n,) per-point costs, q_i >= 0
    A: np.ndarray          # (F, n) frame x point incidence, {0, 1}
    b: int                 # required coverage per frame
    lam: float             # penalty weight
    budget: int            # exact selection size (forced included)
    forced: frozenset      # point ids fixed to 1
    point_ids: np.ndarray  # (n,) column -> point id


@dataclass(frozen=True)
class IpResult:
    ids: list
    objective: float


def build_ip(problem: SelectionProblem, b=IP100_B, lam=IP100_LAMBDA) -> IpModel:
    """Model from a selection problem: q_i = (max observation count) - (own
    observation count); incidence over every frame; forced points fixed."""
    if not (b >= 1 and lam > 0):
        raise ConfigurationError("need b >= 1 and lambda > 0")
    tb = problem.map.tables
    n = problem.map.n_points
    t = problem.map.n_frames
    counts = tb.obs_start[1:] - tb.obs_start[:-1]
    q = (counts.max(initial=0) - counts).astype(float)
    A = np.zeros((t, n), dtype=np.uint8)
    A[tb.obs_frame - 1, tb.obs_point] = 1
    return IpModel(q, A, int(b), float(lam), problem.budget, problem.forced, tb.point_ids.copy())


def _columns(model: IpModel, ids):
    idx = {int(p): i for i, p in enumerate(model.point_ids)}
    return np.array([idx[int(p)] for p in ids], dtype=np.int64)


def ip_objective(model: IpModel, ids) -> float:
    """q^T x + lambda * sum_j max(0, b - |x intersect V_j|)."""
    ids = list(ids)
    if len(set(ids)) != len(ids) or len(ids) != model.budget:
        raise BudgetError(
            "selection size %d does not match the budget %d" % (len(ids), model.budget)
        )
    cols = _columns(model, ids)
    coverage = model.A[:, cols].sum(axis=1).astype(np.int64)
    slack = np.maximum(0, model.b - coverage)
    return float(model.q[cols].sum() + model.lam * slack.sum())


def solve_ip_greedy(model: IpModel) -> IpResult:
    """Greedily add the point with the largest objective decrease,
    lambda * (unsaturated frames covered) - q_i; ties break to smallest id."""
    idx = {int(p): i for i, p in enumerate(model.point_ids)}
    chosen = sorted(int(p) for p in model.forced)
    cols = _columns(model, chosen)
    coverage = model.A[:, cols].sum(axis=1).astype(np.int64) if len(cols) else np.zeros(model.A.shape[0], dtype=np.int64)
    in_sel = np.zeros(len(model.point_ids), dtype=bool)
    in_sel[cols] = True
    order = np.argsort(model.point_ids, kind="stable")
    while len(chosen) < model.budget:
        unsat = (coverage < model.b).astype(float)
        score = model.lam * (unsat @ model.A) - model.q
        score[in_sel] = -math.inf
        best = order[int(np.argmax(score[order]))]  # smallest id among ties
        in_sel[best] = True
        chosen.append(int(model.point_ids[best]))
        coverage += model.A[:, best]
    chosen = sorted(chosen)
    return IpResult(chosen, ip_objective(model, chosen))


def solve_ip_exact(model: IpModel) -> IpResult:
    """Exact minimizer by depth-first enumeration with lower-bound pruning.

    Candidates are scanned in ascending id, so among equal-objective optima
    the lexicographically smallest id tuple wins.  Refuses instances with
    more than 10^6 free subsets.
    """
    forced = sorted(int(p) for p in model.forced)
    pool = sorted(int(p) for p in model.point_ids if int(p) not in model.forced)
    pick = model.budget - len(forced)
    if pick < 0 or pick > len(pool):
        raise BudgetError("budget %d infeasible for %d free points" % (model.budget, len(pool)))
    if math.comb(len(pool), pick) > 1_000_000:
        raise CombinatorialBlowupError(
            "C(%d, %d) subsets exceed the exact-solver cap" % (len(pool), pick)
        )
    idx = {int(p): i for i, p in enumerate(model.point_ids)}
    pool_cols = np.array([idx[p] for p in pool], dtype=np.int64)
    forced_cols = np.array([idx[p] for p in forced], dtype=np.int64)
    base_cov = model.A[:, forced_cols].sum(axis=1).astype(np.int64) if len(forced_cols) else np.zeros(model.A.shape[0], dtype=np.int64)
    base_q = float(model.q[forced_cols].sum()) if len(forced_cols) else 0.0
    pool_q = model.q[pool_cols]
    # suffix sums of the r smallest remaining costs, for the lower bound
    best = {"obj": math.inf, "ids": None}

    def lower_bound(i, picks_left, q_acc, cov):
        rest = np.sort(pool_q[i:])[:picks_left]
        slack = np.maximum(0, model.b - (cov + picks_left))
        return q_acc + float(rest.sum()) + model.lam * float(slack.sum())

    def dfs(i, picks_left, q_acc, cov, chosen):
        if picks_left == 0:
            obj = q_acc + model.lam * float(np.maximum(0, model.b - cov).sum())
            if obj < best["obj"]:
                best["obj"] = obj
                best["ids"] = sorted(forced + chosen)
            return
        if len(pool) - i < picks_left:
            return
        if lower_bound(i, picks_left, q_acc, cov) >= best["obj"]:
            return
        dfs(
            i + 1,
            picks_left - 1,
            q_acc + float(pool_q[i]),
            cov + model.A[:, pool_cols[i]],
            chosen + [pool[i]],
        )
        dfs(i + 1, picks_left, q_acc, cov, chosen)

    dfs(0, pick, base_q, base_cov, [])
    return IpResult(best["ids"], best["obj"])
