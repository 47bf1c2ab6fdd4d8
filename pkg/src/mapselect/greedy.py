"""Greedy subset selection: classic, lazy (priority-queue) and stochastic.

All selectors commit any forced points first (ascending id), then fill the
budget greedily.  Ties between equal gains always break towards the smallest
point id, so classic and lazy runs produce identical selections.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CombinatorialBlowupError
from .map_model import SelectionProblem
from .utilities import UtilityState

BRUTE_FORCE_CAP = 1_000_000


@dataclass
class Selection:
    """Result of one selection run: ids in commit order plus diagnostics."""

    ids: list
    gains: list
    value: float
    gain_evals: int
    seconds: float
    method: str
    kind: str

    @property
    def k(self) -> int:
        return len(self.ids)


def _commit_forced(problem: SelectionProblem, state: UtilityState, ids, gains):
    for pid in sorted(problem.forced):
        before = state.value()
        state.commit(pid)
        ids.append(int(pid))
        gains.append(state.value() - before)


def _candidates(problem: SelectionProblem, state: UtilityState):
    """Unselected point ids, ascending."""
    all_ids = problem.map.tables.point_ids
    mask = np.fromiter(
        (int(p) not in state.selected for p in all_ids), dtype=bool, count=len(all_ids)
    )
    return np.sort(all_ids[mask])


def classic_greedy(problem: SelectionProblem, state: UtilityState, k=None) -> Selection:
    """Textbook greedy: re-evaluate every remaining candidate each step."""
    k = problem.budget if k is None else k
    t0 = time.perf_counter()
    ids, gains, evals = [], [], 0
    _commit_forced(problem, state, ids, gains)
    cand = _candidates(problem, state)
    while len(ids) < k and len(cand):
        g = state.gains(cand)
        evals += len(cand)
        best = int(np.argmax(g))  # first max: smallest id wins ties
        state.commit(int(cand[best]))
        ids.append(int(cand[best]))
        gains.append(float(g[best]))
        cand = np.delete(cand, best)
    return Selection(ids, gains, state.value(), evals, time.perf_counter() - t0, "classic", state.kind)


def lazy_greedy(problem: SelectionProblem, state: UtilityState, k=None) -> Selection:
    """Lazy greedy with stale-bound re-evaluation.

    Cached gains are upper bounds (submodularity), so a heap entry whose
    staleness stamp is unchanged since evaluation is exact and can be
    committed as soon as it reaches the top.  Produces the same selection
    as classic_greedy with at most as many gain evaluations.
    """
    k = problem.budget if k is None else k
    t0 = time.perf_counter()
    ids, gains, evals = [], [], 0
    _commit_forced(problem, state, ids, gains)
    cand = _candidates(problem, state)
    if len(cand) and len(ids) < k:
        g = state.gains(cand)
        st = state.stamps(cand)
        evals += len(cand)
        heap = [(-float(g[i]), int(cand[i]), int(st[i])) for i in range(len(cand))]
        heapq.heapify(heap)
    else:
        heap = []
    batch = 128
    while len(ids) < k and heap:
        neg_g, pid, stamp = heapq.heappop(heap)
        if state.stamp(pid) == stamp:
            state.commit(pid)
            ids.append(pid)
            gains.append(-neg_g)
            continue
        # stale: re-evaluate a whole chunk from the top of the heap at once
        # (fresh entries swept up are recomputed to the same value, harmless)
        stale = [pid]
        while heap and len(stale) < batch:
            stale.append(heapq.heappop(heap)[1])
        arr = np.array(stale, dtype=np.int64)
        g = state.gains(arr)
        st = state.stamps(arr)
        evals += len(arr)
        for i in range(len(arr)):
            heapq.heappush(heap, (-float(g[i]), int(arr[i]), int(st[i])))
    return Selection(ids, gains, state.value(), evals, time.perf_counter() - t0, "lazy", state.kind)


def stochastic_sample_size(n: int, k: int, epsilon: float) -> int:
    """Per-step candidate sample size ceil((n / k) * ln(1 / epsilon))."""
    if not 0 < epsilon < 1:
        from .errors import ConfigurationError

        raise ConfigurationError("epsilon must lie in (0, 1)")
    return int(math.ceil((n / k) * math.log(1.0 / epsilon)))


def stochastic_greedy(
    problem: SelectionProblem, state: UtilityState, k=None, epsilon=0.05, seed=0
) -> Selection:
    """Stochastic greedy: each step evaluates a uniform random sample of
    r = ceil((n/k) ln(1/eps)) remaining candidates and commits the best."""
    k = problem.budget if k is None else k
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ids, gains, evals = [], [], 0
    _commit_forced(problem, state, ids, gains)
    cand = _candidates(problem, state)
    n = problem.map.n_points
    r = stochastic_sample_size(n, k, epsilon)
    while len(ids) < k and len(cand):
        m = min(r, len(cand))
        sample = np.sort(rng.choice(cand, size=m, replace=False))
        g = state.gains(sample)
        evals += m
        best = int(np.argmax(g))
        pid = int(sample[best])
        state.commit(pid)
        ids.append(pid)
        gains.append(float(g[best]))
        cand = cand[cand != pid]
    return Selection(ids, gains, state.value(), evals, time.perf_counter() - t0, "stochastic", state.kind)


def random_select(problem: SelectionProblem, k=None, seed=0, state=None) -> Selection:
    """Uniform random baseline (forced points always included)."""
    k = problem.budget if k is None else k
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    forced = sorted(int(p) for p in problem.forced)
    pool = np.sort(
        np.array(
            [int(p) for p in problem.map.tables.point_ids if int(p) not in problem.forced],
            dtype=np.int64,
        )
    )
    extra = rng.choice(pool, size=k - len(forced), replace=False) if k > len(forced) else []
    ids = forced + [int(p) for p in extra]
    value = float("nan")
    gains = []
    if state is not None:
        for pid in ids:
            before = state.value()
            state.commit(pid)
            gains.append(state.value() - before)
        value = state.value()
    return Selection(ids, gains, value, 0, time.perf_counter() - t0, "random", getattr(state, "kind", "random"))


def brute_force_opt(problem: SelectionProblem, state_factory, k=None) -> Selection:
    """Exhaustive optimum over all feasible size-k supersets of the forced set.

    Ties break towards the lexicographically smallest id tuple.  Refuses
    instances with more than BRUTE_FORCE_CAP candidate subsets.
    """
    k = problem.budget if k is None else k
    t0 = time.perf_counter()
    state = state_factory(problem)
    forced = sorted(int(p) for p in problem.forced)
    pool = sorted(
        int(p) for p in problem.map.tables.point_ids if int(p) not in problem.forced
    )
    pick = k - len(forced)
    n_subsets = math.comb(len(pool), pick)
    if n_subsets > BRUTE_FORCE_CAP:
        raise CombinatorialBlowupError(
            "C(%d, %d) = %d subsets exceeds the cap of %d"
            % (len(pool), pick, n_subsets, BRUTE_FORCE_CAP)
        )
    best_ids, best_value = None, -math.inf
    evals = 0
    for combo in itertools.combinations(pool, pick):
        ids = forced + list(combo)
        v = state.value_of(ids)
        evals += 1
        if v > best_value:
            best_ids, best_value = ids, v
    return Selection(
        best_ids, [], best_value, evals, time.perf_counter() - t0, "brute", state.kind
    )
