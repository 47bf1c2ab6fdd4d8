"""Select a budgeted map-point subset from a synthetic world and compare
the greedy selectors on the odometry utility.

Run:  python3 demos/demo_selection.py
"""

import numpy as np

from mapselect import (
    SelectionProblem,
    WorldSpec,
    classic_greedy,
    forced_set,
    generate_world,
    lazy_greedy,
    make_state,
    random_select,
    stochastic_greedy,
)


def main():
    spec = WorldSpec(shape="loop", n_frames=40, points_per_region=60, sigma=1.0, seed=7)
    world, _ = generate_world(spec)
    n = world.n_points
    forced = frozenset(forced_set(world))
    k = max(int(np.ceil(0.25 * n)), len(forced))
    print("world: %d frames, %d points, %d observations" % (world.n_frames, n, len(world.observations)))
    print("budget: %d points (~25%%), %d forced by the last keyframe" % (k, len(forced)))

    def problem():
        return SelectionProblem(world, k, forced=forced)

    def run(selector, **kw):
        p = problem()
        return selector(p, make_state(p, "odom"), **kw)

    runs = [
        ("classic", run(classic_greedy)),
        ("lazy", run(lazy_greedy)),
        ("stochastic", run(stochastic_greedy, seed=0)),
        ("random", random_select(problem(), seed=0, state=make_state(problem(), "odom"))),
    ]

    print()
    print("%-10s %12s %12s %10s" % ("method", "value", "gain evals", "seconds"))
    for name, sel in runs:
        print("%-10s %12.4f %12d %10.3f" % (name, sel.value, sel.gain_evals, sel.seconds))

    classic_sel, lazy_sel = runs[0][1], runs[1][1]
    print()
    print("lazy == classic selection:", classic_sel.ids == lazy_sel.ids)
    if classic_sel.gain_evals:
        print(
            "lazy probe savings: %d of %d (%.0f%%)"
            % (
                classic_sel.gain_evals - lazy_sel.gain_evals,
                classic_sel.gain_evals,
                100.0 * (1 - lazy_sel.gain_evals / classic_sel.gain_evals),
            )
        )


if __name__ == "__main__":
    main()
