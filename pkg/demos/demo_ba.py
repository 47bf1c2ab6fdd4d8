"""Gauss-Newton bundle adjustment on a synthetic world.

Generates a noisy loop trajectory, perturbs the stored estimates, refines
them against the full point set, then against a 20% information-selected
subset, and reports the trajectory error of each.

Run:  python3 demos/demo_ba.py
"""

import numpy as np

from mapselect import (
    SelectionProblem,
    WorldSpec,
    ape,
    gauss_newton_ba,
    generate_world,
    lazy_greedy,
    make_state,
    rpe,
)


def refine(world, gt, ids, label):
    ba = gauss_newton_ba(world, set(ids), max_iters=25)
    gt_poses = list(gt.poses)
    print(
        "%-18s %6d points  %2d iters  cost %.4g -> %.4g  APE %.4f m  RPE %.4f m"
        % (
            label,
            len(ids),
            ba.iterations,
            ba.cost_history[0],
            ba.final_cost,
            ape(ba.poses, gt_poses),
            rpe(ba.poses, gt_poses),
        )
    )


def main():
    spec = WorldSpec(shape="loop", n_frames=40, points_per_region=60, sigma=1.0, seed=1)
    world, gt = generate_world(spec)
    stored = [world.frame_by_index(j).pose for j in range(1, world.n_frames + 1)]
    print("stored estimate APE before refinement: %.4f m" % ape(stored, list(gt.poses)))
    print()

    all_ids = [p.id for p in world.points]
    refine(world, gt, all_ids, "full map")

    k = int(np.ceil(0.2 * world.n_points))
    problem = SelectionProblem(world, k)
    sel = lazy_greedy(problem, make_state(problem, "odom"))
    refine(world, gt, sel.ids, "odom 20% subset")


if __name__ == "__main__":
    main()
