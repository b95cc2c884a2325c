"""Smoke test for the bathy_py extension.

Build and install it first:

    pip install --no-build-isolation -e crates/py

then run `python python/smoke.py`. Pass a checkpoint written by
`bathy train` to exercise a trained network instead of a random one.
"""

import math
import sys

import bathy_py as b


def main(checkpoint=None):
    # Geometry and poses.
    pose = b.Pose.from_yaw(0.3, [2.0, -1.0, 0.5])
    back = pose.inverse() @ pose
    rot_err, trans_err = back.distance(b.Pose.identity())
    assert rot_err < 1e-12 and trans_err < 1e-12, (rot_err, trans_err)

    # Two overlapping patches of the same synthetic seabed.
    a = b.terrain_patch(3, [120.0, 120.0], 40.0, spacing=1.5, sample_seed=1)
    c = b.terrain_patch(3, [135.0, 120.0], 40.0, spacing=1.5, sample_seed=2)
    iou = b.overlap_iou(a, c)
    print(f"patches: {len(a)} and {len(c)} points, footprint IoU {iou:.3f}")
    assert 0.3 < iou < 0.9

    # Consistency error: zero on identical clouds, 1 m for a 1 m lift.
    assert b.consistency_rms([a, a]) == 0.0
    lifted = a.transformed(b.Pose.from_yaw(0.0, [0.0, 0.0, 1.0]))
    assert abs(b.consistency_rms([a, lifted]) - 1.0) < 1e-9

    # SVD alignment recovers an exact transform.
    src = a.absolute_points()[:30]
    dst = [pose.transform_point(p) for p in src]
    r, t = b.svd_align(src, dst).distance(pose)
    assert r < 1e-9 and t < 1e-9, (r, t)

    # GICP undoes a small offset between two samplings of the same seabed,
    # expressed about the patch center.
    c2 = b.terrain_patch(3, [135.0, 120.0], 40.0, spacing=1.5, sample_seed=3)
    center = c.centroid
    local = lambda cloud: [[p[i] - center[i] for i in range(3)] for p in cloud.absolute_points()]
    offset = b.Pose.from_yaw(math.radians(2.0), [1.5, -1.0, 0.2])
    moved = [offset.transform_point(p) for p in local(c2)]
    fine, costs = b.gicp(moved, local(c), max_distance=3.0)
    r, t = fine.distance(offset.inverse())
    print(f"gicp: {len(costs) - 1} steps, error {t:.3f} m / {math.degrees(r):.3f} deg")
    assert all(y <= x for x, y in zip(costs, costs[1:]))
    assert t < 0.2

    # Losses and gradients.
    assert b.triplet_loss([1.0, 0.0], [1.0, 0.0], [0.0, 1.0], margin=0.2) == 0.0
    assert b.weighted_batch_loss([1.0, 3.0], [1.0, 1.0]) == 2.0
    checks = b.gradient_check()
    worst = max(e for _, e, _ in checks)
    print(f"gradient check: {len(checks)} checks, worst relative error {worst:.2e}")
    assert all(ok for _, _, ok in checks)

    # Network descriptors, matching and registration.
    if checkpoint:
        model = b.Model.load(checkpoint)
    else:
        model = b.Model.init("tiny", seed=1)
        model.configure(keypoints=64, points_per_cloud=256)
    da, dc = model.describe(a), model.describe(c)
    xi = da.descriptor(da.keypoints[0])
    assert abs(sum(v * v for v in xi) - 1.0) < 1e-9
    matches = model.match_descriptors(da, dc)
    print(f"descriptors: {len(da)} points, {len(da.keypoints)} keypoints, {len(matches)} matches")
    if len(matches) >= 3:
        try:
            drifted = b.PointCloud(
                "c-drifted", [[q[i] + center[i] for i in range(3)] for q in (offset.transform_point(p) for p in local(c))]
            )
            res = model.register(a, drifted)
            print(f"register: RMS {res['rms_before']:.3f} -> {res['rms_fine']:.3f} m")
        except (RuntimeError, ValueError) as err:
            # An untrained network may produce degenerate correspondences.
            print(f"register: {err}")

    # Baseline features.
    idx, shot = b.shot_features(a)
    print(f"baseline: {len(idx)} Harris3D keypoints, SHOT length {len(shot[0]) if shot else 0}")
    print("smoke test passed")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
