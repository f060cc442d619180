"""Regenerate the bundled rig, probe mesh and the 11 grasp-pose files.

Grasps are fitted geometrically: the palm is pushed toward the probe handle
until just before it penetrates, then each finger is curled until just before
it penetrates. Run from the repository root:

    python scripts/author_assets.py
"""
import json
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from graspsynth.assets import (
    DEFAULT_Z_OFFSET, GraspPose, ProbeModel, apply_z_offset, points_inside, save_grasp,
    save_mesh, save_rig, skin_hand, validate_grasp,
)
from graspsynth.geometry import euler_matrix_deg
from graspsynth.procedural import FINGER_CHAINS, build_hand_rig, build_probe_mesh

DATA = Path(__file__).resolve().parents[1] / "src" / "graspsynth" / "data"

# probe euler (deg), roll of the palm around the handle (deg), handle direction sign, axial offset (m)
VARIANTS = [
    ((330, 0, 0), 0, 1, 0.000),
    ((330, 0, 30), 40, 1, 0.005),
    ((330, 0, 300), 90, 1, -0.005),
    ((0, 0, 0), 180, 1, 0.000),
    ((300, 0, 90), 270, 1, 0.008),
    ((330, 30, 0), 20, -1, 0.000),
    ((345, 0, 180), 135, -1, -0.004),
    ((315, 0, 45), 220, 1, 0.003),
    ((330, 0, 270), 315, -1, 0.006),
    ((20, 0, 0), 60, -1, -0.006),
    ((330, 330, 0), 110, 1, 0.002),
]

STEP = 0.0005
FLEX_STEP = 0.03


def _perp_basis(a):
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(a, u)


def fit_grasp(rig, probe, probe_world, euler, roll_deg, sign, axial, grasp_id):
    rot_p = euler_matrix_deg(euler)
    t_p = apply_z_offset(np.zeros(3), probe.z_offset)
    a = rot_p @ np.array([0.0, 0.0, 1.0])
    u, w = _perp_basis(a)
    roll = np.radians(roll_deg)
    n = np.cos(roll) * u + np.sin(roll) * w
    x_axis, z_axis = sign * a, -n
    r_root = np.column_stack([x_axis, np.cross(z_axis, x_axis), z_axis])
    rots = np.zeros((rig.n_joints, 3))
    rots[0] = Rotation.from_matrix(r_root).as_rotvec()
    handle = t_p + rot_p @ np.array([0.0, 0.0, axial])

    dominant = np.argmax(rig.skin_weights, axis=1)
    hand_mask = rig.hand_vertex_mask()
    palm = hand_mask & (dominant == 0)

    def pose(gap, rotations):
        c_rig = np.array([-0.004, 0.060, -0.016 - 0.0165 - gap])
        return GraspPose(grasp_id, handle - r_root @ c_rig, rotations, np.asarray(euler, float))

    def penetrates(p, mask):
        posed, _ = skin_hand(rig, p)
        return points_inside(probe_world, posed.vertices[mask]).any()

    gap = 0.03
    while gap > -0.01 and not penetrates(pose(gap - STEP, rots), palm):
        gap -= STEP

    for finger, chain in FINGER_CHAINS.items():
        mask = hand_mask & np.isin(dominant, chain[:3])
        if finger == "thumb":
            def thumb_rot(k):
                r = rots.copy()
                r[chain[0]] = (0.0, 0.6 - k, 0.0)
                r[chain[1]] = (-0.4 * k, 0.0, 0.0)
                r[chain[2]] = (-0.5 * k, 0.0, 0.0)
                return r
            make = thumb_rot
            limit = 1.8
        else:
            def flex_rot(k, chain=chain):
                r = rots.copy()
                r[chain[0]] = (-k, 0.0, 0.0)
                r[chain[1]] = (-1.1 * k, 0.0, 0.0)
                r[chain[2]] = (-0.8 * k, 0.0, 0.0)
                return r
            make = flex_rot
            limit = 1.5
        k = 0.0
        while k > -1.0 and penetrates(pose(gap, make(k)), mask):
            k -= FLEX_STEP
        while k + FLEX_STEP <= limit and not penetrates(pose(gap, make(k + FLEX_STEP)), mask):
            k += FLEX_STEP
        rots = make(k)
    return pose(gap, rots)


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "grasps").mkdir(exist_ok=True)
    rig = build_hand_rig()
    mesh = build_probe_mesh()
    probe = ProbeModel(mesh, DEFAULT_Z_OFFSET)
    save_rig(rig, DATA / "hand_rig.json")
    save_mesh(mesh, DATA / "probe.obj")
    summary = {}
    for i, (euler, roll, sign, axial) in enumerate(VARIANTS, start=1):
        gid = f"grasp_{i:02d}"
        rot_p = euler_matrix_deg(euler)
        probe_world = mesh.transformed(rot_p, apply_z_offset(np.zeros(3), probe.z_offset))
        g = fit_grasp(rig, probe, probe_world, euler, roll, sign, axial, gid)
        save_grasp(g, DATA / "grasps" / f"{gid}.json")
        rep = validate_grasp(rig, g, probe)
        summary[gid] = rep.as_dict()
        print(gid, rep)
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
