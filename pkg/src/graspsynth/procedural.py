"""Procedural stand-in assets: a low-poly capsule hand+forearm rig, a lofted
ultrasound-probe mesh, and small primitives used throughout the tests.

The bundled ``data/`` files are produced by these builders
(``scripts/author_assets.py``); nothing here needs third-party model files.
"""
import numpy as np

from graspsynth.assets import HandRig, Joint, TriMesh

# joint name, parent, rest position in the rig frame (meters).
# Rig frame: wrist at the origin, fingers along +y, palm facing -z, thumb on -x.
JOINT_LAYOUT = (
    ("wrist", None, (0.0, 0.0, 0.0)),
    ("thumb_cmc", 0, (-0.022, 0.018, -0.008)),
    ("thumb_mcp", 1, (-0.040, 0.048, -0.014)),
    ("thumb_ip", 2, (-0.052, 0.078, -0.016)),
    ("thumb_tip", 3, (-0.060, 0.102, -0.016)),
    ("index_mcp", 0, (-0.026, 0.088, 0.0)),
    ("index_pip", 5, (-0.028, 0.128, 0.0)),
    ("index_dip", 6, (-0.029, 0.153, 0.0)),
    ("index_tip", 7, (-0.030, 0.173, 0.0)),
    ("middle_mcp", 0, (-0.008, 0.092, 0.0)),
    ("middle_pip", 9, (-0.008, 0.137, 0.0)),
    ("middle_dip", 10, (-0.008, 0.165, 0.0)),
    ("middle_tip", 11, (-0.008, 0.187, 0.0)),
    ("ring_mcp", 0, (0.010, 0.088, 0.0)),
    ("ring_pip", 13, (0.011, 0.130, 0.0)),
    ("ring_dip", 14, (0.012, 0.156, 0.0)),
    ("ring_tip", 15, (0.013, 0.177, 0.0)),
    ("pinky_mcp", 0, (0.027, 0.080, 0.0)),
    ("pinky_pip", 17, (0.029, 0.113, 0.0)),
    ("pinky_dip", 18, (0.030, 0.133, 0.0)),
    ("pinky_tip", 19, (0.031, 0.150, 0.0)),
)

FINGER_CHAINS = {
    "thumb": (1, 2, 3, 4),
    "index": (5, 6, 7, 8),
    "middle": (9, 10, 11, 12),
    "ring": (13, 14, 15, 16),
    "pinky": (17, 18, 19, 20),
}

# bone radii (start, end) per finger segment
_FINGER_RADII = {
    "thumb": (0.0115, 0.0105, 0.0095),
    "index": (0.0095, 0.0088, 0.0080),
    "middle": (0.0098, 0.0090, 0.0082),
    "ring": (0.0092, 0.0086, 0.0078),
    "pinky": (0.0082, 0.0076, 0.0070),
}

# probe cross-sections along its long axis: (z, half-width x, half-width y)
_PROBE_SECTIONS = (
    (-0.092, 0.029, 0.010),
    (-0.088, 0.032, 0.013),
    (-0.075, 0.030, 0.015),
    (-0.055, 0.020, 0.015),
) + tuple((float(z), 0.0175, 0.0155) for z in np.linspace(-0.045, 0.045, 11)) + (
    (0.055, 0.012, 0.012),
    (0.068, 0.006, 0.006),
)


def _frame(axis):
    a = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    return a, u, np.cross(a, u)


def loft(rings, start_apex, end_apex):
    """Closed tube through ``rings`` (each an (n, 3) array) capped by two apex fans.

    Returns ``(vertices, triangles)``; the surface is watertight and
    consistently oriented.
    """
    n = len(rings[0])
    verts = [np.asarray(start_apex, float)[None]] + [np.asarray(r, float) for r in rings]
    verts.append(np.asarray(end_apex, float)[None])
    tris = []
    base = lambda k: 1 + k * n  # noqa: E731
    for i in range(n):
        tris.append((0, base(0) + i, base(0) + (i + 1) % n))
    for k in range(len(rings) - 1):
        a, b = base(k), base(k + 1)
        for i in range(n):
            j = (i + 1) % n
            tris.append((a + i, b + i, b + j))
            tris.append((a + i, b + j, a + j))
    last = base(len(rings) - 1)
    apex = 1 + len(rings) * n
    for i in range(n):
        tris.append((apex, last + (i + 1) % n, last + i))
    return np.concatenate(verts), np.array(tris, dtype=np.int64)


def capsule(p0, p1, r0, r1, n_around=8, n_body=3):
    """Low-poly capsule from ``p0`` to ``p1``.

    Returns ``(vertices, triangles, s)`` where ``s`` is each vertex's
    normalised position along the bone (clamped to [0, 1]).
    """
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    a, u, w = _frame(p1 - p0)
    ang = 2 * np.pi * np.arange(n_around) / n_around
    circle = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w
    length = np.linalg.norm(p1 - p0)
    centers, radii = [p0 - a * 0.5 * r0], [0.75 * r0]
    for s in np.linspace(0.0, 1.0, n_body + 1):
        centers.append(p0 + (p1 - p0) * s)
        radii.append(r0 + (r1 - r0) * s)
    centers.append(p1 + a * 0.5 * r1)
    radii.append(0.75 * r1)
    rings = [c + r * circle for c, r in zip(centers, radii)]
    v, t = loft(rings, p0 - a * r0, p1 + a * r1)
    s = np.clip((v - p0) @ a / length, 0.0, 1.0)
    return v, t, s


def superellipse(a, b, n=16, power=4.0):
    ang = 2 * np.pi * np.arange(n) / n
    c, s = np.cos(ang), np.sin(ang)
    e = 2.0 / power
    return np.stack([a * np.sign(c) * np.abs(c) ** e, b * np.sign(s) * np.abs(s) ** e], axis=1)


def build_probe_mesh(n_around=16) -> TriMesh:
    """Watertight lofted probe: wide transducer head at -z, handle, cable end at +z."""
    rings = []
    for z, hx, hy in _PROBE_SECTIONS:
        xy = superellipse(hx, hy, n_around)
        rings.append(np.column_stack([xy, np.full(n_around, z)]))
    v, t = loft(rings, (0.0, 0.0, _PROBE_SECTIONS[0][0] - 0.003), (0.0, 0.0, _PROBE_SECTIONS[-1][0] + 0.003))
    return TriMesh(v, t, "probe")


def build_hand_rig(n_around=8) -> HandRig:
    """Capsule-based right hand with forearm and the 21-keypoint skeleton."""
    names = [j[0] for j in JOINT_LAYOUT]
    pos = np.array([j[2] for j in JOINT_LAYOUT])
    joints = []
    for name, parent, p in JOINT_LAYOUT:
        t = np.asarray(p) - (pos[parent] if parent is not None else 0.0)
        joints.append(Joint(name, parent, np.eye(3), t))
    nj = len(joints)

    verts, tris, weights, arm = [], [], [], []
    offset = 0

    def add(v, t, w, is_arm=False):
        nonlocal offset
        verts.append(v)
        tris.append(t + offset)
        weights.append(w)
        arm.append(np.full(len(t), is_arm))
        offset += len(v)

    # forearm, rigidly attached to the wrist
    v, t, _ = capsule((0.0, -0.24, 0.0), (0.0, -0.012, 0.0), 0.030, 0.026, n_around=12, n_body=5)
    w = np.zeros((len(v), nj))
    w[:, 0] = 1.0
    add(v, t, w, is_arm=True)

    # palm: rounded slab from the wrist to the knuckles
    rings = []
    for y, hx in ((-0.004, 0.032), (0.02, 0.038), (0.05, 0.041), (0.078, 0.041)):
        xy = superellipse(hx, 0.014, 12)
        rings.append(np.column_stack([xy[:, 0] - 0.001, np.full(12, y), xy[:, 1] - 0.002]))
    v, t = loft(rings, (-0.001, -0.010, -0.002), (-0.001, 0.084, -0.002))
    w = np.zeros((len(v), nj))
    w[:, 0] = 1.0
    add(v, t, w)

    for finger, chain in FINGER_CHAINS.items():
        radii = _FINGER_RADII[finger]
        for seg, (ja, jb) in enumerate(zip(chain[:-1], chain[1:])):
            r0 = radii[seg]
            r1 = radii[seg + 1] if seg + 1 < len(radii) else 0.9 * r0
            v, t, s = capsule(pos[ja], pos[jb], r0, r1, n_around=n_around)
            w = np.zeros((len(v), nj))
            # blend the first quarter of each bone with the parent joint
            wp = 0.5 * np.clip((0.25 - s) / 0.25, 0.0, 1.0)
            w[:, ja] = 1.0 - wp
            w[:, joints[ja].parent] += wp
            add(v, t, w)

    mesh = TriMesh(np.concatenate(verts), np.concatenate(tris), "hand")
    keypoints = tuple(range(len(names)))
    return HandRig(tuple(joints), np.concatenate(weights), mesh, keypoints, np.concatenate(arm))


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5), label="other") -> TriMesh:
    """Axis-aligned box as 8 vertices / 12 outward-facing triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[(hi if (k >> 2) & 1 else lo)[0], (hi if (k >> 1) & 1 else lo)[1],
                   (hi if k & 1 else lo)[2]] for k in range(8)])
    t = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(v, t, label)


def quad_mesh(center, half_size, normal_axis=2, label="other") -> TriMesh:
    """Square of side ``2*half_size`` centred at ``center``, perpendicular to an axis."""
    c = np.asarray(center, float)
    a, b = [i for i in range(3) if i != normal_axis]
    v = np.tile(c, (4, 1))
    for k, (sa, sb) in enumerate(((-1, -1), (1, -1), (1, 1), (-1, 1))):
        v[k, a] += sa * half_size
        v[k, b] += sb * half_size
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]], label)
