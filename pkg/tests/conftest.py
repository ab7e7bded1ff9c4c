import numpy as np
import pytest

from diffcontact import so3
from diffcontact.geometry import Pose, SystemState, TriMeshBody, make_box


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_rotation(rng):
    return so3.exp_so3(rng.normal(size=3))


def random_disjoint_triangles(rng, gap_scale=1.0):
    """Two triangles with strictly separated hulls (z-offset construction)."""
    while True:
        ta = rng.normal(size=(3, 3)) * 0.4
        tb = rng.normal(size=(3, 3)) * 0.4
        ta[:, 2] = np.abs(ta[:, 2]) + 0.3 * gap_scale
        tb[:, 2] = -np.abs(tb[:, 2]) - 0.3 * gap_scale
        rot = random_rotation(rng)
        shift = rng.normal(size=3) * 0.2
        yield ta @ rot.T + shift, tb @ rot.T + shift


def box_pair_state(rng, separation=0.8):
    va, fa = make_box((0.4, 0.3, 0.35))
    vb, fb = make_box((0.35, 0.4, 0.3))
    bodies = [
        TriMeshBody("a", va, fa, static=True),
        TriMeshBody("b", vb, fb, static=True),
    ]
    pose_a = Pose(np.zeros(3), random_rotation(rng))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    pose_b = Pose(separation * direction, random_rotation(rng))
    return SystemState(bodies, [pose_a, pose_b])
