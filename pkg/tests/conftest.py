import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from garmentstruct.model import Curve3D, Edge2D, GarmentStructure, Panel, Patch3D, Stage

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def segment(a, b, n=50):
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = (1 - t) * np.asarray(a, float) + t * np.asarray(b, float)
    pts[0], pts[-1] = a, b
    return pts


SQUARE = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]


def polygon_edges(corners, n=50, first_id=0):
    k = len(corners)
    return [Edge2D(first_id + i, segment(corners[i], corners[(i + 1) % k], n)) for i in range(k)]


def square_edges(n=50, first_id=0):
    return polygon_edges(SQUARE, n, first_id)


def flat_grid(size=1.0, g=20, z=0.0, origin=(0.0, 0.0)):
    u = np.linspace(0.0, size, g)
    x, y = np.meshgrid(u + origin[0], u + origin[1], indexing="ij")
    return np.stack([x, y, np.full_like(x, z)], axis=-1)


def square_structure(stage=Stage.GROUND_TRUTH, scale=0.5, prob=1.0):
    """One flat patch bounded by four 3D seams, with its square panel."""
    corners3 = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)]
    curves = [Curve3D(i, segment(corners3[i], corners3[(i + 1) % 4]), prob) for i in range(4)]
    patch = Patch3D(0, flat_grid(), prob)
    masks = {} if stage == Stage.RAW else {"patch_mask": np.ones(1, bool), "curve_mask": np.ones(4, bool)}
    return GarmentStructure(curves, [patch], np.ones((1, 4)), [Panel(0, square_edges(), scale)], stage, **masks)


@pytest.fixture
def square():
    return square_structure()
