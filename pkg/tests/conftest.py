"""Shared fixtures and synthetic mask builders used across the suite."""

import numpy as np
import pytest

from tipcam.geometry import BrickSpec, CameraModel
from tipcam.knobs import FitWeights
from tipcam.masks import KnobMask


def disc_mask(cx, cy, r, label=1, width=640, height=480, aperture=None):
    """Rasterize a disc the way the estimator counts pixels: pixel
    center (x, y) belongs iff (x-cx)^2 + (y-cy)^2 <= r^2. An optional
    (acx, acy, ar) aperture intersects a second disc, mimicking the
    tool window."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    inside = (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
    if aperture is not None:
        acx, acy, ar = aperture
        inside &= (gx - acx) ** 2 + (gy - acy) ** 2 <= ar * ar
    return KnobMask.from_full(label, inside)


@pytest.fixture
def cam():
    return CameraModel()


@pytest.fixture
def spec():
    return BrickSpec()


@pytest.fixture
def weights():
    return FitWeights()
