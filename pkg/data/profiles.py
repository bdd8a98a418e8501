"""Static table of radial mollifier profiles B for the localization kernel family.

Each profile is a continuous function of r = |z| supported in [0, 1) and
normalized so that the integral of B(|z|) over (-1, 1) equals one. ``smooth``
marks profiles whose Laplacian is bounded (needed for the lambda estimate).
"""

import math

import numpy as np

# truncated Gaussian width, in units of the support radius
GAUSSIAN_PROFILE_WIDTH = 1.0 / 3.0

_GAUSSIAN_FLOOR = math.exp(-1.0 / (2.0 * GAUSSIAN_PROFILE_WIDTH ** 2))
_GAUSSIAN_NORM = (
    GAUSSIAN_PROFILE_WIDTH * math.sqrt(2.0 * math.pi)
    * math.erf(1.0 / (GAUSSIAN_PROFILE_WIDTH * math.sqrt(2.0)))
    - 2.0 * _GAUSSIAN_FLOOR
)

# integral of exp(-1/(1-z^2)) over (-1, 1)
_BUMP_NORM = 0.44399381616807943


def _inside(r: np.ndarray) -> np.ndarray:
    return np.abs(r) < 1.0


def hat(r):
    r = np.abs(np.asarray(r, dtype=float))
    return np.where(_inside(r), 1.0 - r, 0.0)


def cosine(r):
    r = np.abs(np.asarray(r, dtype=float))
    return np.where(_inside(r), 0.5 * (1.0 + np.cos(np.pi * r)), 0.0)


def bump(r):
    r = np.abs(np.asarray(r, dtype=float))
    inside = _inside(r)
    safe = np.where(inside, r, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe ** 2)) / _BUMP_NORM, 0.0)


def gaussian(r):
    r = np.abs(np.asarray(r, dtype=float))
    values = np.exp(-r ** 2 / (2.0 * GAUSSIAN_PROFILE_WIDTH ** 2)) - _GAUSSIAN_FLOOR
    return np.where(_inside(r), values / _GAUSSIAN_NORM, 0.0)


MOLLIFIER_PROFILES = {
    "hat": {"function": hat, "smooth": False},
    "cosine": {"function": cosine, "smooth": True},
    "bump": {"function": bump, "smooth": True},
    "gaussian": {"function": gaussian, "smooth": False},
}
