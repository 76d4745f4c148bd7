"""Toy illustration: truncated power spline fits are linear left of the first knot."""

import numpy as np
import pandas as pd

from .spline import KnotVector, second_differences, tps_basis

DEMO_KNOT_SETS = (
    (-120.0, -90.0, -60.0, -30.0, -14.0),
    (-60.0, -30.0, -14.0),
    (-30.0, -14.0),
)


def _truth(t):
    return 2.0 / (1.0 + np.exp(-(t + 35.0) / 7.0)) + 0.004 * t


def demo_tps(seed: int = 0, n: int = 150, noise: float = 0.25):
    """Fit a nonlinear toy curve with several knot placements.

    Returns ``(points, curves, checks)``: the simulated data, a long frame
    of fitted curves on a daily grid, and the largest absolute second
    difference of each fit left of its first knot.
    """
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(-180.0, 0.0, n))
    y = _truth(t) + noise * rng.standard_normal(n)
    grid = np.arange(-180.0, 1.0)
    points = pd.DataFrame({"t": t, "value": y})
    frames = [pd.DataFrame({"t": grid, "fit": "truth", "first_knot": np.nan, "value": _truth(grid)})]
    checks = {}
    for knots in DEMO_KNOT_SETS:
        kv = KnotVector(knots)
        A = np.column_stack([np.ones(n), tps_basis(t, kv)])
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
        fitted = np.column_stack([np.ones(grid.size), tps_basis(grid, kv)]) @ coef
        name = "knots_from_" + f"{-knots[0]:g}"
        frames.append(pd.DataFrame({"t": grid, "fit": name, "first_knot": knots[0], "value": fitted}))
        left = fitted[grid <= knots[0]]
        checks[name] = float(np.max(np.abs(second_differences(left)))) if left.size > 2 else 0.0
    return points, pd.concat(frames, ignore_index=True), checks
