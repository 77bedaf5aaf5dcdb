"""
Range geometry: trilateration in an equilateral sensor triangle,
algebraic circle fitting, and the rotating-platform accuracy experiment.

The triangle frame has C at the origin, the x-axis from B to A and z up:
C = (0, 0, 0), A = (s/2, s*sqrt(3)/2, 0), B = (-s/2, s*sqrt(3)/2, 0).
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .utils import DegenerateError, GloveValueError, InconsistentRangesError, write_csv

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['TriangleFrame', 'CircleFit', 'PlatformResult', 'trilaterate', 'ranges_to',
           'fit_circle', 'platform_experiment', 'write_platform_csv']
log = logging.getLogger(__name__)

# z^2 may dip this far below zero (squared) before ranges count as inconsistent
RANGE_TOL = 1e-3
HIST_BIN = 1e-4


@dataclass(frozen=True)
class TriangleFrame(object):
    """Equilateral sensor triangle of side `side` metres."""
    side: float = 0.10

    def __post_init__(self):
        if not self.side > 0:
            raise GloveValueError("triangle side must be positive")

    @property
    def height(self):
        return self.side * np.sqrt(3) / 2

    @property
    def vertices(self):
        """A, B, C as rows"""
        s, h = self.side, self.height
        return np.array([[s / 2, h, 0.], [-s / 2, h, 0.], [0., 0., 0.]])

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)


def ranges_to(frame, point):
    """(dA, dB, dC) from the triangle vertices to `point` (..., 3)"""
    point = np.asarray(point, dtype=float)
    return tuple(np.linalg.norm(point - v, axis=-1) for v in frame.vertices)


def trilaterate(frame, dA, dB, dC):
    """
    Position of a point from its ranges to A, B and C, taking the
    non-negative z root. Accepts scalars or equal-shape arrays.
    """
    dA, dB, dC = (np.asarray(d, dtype=float) for d in (dA, dB, dC))
    if np.any(dA <= 0) or np.any(dB <= 0) or np.any(dC <= 0):
        raise GloveValueError("ranges must be positive")
    s, h = frame.side, frame.height
    x = (dB ** 2 - dA ** 2) / (2 * s)
    y = (dC ** 2 - dA ** 2 - s * x + s ** 2) / (2 * h)
    z2 = dC ** 2 - x ** 2 - y ** 2
    if np.any(z2 < -RANGE_TOL ** 2):
        raise InconsistentRangesError(
            "ranges do not meet: z^2 = %.3g m^2" % np.min(z2))
    z = np.sqrt(np.maximum(z2, 0.))
    return np.stack([x, y, z], axis=-1)


class CircleFit(namedtuple('CircleFit', ['center', 'radius', 'residuals'])):
    """
    Best-fit circle.

    Attributes
    ----------
    center  : array (2,)
    radius  : float
    residuals  : array (n,)
        |distance to centre - radius| per point.
    """
    __slots__ = ()

    @property
    def mean_residual(self):
        return float(np.mean(self.residuals))


def fit_circle(points):
    """
    Algebraic (Kasa) least-squares circle through >= 3 non-collinear
    2-D points.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise GloveValueError("need at least three 2-D points")
    # shift for conditioning; residuals are translation invariant
    shift = p.mean(axis=0)
    q = p - shift
    A = np.column_stack([2 * q, np.ones(len(q))])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateError("points are collinear")
    b = np.sum(q ** 2, axis=1)
    (cx, cy, c), *_ = np.linalg.lstsq(A, b, rcond=None)
    radius = np.sqrt(c + cx ** 2 + cy ** 2)
    center = np.array([cx, cy]) + shift
    residuals = np.abs(np.linalg.norm(p - center, axis=1) - radius)
    return CircleFit(center, float(radius), residuals)


PlatformResult = namedtuple('PlatformResult', ['points', 'fit', 'mean_error', 'histogram'])


def platform_experiment(frame=None, d_true=None, steps=360, noise_sigma=0.0005, seed=0):
    """
    Simulate a fixed point D observed from a triangle rotating about the
    vertical axis through its centroid: noisy ranges at every step are
    trilaterated and the X-Y projections fitted with a circle.

    Parameters
    ----------
    frame  : TriangleFrame, optional
        [default: side 0.10 m].
    d_true  : 3-vector, optional
        D in the triangle frame at step 0
        [default: centroid + (0.06, 0, 0.03) m, a 0.06 m circle].
        Range to baseline ratio 0.6. A 0.06 m triangle under a 0.12 m
        circle has ratio 2 and about 1.4 mm lateral error per 0.5 mm of
        range noise.
    steps  : int, optional
        Number of equally spaced rotation angles (>= 8) [default: 360].
    noise_sigma  : float, optional
        Range noise std [default: 0.0005 m].
    seed  : int, optional

    Returns
    -------
    PlatformResult(points (steps, 3), fit, mean_error [m],
                   histogram (counts, bin_edges) at 0.1 mm bins)
    """
    frame = frame or TriangleFrame()
    if steps < 8:
        raise GloveValueError("platform experiment needs >= 8 steps")
    g = frame.centroid
    d_true = g + np.array([0.06, 0., 0.03]) if d_true is None else np.asarray(d_true, float)
    rng = np.random.default_rng(seed)
    phi = 2 * np.pi * np.arange(steps) / steps
    rel = d_true - g
    c, s = np.cos(phi), np.sin(phi)
    # D seen from the rotating frame
    track = np.column_stack([g[0] + c * rel[0] - s * rel[1],
                             g[1] + s * rel[0] + c * rel[1],
                             np.full(steps, d_true[2])])
    ranges = [r + rng.normal(0., noise_sigma, steps) for r in ranges_to(frame, track)]
    points = trilaterate(frame, *ranges)
    fit = fit_circle(points[:, :2])
    mean_error = fit.mean_residual
    top = max(fit.residuals.max(), HIST_BIN)
    edges = np.arange(0., top + HIST_BIN, HIST_BIN)
    if len(edges) < 2:
        edges = np.array([0., HIST_BIN])
    hist = np.histogram(fit.residuals, bins=edges)
    log.info("platform: radius %.4f m, mean error %.3f mm over %d steps",
             fit.radius, mean_error * 1e3, steps)
    return PlatformResult(points, fit, mean_error, hist)


def write_platform_csv(result, points_path, hist_path):
    """Write (x, y, residual) rows and the residual histogram."""
    write_csv(points_path, ['x', 'y', 'residual'],
              [(float(x), float(y), float(r))
               for (x, y, _), r in zip(result.points, result.fit.residuals)])
    counts, edges = result.histogram
    write_csv(hist_path, ['bin_lo_mm', 'bin_hi_mm', 'count'],
              [(float(lo * 1e3), float(hi * 1e3), int(n))
               for lo, hi, n in zip(edges[:-1], edges[1:], counts)])
