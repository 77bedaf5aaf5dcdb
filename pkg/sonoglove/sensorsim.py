"""
Simulated ultrasonic sensors on the hand: placement, pairwise range
matrices, measurement augmentation and network input encoding.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .kinematics import FINGERS, default_skeleton, palm_frame
from .utils import GloveKeyError, GloveValueError, check_finite

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['SensorLayout', 'AugmentConfig', 'MISSING', 'D_MAX', 'MAX_RANGE',
           'standard_layout', 'jitter_layout', 'sensor_positions', 'measure',
           'augment', 'encode_input', 'masked_fraction']
log = logging.getLogger(__name__)

MISSING = -1.0
D_MAX = 0.3
MAX_RANGE = 0.5
MAX_OFFSET = 0.02
# sensor package thickness: sits on the back of the segment
DEFAULT_OFFSET = (0.0, 0.004, 0.0)
TIPS = tuple(f + '_tip' for f in FINGERS)


@dataclass(frozen=True, eq=False)
class SensorLayout(object):
    """
    Sensors attached to hand landmarks.

    Parameters
    ----------
    attachments  : tuple of (str, array (3,))
        Landmark name and offset [m] in that landmark's local frame
        (x lateral, y dorsal, z along the segment).
    """
    attachments: tuple

    def __post_init__(self):
        if len(self.attachments) < 2:
            raise GloveValueError("a layout needs at least two sensors")
        for name, off in self.attachments:
            off = np.asarray(off, dtype=float)
            if off.shape != (3,) or not np.all(np.isfinite(off)):
                raise GloveValueError("bad offset for " + repr(name))
            if np.linalg.norm(off) > MAX_OFFSET + 1e-12:
                raise GloveValueError("offset of %r exceeds %g m" % (name, MAX_OFFSET))

    @property
    def n(self):
        return len(self.attachments)

    @property
    def landmarks(self):
        return [name for name, _ in self.attachments]

    @property
    def offsets(self):
        return np.array([off for _, off in self.attachments], dtype=float)

    @property
    def n_pairs(self):
        return self.n * (self.n - 1) // 2

    def to_dict(self):
        return {'attachments': [
            {'landmark': name, 'offset': [float(v) for v in off]}
            for name, off in self.attachments]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple((a['landmark'], np.asarray(a.get('offset', DEFAULT_OFFSET), float))
                         for a in d['attachments']))


def standard_layout(n, offset=DEFAULT_OFFSET):
    """
    Fingertip-based layouts for 5-8 sensors.

    Parameters
    ----------
    n  : int
        5: fingertips; 6: + wrist; 7: fingertips + index_root + pinky_root;
        8: the 7-sensor layout + wrist.
    offset  : 3-tuple, optional
        Local offset applied to every sensor [default: 4 mm dorsal].
    """
    names = {5: TIPS, 6: TIPS + ('wrist',), 7: TIPS + ('index_root', 'pinky_root'),
             8: TIPS + ('index_root', 'pinky_root', 'wrist')}
    try:
        chosen = names[n]
    except KeyError:
        raise GloveValueError("standard layouts have 5-8 sensors, not %r" % (n,))
    off = np.asarray(offset, dtype=float)
    return SensorLayout(tuple((name, off.copy()) for name in chosen))


def jitter_layout(layout, sigma, rng):
    """
    Perturb every sensor offset by isotropic Gaussian noise of `sigma`
    metres, keeping offsets within the package limit.
    """
    out = []
    for name, off in layout.attachments:
        new = off + rng.normal(0., sigma, 3)
        norm = np.linalg.norm(new)
        if norm > MAX_OFFSET:
            new *= MAX_OFFSET / norm
        out.append((name, new))
    return SensorLayout(tuple(out))


def _local_frames(points, idx, skeleton):
    """
    Rotation rows (..., len(idx), 3, 3) of each landmark's local frame:
    palm frame for the wrist and landmarks rigidly hung from it, otherwise
    z along the incoming segment, y dorsal (perpendicular to the palm's
    lateral axis).
    """
    _, palm = palm_frame(points, skeleton)
    lateral = palm[..., 0, :]
    frames = []
    for j in idx:
        p = skeleton.parents[j]
        if p <= 0:
            frames.append(palm)
            continue
        seg = points[..., j, :] - points[..., p, :]
        z = seg / np.linalg.norm(seg, axis=-1, keepdims=True)
        y = np.cross(z, lateral)
        y /= np.linalg.norm(y, axis=-1, keepdims=True)
        x = np.cross(y, z)
        frames.append(np.stack([x, y, z], axis=-2))
    return np.stack(frames, axis=-3)


def sensor_positions(points, layout, skeleton=None):
    """Sensor world positions (..., N, 3) for posed landmarks (..., n, 3)."""
    skeleton = skeleton or default_skeleton()
    points = np.asarray(points, dtype=float)
    try:
        idx = [skeleton.index[name] for name in layout.landmarks]
    except KeyError as e:
        raise GloveKeyError("unknown landmark in layout: " + str(e))
    pos = points[..., idx, :]
    offsets = layout.offsets
    if np.any(offsets):
        frames = _local_frames(points, idx, skeleton)
        pos = pos + np.einsum('nk,...nkj->...nj', offsets, frames)
    return pos


def measure(points, layout, skeleton=None):
    """
    Exact pairwise sensor ranges (..., N, N) [m]: symmetric, zero diagonal,
    nothing missing.
    """
    pos = sensor_positions(points, layout, skeleton)
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    return check_finite('distance matrix', np.sqrt(np.sum(diff ** 2, axis=-1)))


@dataclass
class AugmentConfig(object):
    """
    Measurement imperfections.

    Parameters
    ----------
    noise_sigma  : float, optional
        Gaussian range noise [default: 0.001 m].
    mask_prob  : float, optional
        Probability that an off-diagonal entry is missing [default: 0.01].
    sensor_jitter  : float, optional
        Per-sensor placement perturbation applied once per domain
        [default: 0 m].
    seed  : int, optional
        [default: 0].
    """
    noise_sigma: float = 0.001
    mask_prob: float = 0.01
    sensor_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.mask_prob < 1:
            raise GloveValueError("mask_prob must lie in [0, 1)")
        if self.noise_sigma < 0 or self.sensor_jitter < 0:
            raise GloveValueError("noise_sigma and sensor_jitter must be >= 0")


def augment(m, cfg, seed=None):
    """
    Independently mask (to `MISSING`) or noise every off-diagonal entry
    of exact range matrices (..., N, N); noisy ranges are clipped into
    [0, `MAX_RANGE`]. The result need not be symmetric.

    Parameters
    ----------
    seed  : int or numpy Generator, optional
        Overrides `cfg.seed`.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise GloveValueError("augment expects exact ranges without missing entries")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        cfg.seed if seed is None else seed)
    mask = rng.random(m.shape) < cfg.mask_prob
    out = np.clip(m + rng.normal(0., 1., m.shape) * cfg.noise_sigma, 0., MAX_RANGE)
    out[mask] = MISSING
    n = m.shape[-1]
    out[..., np.arange(n), np.arange(n)] = 0.
    return out


def masked_fraction(m):
    """fraction of off-diagonal entries marked missing"""
    m = np.asarray(m)
    n = m.shape[-1]
    off = ~np.eye(n, dtype=bool)
    return float(np.mean(m[..., off] == MISSING)) if m.size else 0.


def encode_input(m, d_max=D_MAX):
    """
    Network input: valid ranges divided by `d_max`, the `MISSING`
    sentinel passed through, zero diagonal.
    """
    if not d_max > 0:
        raise GloveValueError("d_max must be positive")
    m = np.asarray(m, dtype=float)
    out = np.where(m == MISSING, MISSING, m / d_max)
    n = m.shape[-1]
    out[..., np.arange(n), np.arange(n)] = 0.
    return out
