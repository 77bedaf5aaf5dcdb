"""
Synthetic articulated hand: skeleton, forward kinematics, PCA pose basis,
pose-sequence sampling and pose normalisation.

Coordinates are metres in the wrist frame: +Z runs from the wrist towards
the middle finger, +X towards the index finger and +Y out of the back of
the hand (the palm faces -Y). Positive flexion bends a segment towards
the palm.

Usage:
>>> from sonoglove.kinematics import default_skeleton, forward_kinematics
>>> skel = default_skeleton()
>>> points = forward_kinematics(skel, skel.rest_angles())
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from warnings import warn

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial.transform import Rotation

from .utils import (
    DegenerateError, GloveClampWarning, GloveKeyError, GloveValueError, LimitError, check_shape,
    child_seeds)

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['HandSkeleton', 'PoseBasis', 'FINGERS', 'CHAIN', 'WINDOW',
           'make_skeleton', 'default_skeleton', 'forward_kinematics',
           'forward_kinematics_batch', 'kinematic_vjp', 'fit_pose_basis',
           'project_pose', 'decode_pose', 'decode_pose_batch',
           'sample_pose_sequences', 'sample_keyframe_curves', 'normalize_pose',
           'palm_frame']
log = logging.getLogger(__name__)

FINGERS = ('thumb', 'index', 'middle', 'ring', 'pinky')
CHAIN = ('base', 'mid1', 'mid2', 'tip')
PALM_LANDMARKS = ('index_root', 'pinky_root')
N_LANDMARKS = 1 + len(FINGERS) * len(CHAIN) + len(PALM_LANDMARKS)
N_DOF = 22
WINDOW = 5
KEYFRAME_SPACING = 20
_LIMIT_TOL = 1e-12
_Y = np.array([0., 1., 0.])

# defaults for an 18 cm hand (wrist to middle fingertip)
DEFAULT_BASES = {
    'thumb': (0.022, -0.012, 0.030),
    'index': (0.022, 0.0, 0.080),
    'middle': (0.0, 0.0, 0.085),
    'ring': (-0.019, 0.0, 0.080),
    'pinky': (-0.036, 0.0, 0.071)}
DEFAULT_PHALANGES = {
    'thumb': (0.046, 0.032, 0.028),
    'index': (0.043, 0.025, 0.022),
    'middle': (0.045, 0.028, 0.025),
    'ring': (0.042, 0.027, 0.024),
    'pinky': (0.034, 0.020, 0.020)}
DEFAULT_DIRECTIONS = {
    'thumb': (0.62, -0.35, 0.70),
    'index': (0.06, 0.0, 1.0),
    'middle': (0.0, 0.0, 1.0),
    'ring': (-0.05, 0.0, 1.0),
    'pinky': (-0.12, 0.0, 1.0)}
DEFAULT_PALM = {
    'index_root': (0.024, 0.012, 0.072),
    'pinky_root': (-0.036, 0.010, 0.063)}
# (lo, hi) radians per DOF kind; thumb has its own row
DEFAULT_LIMITS = {
    'finger': {'base_flex': (-0.3, 1.6), 'base_abd': (-0.35, 0.35),
               'mid1_flex': (0.0, 1.8), 'mid2_flex': (0.0, 1.4)},
    'thumb': {'base_flex': (-0.3, 0.9), 'base_abd': (-0.4, 0.6),
              'mid1_flex': (0.0, 1.0), 'mid2_flex': (-0.2, 1.3)},
    'arch': (0.0, 0.3)}
# metacarpals with a palm-arch DOF
ARCH_FINGERS = ('ring', 'pinky')


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateError("zero-length direction")
    return v / n


@dataclass(frozen=True, eq=False)
class HandSkeleton(object):
    """
    Articulated hand topology, rest geometry and DOF definitions.

    Landmarks are topologically ordered (parents precede children);
    every non-root landmark owns the segment from its parent to itself.

    Parameters
    ----------
    landmarks  : tuple of str
    parents  : tuple of int
        Parent landmark index, -1 for the root.
    lengths  : array (n,)
        Rest length of each landmark's incoming segment [m].
    rest_directions  : array (n, 3)
        Unit segment directions in the wrist frame.
    dof_names  : tuple of str
    dof_segments  : tuple of int
        Landmark whose incoming segment each DOF rotates.
    dof_axes  : array (D, 3)
        Rotation axes in the rest wrist frame.
    limits  : array (D, 2)
    """
    landmarks: tuple
    parents: tuple
    lengths: np.ndarray
    rest_directions: np.ndarray
    dof_names: tuple
    dof_segments: tuple
    dof_axes: np.ndarray
    limits: np.ndarray
    index: dict = field(init=False, repr=False)
    segment_dofs: tuple = field(init=False, repr=False)
    subtrees: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.landmarks)
        if n != N_LANDMARKS:
            raise GloveValueError("expected %d landmarks, got %d" % (N_LANDMARKS, n))
        if [p for p in self.parents].count(-1) != 1 or self.parents[0] != -1:
            raise GloveValueError("skeleton needs exactly one root, listed first")
        if any(not 0 <= p < i for i, p in enumerate(self.parents) if i):
            raise GloveValueError("landmarks must be topologically ordered")
        if np.any(self.lengths[1:] <= 0):
            raise GloveValueError("segment lengths must be positive")
        norms = np.linalg.norm(self.rest_directions[1:], axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise GloveValueError("rest directions must be unit vectors")
        if len(self.dof_names) != N_DOF or len(self.dof_segments) != N_DOF:
            raise GloveValueError("expected %d DOF" % N_DOF)
        if np.any(self.limits[:, 0] > self.limits[:, 1]):
            raise GloveValueError("limit intervals must have lo <= hi")
        index = {name: i for i, name in enumerate(self.landmarks)}
        if len(index) != n:
            raise GloveValueError("landmark names must be unique")
        seg_dofs = [[] for _ in range(n)]
        # abduction is applied before flexion on the same segment
        for k in sorted(range(N_DOF), key=lambda k: 'flex' in self.dof_names[k]):
            seg_dofs[self.dof_segments[k]].append(k)
        children = [[] for _ in range(n)]
        for i, p in enumerate(self.parents):
            if p >= 0:
                children[p].append(i)
        subtrees = []
        for i in range(n):
            stack, sub = [i], []
            while stack:
                j = stack.pop()
                sub.append(j)
                stack.extend(children[j])
            subtrees.append(np.array(sorted(sub)))
        object.__setattr__(self, 'index', index)
        object.__setattr__(self, 'segment_dofs', tuple(map(tuple, seg_dofs)))
        object.__setattr__(self, 'subtrees', tuple(subtrees))

    @property
    def n_dof(self):
        return len(self.dof_names)

    @property
    def segments(self):
        """list of (parent, child, rest length)"""
        return [(self.landmarks[p], self.landmarks[i], float(self.lengths[i]))
                for i, p in enumerate(self.parents) if p >= 0]

    @property
    def dof_map(self):
        """{angle index: (segment child landmark, rest-frame axis)}"""
        return {k: (self.landmarks[s], self.dof_axes[k])
                for k, s in enumerate(self.dof_segments)}

    @property
    def hand_length(self):
        """wrist to middle fingertip along the rest chain [m]"""
        i = self.index['middle_tip']
        total = 0.
        while i > 0:
            total += self.lengths[i]
            i = self.parents[i]
        return float(total)

    def landmark(self, name):
        try:
            return self.index[name]
        except KeyError:
            raise GloveKeyError("unknown landmark: " + repr(name))

    def chain_length(self, finger):
        """rest length of the base -> tip chain of `finger`"""
        return float(sum(self.lengths[self.landmark(finger + '_' + c)] for c in CHAIN[1:]))

    def rest_angles(self):
        """all-zero angles, clipped into the limits"""
        return np.clip(np.zeros(self.n_dof), self.limits[:, 0], self.limits[:, 1])

    def check_limits(self, theta):
        """raise `LimitError` naming the first out-of-limit DOF of (..., D) `theta`"""
        theta = np.asarray(theta, dtype=float)
        flat = theta.reshape(-1, theta.shape[-1]) if theta.ndim else theta.reshape(1, -1)
        check_shape('theta', flat, (None, self.n_dof))
        lo, hi = self.limits[:, 0], self.limits[:, 1]
        bad = (flat < lo - _LIMIT_TOL) | (flat > hi + _LIMIT_TOL) | ~np.isfinite(flat)
        if np.any(bad):
            row, k = np.argwhere(bad)[0]
            raise LimitError(self.dof_names[k], flat[row, k], lo[k], hi[k])
        return theta

    def clamp(self, theta):
        return np.clip(theta, self.limits[:, 0], self.limits[:, 1])

    def scaled(self, factor):
        """copy with every segment length multiplied by `factor`"""
        if not factor > 0:
            raise GloveValueError("scale factor must be positive")
        return HandSkeleton(self.landmarks, self.parents, self.lengths * factor,
                            self.rest_directions, self.dof_names, self.dof_segments,
                            self.dof_axes, self.limits)


def make_skeleton(bases=None, phalanges=None, directions=None, palm=None, limits=None):
    """
    Build a `HandSkeleton` from geometry tables; any omitted table falls
    back to the shipped defaults.

    Parameters
    ----------
    bases  : dict, optional
        finger -> base landmark position in the wrist frame [m].
    phalanges  : dict, optional
        finger -> three segment lengths base->mid1->mid2->tip [m].
    directions  : dict, optional
        finger -> rest direction of the finger chain (normalised here).
    palm  : dict, optional
        'index_root'/'pinky_root' -> rigid position in the wrist frame [m].
    limits  : dict, optional
        Same layout as `DEFAULT_LIMITS`.
    """
    bases = dict(DEFAULT_BASES, **(bases or {}))
    phalanges = dict(DEFAULT_PHALANGES, **(phalanges or {}))
    directions = dict(DEFAULT_DIRECTIONS, **(directions or {}))
    palm = dict(DEFAULT_PALM, **(palm or {}))
    lims = {'finger': dict(DEFAULT_LIMITS['finger']),
            'thumb': dict(DEFAULT_LIMITS['thumb']), 'arch': DEFAULT_LIMITS['arch']}
    for key, val in (limits or {}).items():
        if key not in lims:
            raise GloveKeyError("unknown limits group: " + repr(key))
        if key == 'arch':
            lims[key] = tuple(val)
        else:
            lims[key].update(val)

    names, parents, lengths, dirs = ['wrist'], [-1], [0.], [np.zeros(3)]
    for f in FINGERS:
        base = np.asarray(bases[f], dtype=float)
        names.append(f + '_base')
        parents.append(0)
        lengths.append(np.linalg.norm(base))
        dirs.append(_unit(base))
        d = _unit(directions[f])
        for c, length in zip(CHAIN[1:], phalanges[f]):
            names.append(f + '_' + c)
            parents.append(len(names) - 2)
            lengths.append(float(length))
            dirs.append(d)
    for name in PALM_LANDMARKS:
        pos = np.asarray(palm[name], dtype=float)
        names.append(name)
        parents.append(0)
        lengths.append(np.linalg.norm(pos))
        dirs.append(_unit(pos))

    dof_names, dof_segments, axes, limit_rows = [], [], [], []
    for f in FINGERS:
        d = _unit(directions[f])
        flex = _unit(np.cross(_Y, d))
        abd = _unit(np.cross(d, flex))
        table = lims['thumb' if f == 'thumb' else 'finger']
        for kind, seg, axis in (('base_flex', 'mid1', flex), ('base_abd', 'mid1', abd),
                                ('mid1_flex', 'mid2', flex), ('mid2_flex', 'tip', flex)):
            dof_names.append(f + '_' + kind)
            dof_segments.append(names.index(f + '_' + seg))
            axes.append(axis)
            limit_rows.append(table[kind])
    for f in ARCH_FINGERS:
        i = names.index(f + '_base')
        dof_names.append(f + '_arch_flex')
        dof_segments.append(i)
        axes.append(_unit(np.cross(_Y, dirs[i])))
        limit_rows.append(lims['arch'])

    return HandSkeleton(tuple(names), tuple(parents), np.array(lengths), np.array(dirs),
                        tuple(dof_names), tuple(dof_segments), np.array(axes),
                        np.array(limit_rows, dtype=float))


@lru_cache(maxsize=1)
def default_skeleton():
    """The shipped 23-landmark, 22-DOF hand."""
    return make_skeleton()


def forward_kinematics_batch(skeleton, thetas, full_output=False):
    """
    Landmark positions for a batch of angle vectors (no limit check).

    Parameters
    ----------
    thetas  : array (B, D)
    full_output  : bool, optional
        If true, also return the world rotation axis and origin of every
        DOF, as needed by `kinematic_vjp`.

    Returns
    -------
    points  : array (B, n, 3)
    axes, origins  : arrays (B, D, 3), only if `full_output`.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    check_shape('thetas', thetas, (None, skeleton.n_dof))
    B, n = len(thetas), len(skeleton.landmarks)
    points = np.zeros((B, n, 3))
    rots = np.empty((B, n, 3, 3))
    rots[:, 0] = np.eye(3)
    axes = np.zeros((B, skeleton.n_dof, 3))
    origins = np.zeros((B, skeleton.n_dof, 3))
    for j in range(1, n):
        p = skeleton.parents[j]
        R = rots[:, p]
        for k in skeleton.segment_dofs[j]:
            local = skeleton.dof_axes[k]
            axes[:, k] = R @ local
            origins[:, k] = points[:, p]
            R = R @ Rotation.from_rotvec(np.outer(thetas[:, k], local)).as_matrix()
        rots[:, j] = R
        points[:, j] = points[:, p] + R @ (skeleton.lengths[j] * skeleton.rest_directions[j])
    if full_output:
        return points, axes, origins
    return points


def forward_kinematics(skeleton, theta):
    """
    Landmark positions (n, 3) in the wrist frame for one in-limit angle
    vector; raises `LimitError` naming the first offending DOF.
    """
    theta = skeleton.check_limits(theta)
    check_shape('theta', theta, (skeleton.n_dof,))
    return forward_kinematics_batch(skeleton, theta[None])[0]


def kinematic_vjp(skeleton, points, axes, origins, grad_points):
    """
    Vector-Jacobian product of forward kinematics: d(loss)/d(theta) given
    d(loss)/d(points), using the geometric Jacobian
    d p_j / d theta_k = w_k x (p_j - o_k) for landmarks j below DOF k.
    """
    grad = np.zeros(axes.shape[:2])
    for k, seg in enumerate(skeleton.dof_segments):
        idx = skeleton.subtrees[seg]
        r = points[:, idx] - origins[:, k, None]
        torque = np.cross(r, grad_points[:, idx]).sum(axis=1)
        grad[:, k] = np.einsum('bi,bi->b', axes[:, k], torque)
    return grad


@dataclass(frozen=True, eq=False)
class PoseBasis(object):
    """
    PCA model over joint angles.

    Parameters
    ----------
    mean  : array (D,)
    components  : array (K, D)
        Orthonormal rows, by descending explained variance.
    explained_variance  : array (K,)
    """
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        K, D = self.components.shape
        if K > D or self.mean.shape != (D,):
            raise GloveValueError("basis shape mismatch: K=%d D=%d" % (K, D))
        gram = self.components @ self.components.T
        if np.max(np.abs(gram - np.eye(K))) > 1e-6:
            raise GloveValueError("basis components are not orthonormal")

    @property
    def n_components(self):
        return self.components.shape[0]


def fit_pose_basis(angle_corpus, k=12):
    """
    Fit a `PoseBasis` with `k` components to an (M, D) angle corpus.
    """
    X = np.asarray(angle_corpus, dtype=float)
    if X.ndim != 2:
        raise GloveValueError("corpus must be a 2-D (M, D) matrix")
    M, D = X.shape
    if M <= k:
        raise GloveValueError("need more poses (%d) than components (%d)" % (M, k))
    if k > D:
        raise GloveValueError("cannot fit %d components in %d dimensions" % (k, D))
    if not np.all(np.isfinite(X)):
        raise GloveValueError("corpus holds non-finite angles")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1., np.abs(mean).max()):
        raise DegenerateError("zero-variance pose corpus")
    comps = vt[:k]
    # deterministic signs: largest-magnitude entry of each row positive
    signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps = comps * signs[:, None]
    var = np.zeros(k)
    var[:min(k, s.size)] = s[:k] ** 2 / (M - 1)
    log.debug("pose basis: %d/%d components keep %.4g of variance",
              k, D, var.sum() / max((s ** 2).sum() / (M - 1), 1e-300))
    return PoseBasis(mean, comps, var)


def project_pose(basis, theta):
    """coefficients of `theta` (..., D) in `basis`"""
    return (np.asarray(theta, dtype=float) - basis.mean) @ basis.components.T


def decode_pose_batch(basis, coeffs, skeleton):
    """
    Batched `decode_pose`.

    Returns
    -------
    points  : array (B, n, 3)
    cache  : dict
        'axes', 'origins' (for `kinematic_vjp`) and 'free' (bool (B, D),
        false where an angle was clamped).
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    check_shape('coeffs', coeffs, (None, basis.n_components))
    raw = basis.mean + coeffs @ basis.components
    theta = skeleton.clamp(raw)
    free = theta == raw
    points, axes, origins = forward_kinematics_batch(skeleton, theta, full_output=True)
    return points, {'axes': axes, 'origins': origins, 'free': free, 'theta': theta}


def decode_pose(basis, coeffs, skeleton, full_output=False):
    """
    Joint positions for pose-basis coefficients: angles are
    `mean + coeffs @ components`, clamped into the limits, then posed.

    Parameters
    ----------
    full_output  : bool, optional
        If true, return `(points, n_clamped)` [default: False].
    """
    points, cache = decode_pose_batch(basis, coeffs, skeleton)
    n_clamped = int((~cache['free']).sum())
    if n_clamped:
        warn("decode_pose: clamped %d angle(s) into their limits" % n_clamped,
             GloveClampWarning, stacklevel=2)
    if full_output:
        return points[0], n_clamped
    return points[0]


def sample_keyframe_curves(rng, length, lo, hi, spacing=KEYFRAME_SPACING):
    """
    Smooth (length, len(lo)) trajectory through uniform random keyframes
    every `spacing` frames, shape-preserving cubic interpolation between
    them (so values never leave [lo, hi]).
    """
    n_key = max(2, -(-(length - 1) // spacing) + 1)
    times = np.arange(n_key) * spacing
    keys = rng.uniform(lo, hi, size=(n_key, len(lo)))
    curve = PchipInterpolator(times, keys, axis=0)(np.arange(length))
    return np.clip(curve, lo, hi)


def sample_pose_sequences(count, length, seed, skeleton=None, spacing=KEYFRAME_SPACING):
    """
    `count` smooth in-limit angle trajectories of `length` frames each.

    Returns
    -------
    list of arrays (length, D), deterministic given `seed`.
    """
    if length < WINDOW:
        raise GloveValueError("sequence length %d < window %d" % (length, WINDOW))
    skeleton = skeleton or default_skeleton()
    lo, hi = skeleton.limits[:, 0], skeleton.limits[:, 1]
    return [sample_keyframe_curves(np.random.default_rng(s), length, lo, hi, spacing)
            for s in child_seeds(seed, count)]


def palm_frame(points, skeleton=None):
    """
    Rigid palm frame of posed landmarks (..., n, 3).

    Returns
    -------
    origin  : array (..., 3)
        The wrist.
    rot  : array (..., 3, 3)
        Rows are the frame's x, y, z axes: z towards the middle-finger base,
        x towards the index-finger base (orthogonalised).
    """
    skeleton = skeleton or default_skeleton()
    points = np.asarray(points, dtype=float)
    origin = points[..., skeleton.landmark('wrist'), :]
    mid = points[..., skeleton.landmark('middle_base'), :] - origin
    idx = points[..., skeleton.landmark('index_base'), :] - origin
    mid_n = np.linalg.norm(mid, axis=-1, keepdims=True)
    if np.any(mid_n < 1e-9):
        raise DegenerateError("middle-finger base coincides with the wrist")
    z = mid / mid_n
    x = idx - np.sum(idx * z, axis=-1, keepdims=True) * z
    x_n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(x_n < 1e-9 * np.maximum(1., np.linalg.norm(idx, axis=-1, keepdims=True))):
        raise DegenerateError("wrist, middle base and index base are collinear")
    x = x / x_n
    y = np.cross(z, x)
    return origin, np.stack([x, y, z], axis=-2)


def normalize_pose(points, skeleton=None):
    """
    Rigidly move a pose (..., n, 3) so the wrist is at the origin, the
    middle-finger base on +Z and the index-finger base in the X-Z plane
    with x > 0.
    """
    origin, rot = palm_frame(points, skeleton)
    return np.einsum('...ij,...nj->...ni', rot, np.asarray(points) - origin[..., None, :])
