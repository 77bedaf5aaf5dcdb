"""
Encoder-decoder pose regressor over windows of sensor distance matrices.

Per frame, a row-shared MLP embeds each sensor's range row (Z1),
multi-head self-attention mixes sensors (Z2), the two are concatenated
(Z3), flattened and passed through the decoder MLP (Z4). An LSTM
summarises the Z4 of the last `window` frames and a head MLP regresses
either pose-basis coefficients (decoded to joint positions) or the five
servo commands of the mechanical hand.

Usage:
>>> from sonoglove.posenet import ModelConfig, PoseNet
>>> model = PoseNet(ModelConfig(head='servo'))
>>> servo = model.forward_window(frames)  # frames: (5, 7, 7) encoded
"""
import logging
from collections import namedtuple
from dataclasses import asdict, dataclass, fields

import numpy as np

from .contrib.progress import TrainProgress
from .kinematics import CHAIN, FINGERS, decode_pose_batch, default_skeleton, kinematic_vjp
from .nn import (
    AdamState, ParamSet, activation_backward, activation_forward, adam_step, glorot_uniform,
    linear_backward, linear_forward, lstm_backward, lstm_sequence, lstm_step, mha_backward,
    mha_forward, mse_loss)
from .utils import DatasetError, DegenerateError, GloveKeyError, GloveValueError, ShapeError

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['ModelConfig', 'TrainConfig', 'PoseNet', 'WindowSet', 'init_params',
           'parameter_count', 'encode', 'forward_window', 'train', 'evaluate',
           'pose_metrics', 'servo_metrics', 'nn_baseline', 'nn_baseline_batch',
           'pseudo_gt_filter', 'filter_pseudo_gt', 'VARIANTS']
log = logging.getLogger(__name__)

PSEUDO_GT_THRESHOLD = 0.004
# ablation name -> ModelConfig overrides
VARIANTS = {
    'full': {},
    'no_seq': {'sequence': False},
    'no_atten': {'attention': False},
    'no_skip': {'skip': False}}


@dataclass
class ModelConfig(object):
    """
    Architecture of a `PoseNet`.

    Parameters
    ----------
    n_sensors  : int, optional
        [default: 7].
    enc_hidden, enc_out  : int, optional
        Row-shared encoder MLP widths [default: 32, 32].
    heads  : int, optional
        Attention heads, 1-4 [default: 2].
    d_k  : int, optional
        Per-head query/key/value width [default: 64].
    attn_out  : int, optional
        Attention output width [default: 64].
    attention, skip, sequence  : bool, optional
        Pathway toggles for ablations [default: True].
    window  : int, optional
        Frames per prediction [default: 5].
    dec_hidden, dec_out  : int, optional
        Decoder MLP widths; `dec_out` is also the LSTM size [default: 256, 256].
    head_hidden  : int, optional
        [default: 128].
    head  : str, optional
        'pose' (pose-basis coefficients) or 'servo' [default: 'pose'].
    n_coeffs  : int, optional
        [default: 12].
    n_servos  : int, optional
        [default: 5].
    activation  : str, optional
        Hidden-layer nonlinearity, 'relu' or 'tanh' [default: 'relu'].
    seed  : int, optional
        Initialisation seed [default: 0].
    """
    n_sensors: int = 7
    enc_hidden: int = 32
    enc_out: int = 32
    heads: int = 2
    d_k: int = 64
    attn_out: int = 64
    attention: bool = True
    skip: bool = True
    sequence: bool = True
    window: int = 5
    dec_hidden: int = 256
    dec_out: int = 256
    head_hidden: int = 128
    head: str = 'pose'
    n_coeffs: int = 12
    n_servos: int = 5
    activation: str = 'relu'
    seed: int = 0

    def __post_init__(self):
        if self.head not in ('pose', 'servo'):
            raise GloveValueError("head must be 'pose' or 'servo', not %r" % (self.head,))
        if self.activation not in ('relu', 'tanh'):
            raise GloveValueError("activation must be 'relu' or 'tanh'")
        if not 1 <= self.heads <= 4:
            raise GloveValueError("heads must lie in 1-4")
        if self.window < 1:
            raise GloveValueError("window must be >= 1")
        if self.n_sensors < 2:
            raise GloveValueError("need at least two sensors")
        if not (self.attention or self.skip):
            raise GloveValueError("without attention the skip pathway is the only encoder output")

    @property
    def z3_width(self):
        """per-sensor width of the encoded feature"""
        width = self.attn_out if self.attention else 0
        if self.skip or not self.attention:
            width += self.enc_out
        return width

    @property
    def flatten_width(self):
        return self.n_sensors * self.z3_width

    @property
    def out_dim(self):
        return self.n_coeffs if self.head == 'pose' else self.n_servos

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GloveKeyError("unknown model options: %s" % sorted(unknown))
        return cls(**d)

    def variant(self, name):
        """copy with the named ablation (see `VARIANTS`) applied"""
        try:
            overrides = VARIANTS[name]
        except KeyError:
            raise GloveKeyError("unknown variant: " + repr(name))
        return ModelConfig(**dict(self.to_dict(), **overrides))


@dataclass
class TrainConfig(object):
    """
    Optimiser settings.

    Parameters
    ----------
    epochs  : int, optional
        [default: 20].
    lr  : float, optional
        Adam learning rate [default: 1e-3].
    batch_size  : int, optional
        [default: 64].
    clip_norm  : float, optional
        Global gradient-norm clip [default: 5].
    seed  : int, optional
        Shuffling seed [default: 0].
    """
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 64
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise GloveValueError("need epochs >= 0, batch_size >= 1 and lr >= 0")


class WindowSet(namedtuple('WindowSet', ['inputs', 'targets', 'sequences'])):
    """
    Training windows.

    Attributes
    ----------
    inputs  : array (W, T, N, N)
        Encoded distance matrices, oldest frame first.
    targets  : array (W, 23, 3) or (W, 5)
        Target of each window's final frame.
    sequences  : array (W,)
        Source sequence id of each window.
    """
    __slots__ = ()

    @property
    def size(self):
        return len(self.inputs)

    def subset(self, idx):
        return WindowSet(self.inputs[idx], self.targets[idx], self.sequences[idx])


def init_params(config):
    """Freshly initialised `ParamSet` for `config`."""
    c = config
    rng = np.random.default_rng(c.seed)
    params = ParamSet()

    def dense(name, fan_in, fan_out):
        params.add(name + '.W', glorot_uniform(rng, fan_in, fan_out))
        params.add(name + '.b', np.zeros(fan_out))

    dense('enc1', c.n_sensors, c.enc_hidden)
    dense('enc2', c.enc_hidden, c.enc_out)
    if c.attention:
        for key in ('W_Q', 'W_K', 'W_V'):
            params.add('attn.' + key,
                       glorot_uniform(rng, c.enc_out, c.d_k, (c.heads, c.enc_out, c.d_k)))
        params.add('attn.W_O', glorot_uniform(rng, c.heads * c.d_k, c.attn_out))
    dense('dec1', c.flatten_width, c.dec_hidden)
    dense('dec2', c.dec_hidden, c.dec_out)
    if c.sequence:
        H = c.dec_out
        params.add('lstm.W', glorot_uniform(rng, 2 * H, 4 * H))
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.  # forget gate
        params.add('lstm.b', bias)
    dense('head1', c.dec_out, c.head_hidden)
    dense('head2', c.head_hidden, c.out_dim)
    return params


def parameter_count(config):
    return init_params(config).count()


def _dense(params, name, x):
    return linear_forward(x, params[name + '.W'], params[name + '.b'])


def _dense_back(params, name, dy, x, grads):
    dx, grads[name + '.W'], grads[name + '.b'] = linear_backward(dy, x, params[name + '.W'])
    return dx


def _encode(params, c, m):
    """m (B, N, N) -> Z3 (B, N, z3_width), cache"""
    a1 = _dense(params, 'enc1', m)
    h1 = activation_forward(c.activation, a1)
    Z1 = _dense(params, 'enc2', h1)
    cache = {'m': m, 'a1': a1, 'h1': h1, 'Z1': Z1}
    if not c.attention:
        return Z1, cache
    Z2, cache['attn'] = mha_forward(Z1, *(params['attn.' + k] for k in ('W_Q', 'W_K', 'W_V', 'W_O')))
    cache['Z2'] = Z2
    return (np.concatenate([Z1, Z2], axis=-1) if c.skip else Z2), cache


def _encode_back(params, c, dZ3, cache, grads):
    if not c.attention:
        dZ1 = dZ3
    else:
        dZ2 = dZ3[..., c.enc_out:] if c.skip else dZ3
        dZ1, attn_grads = mha_backward(dZ2, cache['attn'])
        grads.update(('attn.' + k, g) for k, g in attn_grads.items())
        if c.skip:
            dZ1 = dZ1 + dZ3[..., :c.enc_out]
    dh1 = _dense_back(params, 'enc2', dZ1, cache['h1'], grads)
    da1 = activation_backward(c.activation, dh1, cache['a1'], cache['h1'])
    return _dense_back(params, 'enc1', da1, cache['m'], grads)


def _decode_frames(params, c, X):
    """X (B, T, N, N) -> Z4 (B, T, dec_out), cache"""
    B, T, N, _ = X.shape
    Z3, ecache = _encode(params, c, X.reshape(B * T, N, N))
    flat = Z3.reshape(B * T, -1)
    a = _dense(params, 'dec1', flat)
    h = activation_forward(c.activation, a)
    Z4 = _dense(params, 'dec2', h)
    return Z4.reshape(B, T, -1), {'enc': ecache, 'flat': flat, 'a': a, 'h': h, 'Z3': Z3}


def _head(params, c, F):
    a = _dense(params, 'head1', F)
    h = activation_forward(c.activation, a)
    return _dense(params, 'head2', h), {'F': F, 'a': a, 'h': h}


def _forward(params, c, X):
    """raw head outputs (B, out_dim) and cache for `_backward`"""
    Z4, dcache = _decode_frames(params, c, X)
    if c.sequence:
        F, _, lcaches = lstm_sequence(Z4, params['lstm.W'], params['lstm.b'])
    else:
        F, lcaches = Z4[:, -1], None
    out, hcache = _head(params, c, F)
    return out, {'dec': dcache, 'lstm': lcaches, 'head': hcache, 'shape': X.shape}


def _backward(params, c, dout, cache):
    grads = {}
    hc = cache['head']
    dh = _dense_back(params, 'head2', dout, hc['h'], grads)
    da = activation_backward(c.activation, dh, hc['a'], hc['h'])
    dF = _dense_back(params, 'head1', da, hc['F'], grads)
    B, T, N, _ = cache['shape']
    if c.sequence:
        dZ4, grads['lstm.W'], grads['lstm.b'] = lstm_backward(
            dF, cache['lstm'], params['lstm.W'])
    else:
        dZ4 = np.zeros((B, T, dF.shape[-1]))
        dZ4[:, -1] = dF
    dc = cache['dec']
    dh = _dense_back(params, 'dec2', dZ4.reshape(B * T, -1), dc['h'], grads)
    da = activation_backward(c.activation, dh, dc['a'], dc['h'])
    dflat = _dense_back(params, 'dec1', da, dc['flat'], grads)
    _encode_back(params, c, dflat.reshape(dc['Z3'].shape), dc['enc'], grads)
    return grads


class PoseNet(object):
    """
    Model state: configuration, parameters, pose basis (pose head) and
    optimiser moments once trained.
    """
    def __init__(self, config=None, basis=None, skeleton=None, params=None):
        self.config = config = config or ModelConfig()
        self.skeleton = skeleton or default_skeleton()
        if config.head == 'pose':
            if basis is None:
                raise GloveValueError("the pose head needs a PoseBasis")
            if basis.n_components != config.n_coeffs \
                    or basis.components.shape[1] != self.skeleton.n_dof:
                raise ShapeError("basis is %s, model expects %d coefficients over %d DOF" % (
                    basis.components.shape, config.n_coeffs, self.skeleton.n_dof))
        self.basis = basis
        self.params = init_params(config) if params is None else params
        self.adam = None

    def __repr__(self):
        return "PoseNet(head=%r, variant=%s, parameters=%d)" % (
            self.config.head, self.variant_name, self.params.count())

    @property
    def variant_name(self):
        c = self.config
        for name, overrides in VARIANTS.items():
            if name != 'full' and all(getattr(c, k) == v for k, v in overrides.items()):
                return name
        return 'full'

    def _check_windows(self, X):
        c = self.config
        X = np.asarray(X, dtype=float)
        if X.ndim != 4 or X.shape[1:] != (c.window, c.n_sensors, c.n_sensors):
            raise ShapeError("expected windows (B, %d, %d, %d), got %s" % (
                c.window, c.n_sensors, c.n_sensors, X.shape))
        return X

    def forward(self, X):
        """
        Predictions for a batch of windows (B, T, N, N).

        Returns
        -------
        pred  : array (B, 23, 3) joint positions or (B, 5) servo values
        cache  : for `backward`
        """
        X = self._check_windows(X)
        out, cache = _forward(self.params, self.config, X)
        if self.config.head == 'servo':
            return out, cache
        points, cache['decode'] = decode_pose_batch(self.basis, out, self.skeleton)
        cache['decode']['points'] = points
        return points, cache

    def backward(self, dpred, cache):
        """parameter gradients from the prediction gradient"""
        if self.config.head == 'pose':
            d = cache['decode']
            dtheta = kinematic_vjp(self.skeleton, d['points'], d['axes'], d['origins'], dpred)
            dpred = (dtheta * d['free']) @ self.basis.components.T
        return _backward(self.params, self.config, dpred, cache)

    def loss_and_grads(self, X, Y):
        pred, cache = self.forward(X)
        loss, dpred = mse_loss(pred, Y)
        return loss, self.backward(dpred, cache)

    def predict(self, X, batch_size=256):
        X = self._check_windows(X)
        if not len(X):
            return np.zeros((0,) + ((len(self.skeleton.landmarks), 3)
                                    if self.config.head == 'pose' else (self.config.n_servos,)))
        return np.concatenate([self.forward(X[i:i + batch_size])[0]
                               for i in range(0, len(X), batch_size)])

    def loss(self, windows, batch_size=256):
        """mean squared error over a `WindowSet`"""
        pred = self.predict(windows.inputs, batch_size)
        return mse_loss(pred, windows.targets)[0]

    def encode(self, m):
        """Z3 (..., N, z3_width) for encoded matrices (..., N, N)"""
        m = np.asarray(m, dtype=float)
        N = self.config.n_sensors
        if m.shape[-2:] != (N, N):
            raise ShapeError("expected (%d, %d) matrices, got %s" % (N, N, m.shape))
        Z3, _ = _encode(self.params, self.config, m.reshape(-1, N, N))
        return Z3.reshape(m.shape[:-2] + Z3.shape[-2:])

    def forward_window(self, frames):
        """single prediction from `window` encoded frames (T, N, N)"""
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 3 or len(frames) != self.config.window:
            raise ShapeError("expected %d frames, got shape %s" % (
                self.config.window, frames.shape))
        return self.forward(frames[None])[0][0]

    def step(self, frame, state=None):
        """
        Streaming inference carrying LSTM state across frames.

        Parameters
        ----------
        frame  : array (N, N), encoded
        state  : (h, c), optional
            From the previous call; zeros when omitted.

        Returns
        -------
        prediction, state
        """
        c = self.config
        if not c.sequence:
            raise GloveValueError("stateful stepping needs the sequence module")
        frame = np.asarray(frame, dtype=float)[None, None]
        Z4, _ = _decode_frames(self.params, c, frame)
        if state is None:
            state = (np.zeros((1, c.dec_out)), np.zeros((1, c.dec_out)))
        state, _ = lstm_step(Z4[:, 0], state, self.params['lstm.W'], self.params['lstm.b'])
        out, _ = _head(self.params, c, state[0])
        if c.head == 'pose':
            out = decode_pose_batch(self.basis, out, self.skeleton)[0]
        return out[0], state


def encode(m, model):
    return model.encode(m)


def forward_window(frames, model):
    return model.forward_window(frames)


def train(model, train_set, val_set=None, config=None, progress=None):
    """
    Minibatch Adam on the mean squared error of each window's final-frame
    target (joint positions in metres, or servo values).

    Parameters
    ----------
    model  : PoseNet
        Updated in place; optimiser moments persist in `model.adam`.
    train_set, val_set  : WindowSet
    config  : TrainConfig, optional
    progress  : TrainProgress, optional
        Progress callback [default: disabled bars].

    Returns
    -------
    history  : dict with per-epoch 'train_loss' and 'val_loss' lists
    """
    config = config or TrainConfig()
    if train_set is None or train_set.size == 0:
        raise DatasetError("empty training set")
    if model.adam is None:
        model.adam = AdamState(model.params, lr=config.lr)
    model.adam.lr = config.lr
    rng = np.random.default_rng(config.seed)
    n, bs = train_set.size, config.batch_size
    history = {'train_loss': [], 'val_loss': []}
    if progress is None:
        progress = TrainProgress(disable=True)
    progress.on_train_begin(config.epochs, n, bs)
    try:
        for epoch in range(config.epochs):
            progress.on_epoch_begin(epoch)
            order = rng.permutation(n)
            total = 0.
            for batch, start in enumerate(range(0, n, bs)):
                idx = order[start:start + bs]
                loss, grads = model.loss_and_grads(train_set.inputs[idx], train_set.targets[idx])
                model.params.zero_grad()
                model.params.accumulate(grads)
                model.params.clip_grad_norm(config.clip_norm)
                adam_step(model.params, model.adam)
                total += loss * len(idx)
                progress.on_batch_end(batch, {'loss': loss})
            history['train_loss'].append(total / n)
            val = model.loss(val_set) if val_set is not None and val_set.size else float('nan')
            history['val_loss'].append(val)
            log.debug("epoch %d: train %.6g, val %.6g", epoch + 1, total / n, val)
            progress.on_epoch_end(epoch, {'loss': total / n, 'val_loss': val})
    finally:
        progress.on_train_end()
    if config.epochs:
        log.info("trained %r for %d epochs: train loss %.6g", model, config.epochs,
                 history['train_loss'][-1])
    return history


def _finger_landmarks(skeleton):
    return {f: [skeleton.landmark(f + '_' + c) for c in CHAIN] for f in FINGERS}


def pose_metrics(pred, target, skeleton=None):
    """
    Joint-position error statistics in centimetres.

    Returns
    -------
    dict with 'mean_error', 'max_error', 'per_finger' (finger -> mean),
    'loss' (MSE in m^2), 'unit' and 'count'.
    """
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError("prediction %s vs target %s" % (pred.shape, target.shape))
    skeleton = skeleton or default_skeleton()
    err = np.linalg.norm(pred - target, axis=-1) * 100.
    return {'mean_error': float(err.mean()), 'max_error': float(err.max()),
            'per_finger': {f: float(err[..., idx].mean())
                           for f, idx in _finger_landmarks(skeleton).items()},
            'loss': float(np.mean((pred - target) ** 2)), 'unit': 'cm', 'count': len(pred)}


def servo_metrics(pred, target):
    """Absolute servo error statistics in normalised units (see `pose_metrics`)."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError("prediction %s vs target %s" % (pred.shape, target.shape))
    err = np.abs(pred - target)
    return {'mean_error': float(err.mean()), 'max_error': float(err.max()),
            'per_finger': {f: float(err[:, i].mean()) for i, f in enumerate(FINGERS)},
            'loss': float(np.mean((pred - target) ** 2)), 'unit': 'servo', 'count': len(pred)}


def evaluate(model, windows, batch_size=256):
    """Error metrics of `model` on a held-out `WindowSet`."""
    if windows.size == 0:
        raise DatasetError("empty evaluation set")
    pred = model.predict(windows.inputs, batch_size)
    if model.config.head == 'servo':
        return servo_metrics(pred, windows.targets)
    return pose_metrics(pred, windows.targets, model.skeleton)


def _unit_rows(vectors, what):
    vectors = np.asarray(vectors, dtype=float)
    vectors = vectors.reshape(len(vectors), -1)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise DegenerateError("zero-norm %s vector" % what)
    return vectors / norms[:, None]


def nn_baseline_batch(queries, matrices, poses, chunk=512):
    """
    Cosine nearest neighbour of every query among `matrices`.

    Parameters
    ----------
    queries  : array (Q, N, N)
    matrices  : array (M, N, N)
        Raw distance matrices (missing entries kept at -1).
    poses  : array (M, ...)

    Returns
    -------
    array (Q, ...) of the winning entries' poses (lowest index on ties)
    """
    if not len(matrices):
        raise DatasetError("empty baseline dataset")
    if len(matrices) != len(poses):
        raise ShapeError("%d matrices but %d poses" % (len(matrices), len(poses)))
    ref = _unit_rows(matrices, 'dataset')
    q = _unit_rows(queries, 'query')
    if q.shape[1] != ref.shape[1]:
        raise ShapeError("query width %d vs dataset width %d" % (q.shape[1], ref.shape[1]))
    best = np.concatenate([np.argmax(q[i:i + chunk] @ ref.T, axis=1)
                           for i in range(0, len(q), chunk)])
    return np.asarray(poses)[best]


def nn_baseline(query, matrices, poses):
    """pose of the dataset entry most cosine-similar to `query` (N, N)"""
    return nn_baseline_batch(np.asarray(query, dtype=float)[None], matrices, poses)[0]


def _tip_indices(skeleton):
    return [skeleton.landmark(f + '_tip') for f in FINGERS]


def pseudo_gt_filter(pred, vision, threshold=PSEUDO_GT_THRESHOLD, skeleton=None):
    """
    Keep a camera-derived pseudo-label iff every fingertip of `vision`
    lies within `threshold` metres of `pred` (both normalised poses).
    """
    return bool(filter_pseudo_gt(np.asarray(pred)[None], np.asarray(vision)[None],
                                 threshold, skeleton)[0])


def filter_pseudo_gt(preds, visions, threshold=PSEUDO_GT_THRESHOLD, skeleton=None):
    """Batched `pseudo_gt_filter`: boolean keep mask (B,)."""
    skeleton = skeleton or default_skeleton()
    preds, visions = np.asarray(preds, dtype=float), np.asarray(visions, dtype=float)
    n = len(skeleton.landmarks)
    if preds.shape != visions.shape or preds.shape[1:] != (n, 3):
        raise ShapeError("landmark mismatch: %s vs %s (expected (B, %d, 3))" % (
            preds.shape, visions.shape, n))
    tips = _tip_indices(skeleton)
    gap = np.linalg.norm(preds[:, tips] - visions[:, tips], axis=-1)
    keep = np.all(gap <= threshold, axis=1)
    if len(keep):
        log.info("pseudo ground truth: dropped %d of %d frames (%.1f%%)",
                 (~keep).sum(), len(keep), 100. * (~keep).mean())
    return keep
