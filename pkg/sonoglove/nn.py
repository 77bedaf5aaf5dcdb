"""
Minimal dense neural-network kernel on float64 `numpy` arrays.

Every differentiable op comes as a pure `*_forward` returning its output
and a cache, and a `*_backward` mapping the output gradient (plus cache)
to input and parameter gradients. Leading batch dimensions broadcast.
Parameters live in a `ParamSet`; `adam_step` updates them in place.
"""
import logging
import struct
from collections import OrderedDict, namedtuple

import numpy as np
from scipy.special import expit

from .utils import CheckpointError, GloveKeyError, ShapeError, check_finite

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['ParamSet', 'AdamState', 'GradCheckReport', 'glorot_uniform',
           'linear_forward', 'linear_backward', 'activation_forward',
           'activation_backward', 'softmax_rows', 'softmax_backward',
           'mha_forward', 'mha_backward', 'lstm_step', 'lstm_step_backward',
           'lstm_sequence', 'lstm_backward', 'mse_loss', 'adam_step', 'grad_check',
           'write_params', 'read_params']
log = logging.getLogger(__name__)

MAGIC = b'SGNN'
FORMAT_VERSION = 1


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    """uniform(+-sqrt(6 / (fan_in + fan_out)))"""
    lim = np.sqrt(6. / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out) if shape is None else shape)


def linear_forward(x, W, b):
    """y = x W + b over the last axis of `x`"""
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError("linear: x %s, W %s, b %s" % (x.shape, W.shape, b.shape))
    return check_finite('linear output', x @ W + b)


def linear_backward(dy, x, W):
    """
    Returns
    -------
    dx, dW, db
    """
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


def activation_forward(kind, x):
    if kind == 'relu':
        return np.maximum(x, 0.)
    elif kind == 'tanh':
        return np.tanh(x)
    raise GloveKeyError("unknown activation: " + repr(kind))


def activation_backward(kind, dy, x, y):
    """gradient through the activation given its input `x` and output `y`"""
    if kind == 'relu':
        return dy * (x > 0)
    elif kind == 'tanh':
        return dy * (1. - y ** 2)
    raise GloveKeyError("unknown activation: " + repr(kind))


def softmax_rows(x):
    """Softmax over the last axis (max-subtracted, so shift invariant)."""
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def mha_forward(Z, W_Q, W_K, W_V, W_O):
    """
    Multi-head scaled-dot-product self-attention.

    Parameters
    ----------
    Z  : array (..., N, d_in)
    W_Q, W_K, W_V  : arrays (heads, d_in, d_k)
        Per-head projections.
    W_O  : array (heads * d_k, d_out)

    Returns
    -------
    Z2  : array (..., N, d_out)
    cache  : dict
        Includes the attention weights 'A' (B, heads, N, N).
    """
    H, d_in, d_k = W_Q.shape
    if W_K.shape != W_Q.shape or W_V.shape != W_Q.shape or Z.shape[-1] != d_in \
            or W_O.shape[0] != H * d_k:
        raise ShapeError("attention: Z %s, W_Q %s, W_K %s, W_V %s, W_O %s" % (
            Z.shape, W_Q.shape, W_K.shape, W_V.shape, W_O.shape))
    lead, N = Z.shape[:-2], Z.shape[-2]
    Zb = Z.reshape(-1, 1, N, d_in)
    Q, K, V = Zb @ W_Q, Zb @ W_K, Zb @ W_V  # (B, H, N, d_k)
    scale = 1. / np.sqrt(d_k)
    A = softmax_rows(Q @ K.swapaxes(-1, -2) * scale)
    heads = A @ V
    C = heads.transpose(0, 2, 1, 3).reshape(-1, N, H * d_k)
    Z2 = check_finite('attention output', C @ W_O)
    cache = {'Z': Zb, 'Q': Q, 'K': K, 'V': V, 'A': A, 'C': C, 'scale': scale,
             'W_Q': W_Q, 'W_K': W_K, 'W_V': W_V, 'W_O': W_O, 'lead': lead}
    return Z2.reshape(lead + (N, W_O.shape[1])), cache


def mha_backward(dZ2, cache):
    """
    Returns
    -------
    dZ  : array like the forward input
    grads  : dict with 'W_Q', 'W_K', 'W_V', 'W_O'
    """
    Zb, Q, K, V, A, C = (cache[k] for k in ('Z', 'Q', 'K', 'V', 'A', 'C'))
    W_Q, W_K, W_V, W_O = (cache[k] for k in ('W_Q', 'W_K', 'W_V', 'W_O'))
    H, d_in, d_k = W_Q.shape
    N = Zb.shape[-2]
    dZ2 = dZ2.reshape(-1, N, W_O.shape[1])
    dW_O = C.reshape(-1, H * d_k).T @ dZ2.reshape(-1, W_O.shape[1])
    dheads = (dZ2 @ W_O.T).reshape(-1, N, H, d_k).transpose(0, 2, 1, 3)
    dA = dheads @ V.swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dheads
    dS = softmax_backward(dA, A) * cache['scale']
    dQ = dS @ K
    dK = dS.swapaxes(-1, -2) @ Q
    Zt = Zb.swapaxes(-1, -2)
    grads = {'W_Q': (Zt @ dQ).sum(axis=0), 'W_K': (Zt @ dK).sum(axis=0),
             'W_V': (Zt @ dV).sum(axis=0), 'W_O': dW_O}
    dZ = (dQ @ W_Q.swapaxes(-1, -2) + dK @ W_K.swapaxes(-1, -2)
          + dV @ W_V.swapaxes(-1, -2)).sum(axis=1)
    return dZ.reshape(cache['lead'] + (N, d_in)), grads


def lstm_step(x, state, W, b):
    """
    One LSTM cell update with gates ordered (input, forget, candidate,
    output) in the columns of `W` (d_in + hidden, 4 hidden).

    Parameters
    ----------
    x  : array (B, d_in)
    state  : (h, c), arrays (B, hidden)

    Returns
    -------
    (h', c'), cache
    """
    h, c = state
    Hd = h.shape[-1]
    if W.shape != (x.shape[-1] + Hd, 4 * Hd) or b.shape != (4 * Hd,):
        raise ShapeError("lstm: x %s, h %s, W %s, b %s" % (x.shape, h.shape, W.shape, b.shape))
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    i = expit(z[:, :Hd])
    f = expit(z[:, Hd:2 * Hd])
    g = np.tanh(z[:, 2 * Hd:3 * Hd])
    o = expit(z[:, 3 * Hd:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = check_finite('lstm hidden state', o * tc)
    return (h_new, c_new), (xh, c, i, f, g, o, tc)


def lstm_step_backward(dh, dc, cache, W):
    """
    Returns
    -------
    dx, dh_prev, dc_prev, dW, db
    """
    xh, c, i, f, g, o, tc = cache
    dc = dc + dh * o * (1. - tc ** 2)
    dz = np.concatenate([dc * g * i * (1. - i), dc * c * f * (1. - f),
                         dc * i * (1. - g ** 2), dh * tc * o * (1. - o)], axis=-1)
    dxh = dz @ W.T
    d_in = xh.shape[-1] - dh.shape[-1]
    return dxh[:, :d_in], dxh[:, d_in:], dc * f, xh.T @ dz, dz.sum(axis=0)


def lstm_sequence(xs, W, b, state=None):
    """
    Run the cell over `xs` (B, T, d_in) from `state` (zeros by default).

    Returns
    -------
    F  : array (B, hidden)
        The final hidden state.
    state  : (h_T, c_T)
    caches  : list, one per step
    """
    B, T, _ = xs.shape
    Hd = b.shape[0] // 4
    if state is None:
        state = (np.zeros((B, Hd)), np.zeros((B, Hd)))
    caches = []
    for t in range(T):
        state, cache = lstm_step(xs[:, t], state, W, b)
        caches.append(cache)
    return state[0], state, caches


def lstm_backward(dF, caches, W):
    """
    Back-propagation through time from the final hidden state gradient.

    Returns
    -------
    dxs (B, T, d_in), dW, db
    """
    dh, dc = dF, np.zeros_like(dF)
    dW, db = np.zeros_like(W), np.zeros(W.shape[1])
    dxs = []
    for cache in reversed(caches):
        dx, dh, dc, dW_t, db_t = lstm_step_backward(dh, dc, cache, W)
        dW += dW_t
        db += db_t
        dxs.append(dx)
    return np.stack(dxs[::-1], axis=1), dW, db


def mse_loss(pred, target):
    """
    Returns
    -------
    loss  : float
        Mean of squared differences.
    grad  : array like `pred`
    """
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError("mse: %s vs %s" % (pred.shape, target.shape))
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    check_finite('loss', loss)
    return loss, 2. * diff / diff.size


class ParamSet(object):
    """Named float64 parameters with matching gradient buffers."""
    def __init__(self, arrays=None):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.params:
            raise GloveKeyError("duplicate parameter: " + name)
        self.params[name] = np.array(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])
        return self.params[name]

    def __getitem__(self, name):
        try:
            return self.params[name]
        except KeyError:
            raise GloveKeyError("unknown parameter: " + repr(name))

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self):
        """total number of scalar parameters"""
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.

    def accumulate(self, grads):
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ShapeError("gradient %s: %s vs %s" % (
                    name, g.shape, self.params[name].shape))
            self.grads[name] += g

    def grad_norm(self):
        return float(np.sqrt(sum(np.sum(g ** 2) for g in self.grads.values())))

    def clip_grad_norm(self, max_norm):
        """scale gradients so their global norm is at most `max_norm`"""
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for g in self.grads.values():
                g *= scale
        return norm

    def state_dict(self):
        return OrderedDict((k, v.copy()) for k, v in self.params.items())

    def load_state_dict(self, arrays, strict=True):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if strict and (missing or extra):
            raise CheckpointError("parameter mismatch: missing %s, unexpected %s" % (
                sorted(missing), sorted(extra)))
        for name, value in arrays.items():
            if name in self.params:
                if self.params[name].shape != value.shape:
                    raise CheckpointError("shape mismatch for %s: %s vs %s" % (
                        name, self.params[name].shape, value.shape))
                self.params[name][...] = value

    def copy(self):
        return ParamSet(self.params)


class AdamState(object):
    """
    Adam moments and hyperparameters.

    Parameters
    ----------
    params  : ParamSet
    lr  : float, optional
        [default: 1e-3].
    beta1, beta2, eps  : float, optional
        [default: 0.9, 0.999, 1e-8].
    """
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.step = 0

    def state_dict(self):
        out = OrderedDict()
        for k in self.m:
            out['adam.m.' + k] = self.m[k].copy()
            out['adam.v.' + k] = self.v[k].copy()
        out['adam.step'] = np.array([float(self.step)])
        return out

    def load_state_dict(self, arrays):
        for k in self.m:
            if 'adam.m.' + k in arrays:
                self.m[k][...] = arrays['adam.m.' + k]
                self.v[k][...] = arrays['adam.v.' + k]
        if 'adam.step' in arrays:
            self.step = int(arrays['adam.step'][0])


def adam_step(params, state):
    """Bias-corrected Adam update of `params` (in place) from their grads."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1. - b1 ** state.step
    c2 = 1. - b2 ** state.step
    for name, p in params.items():
        g = params.grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1. - b1) * g
        v *= b2
        v += (1. - b2) * g ** 2
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        check_finite(name, p)
    return params


GradCheckReport = namedtuple('GradCheckReport',
                             ['max_rel_error', 'passed', 'worst', 'n_checked'])


def grad_check(loss_fn, grad_fn, arrays, tolerance=1e-5, step=1e-5,
               max_coords=10000, seed=0, floor=1e-7):
    """
    Compare analytic gradients against central finite differences.

    Parameters
    ----------
    loss_fn  : callable() -> float
        Loss at the current contents of `arrays`.
    grad_fn  : callable() -> dict
        Analytic gradient for every name in `arrays`.
    arrays  : dict
        name -> float64 array perturbed in place (and restored).
    tolerance  : float, optional
        Pass iff the maximum relative error is below this [default: 1e-5].
    max_coords  : int, optional
        Check a random subsample when there are more coordinates
        [default: 10000].
    floor  : float, optional
        Lower bound on the relative-error denominator [default: 1e-7].

    Returns
    -------
    GradCheckReport(max_rel_error, passed, worst (name, index), n_checked)
    """
    analytic = {k: np.array(v, dtype=float) for k, v in grad_fn().items()}
    coords = [(name, i) for name in arrays for i in range(arrays[name].size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        coords = [coords[j] for j in sorted(rng.choice(len(coords), max_coords, replace=False))]
    worst, max_err = None, 0.
    for name, i in coords:
        flat = arrays[name].reshape(-1)
        if not np.shares_memory(flat, arrays[name]):
            raise ShapeError(name + " must be contiguous for grad_check")
        orig = flat[i]
        flat[i] = orig + step
        f_plus = loss_fn()
        flat[i] = orig - step
        f_minus = loss_fn()
        flat[i] = orig
        num = (f_plus - f_minus) / (2 * step)
        ana = analytic[name].reshape(-1)[i]
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > max_err or worst is None:
            max_err, worst = max(err, max_err), (name, i)
    log.debug("grad_check: max relative error %.3g at %s over %d coordinates",
              max_err, worst, len(coords))
    return GradCheckReport(max_err, max_err < tolerance, worst, len(coords))


def write_params(fp, arrays):
    """
    Write named arrays to binary file object `fp`.

    Layout (little-endian): magic b'SGNN', uint16 version, uint32 count;
    then per array: uint16 name length, utf-8 name, uint8 rank,
    uint32 dims, float64 values (row-major).
    """
    fp.write(struct.pack('<4sHI', MAGIC, FORMAT_VERSION, len(arrays)))
    for name, value in arrays.items():
        raw = name.encode('utf-8')
        value = np.asarray(value, dtype='<f8')
        fp.write(struct.pack('<H', len(raw)) + raw)
        fp.write(struct.pack('<B', value.ndim))
        fp.write(struct.pack('<%dI' % value.ndim, *value.shape))
        fp.write(value.tobytes())


def _read(fp, n):
    buf = fp.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated parameter file")
    return buf


def read_params(fp):
    """Inverse of `write_params`; returns an OrderedDict of arrays."""
    magic, version, count = struct.unpack('<4sHI', _read(fp, 10))
    if magic != MAGIC:
        raise CheckpointError("not a parameter file (magic %r)" % magic)
    if version != FORMAT_VERSION:
        raise CheckpointError("unsupported parameter file version %d" % version)
    out = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack('<H', _read(fp, 2))
        name = _read(fp, n).decode('utf-8')
        (rank,) = struct.unpack('<B', _read(fp, 1))
        shape = struct.unpack('<%dI' % rank, _read(fp, 4 * rank))
        size = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(_read(fp, 8 * size), dtype='<f8').reshape(shape).copy()
    return out
