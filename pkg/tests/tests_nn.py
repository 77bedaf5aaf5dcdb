"""Test network primitives, Adam, gradient checking and parameter files."""
from io import BytesIO

import numpy as np
from pytest import mark, raises

from sonoglove.nn import (
    AdamState, ParamSet, activation_backward, activation_forward, adam_step, glorot_uniform,
    grad_check, linear_backward, linear_forward, lstm_backward, lstm_sequence, lstm_step,
    mha_backward, mha_forward, mse_loss, read_params, softmax_backward, softmax_rows,
    write_params)
from sonoglove.utils import CheckpointError, GloveKeyError, NonFiniteError, ShapeError


def test_linear_examples():
    """Test identity weights and zero input"""
    x = np.arange(6.).reshape(2, 3)
    assert np.array_equal(linear_forward(x, np.eye(3), np.zeros(3)), x)
    b = np.array([1., -2.])
    assert np.array_equal(linear_forward(np.zeros((4, 3)), np.ones((3, 2)), b),
                          np.tile(b, (4, 1)))
    with raises(ShapeError):
        linear_forward(x, np.eye(4), np.zeros(4))
    with raises(NonFiniteError):
        linear_forward(np.array([[np.inf, 0, 0]]), np.eye(3), np.zeros(3))


def test_linear_gradients(rng):
    """Test linear layer against finite differences"""
    arrays = {'x': rng.normal(size=(7, 7)), 'W': glorot_uniform(rng, 7, 32),
              'b': rng.normal(size=32)}
    R = rng.normal(size=(7, 32))

    def loss():
        return float(np.sum(linear_forward(arrays['x'], arrays['W'], arrays['b']) * R))

    def grads():
        return dict(zip(('x', 'W', 'b'), linear_backward(R, arrays['x'], arrays['W'])))

    # linear in every coordinate: a wide step has no truncation error
    report = grad_check(loss, grads, arrays, tolerance=1e-6, step=1e-3)
    assert report.passed, report
    assert report.n_checked == 49 + 224 + 32


@mark.parametrize("kind", ['relu', 'tanh'])
def test_activations(kind, rng):
    """Test activations and their gradients"""
    x = rng.normal(size=(5, 4)) + 0.01
    y = activation_forward(kind, x)
    dy = rng.normal(size=x.shape)
    dx = activation_backward(kind, dy, x, y)
    h = 1e-6
    num = (activation_forward(kind, x + h) - activation_forward(kind, x - h)) / (2 * h)
    mask = np.abs(x) > 1e-3
    assert np.allclose(dx[mask], (dy * num)[mask], atol=1e-8)
    with raises(GloveKeyError):
        activation_forward('gelu', x)


def test_softmax_examples():
    """Test softmax values and shift invariance"""
    assert np.allclose(softmax_rows([0., 0.]), [0.5, 0.5])
    assert np.allclose(softmax_rows([1000., 0.]), [1., 0.])
    x = np.random.default_rng(1).normal(size=(3, 5))
    assert np.allclose(softmax_rows(x + 7.), softmax_rows(x), rtol=0, atol=1e-15)
    assert np.allclose(softmax_rows(x).sum(axis=-1), 1)


def test_softmax_gradients(rng):
    """Test softmax backward"""
    arrays = {'x': rng.normal(size=(4, 6))}
    R = rng.normal(size=(4, 6))
    report = grad_check(
        lambda: float(np.sum(softmax_rows(arrays['x']) * R)),
        lambda: {'x': softmax_backward(R, softmax_rows(arrays['x']))}, arrays)
    assert report.passed, report


def mha_params(rng, heads=2, d_in=32, d_k=64, d_out=64):
    return {'W_Q': glorot_uniform(rng, d_in, d_k, (heads, d_in, d_k)),
            'W_K': glorot_uniform(rng, d_in, d_k, (heads, d_in, d_k)),
            'W_V': glorot_uniform(rng, d_in, d_k, (heads, d_in, d_k)),
            'W_O': glorot_uniform(rng, heads * d_k, d_out)}


def test_attention_shapes(rng):
    """Test attention output shape, weights and permutation equivariance"""
    p = mha_params(rng)
    Z = rng.normal(size=(7, 32))
    Z2, cache = mha_forward(Z, p['W_Q'], p['W_K'], p['W_V'], p['W_O'])
    assert Z2.shape == (7, 64)
    assert cache['A'].shape == (1, 2, 7, 7)
    assert np.allclose(cache['A'].sum(axis=-1), 1)
    perm = rng.permutation(7)
    Zp, _ = mha_forward(Z[perm], p['W_Q'], p['W_K'], p['W_V'], p['W_O'])
    assert np.allclose(Zp, Z2[perm], rtol=0, atol=1e-12)
    batched, _ = mha_forward(np.stack([Z, Z[perm]]), p['W_Q'], p['W_K'], p['W_V'], p['W_O'])
    assert batched.shape == (2, 7, 64)
    assert np.allclose(batched[0], Z2)
    with raises(ShapeError):
        mha_forward(Z[:, :16], p['W_Q'], p['W_K'], p['W_V'], p['W_O'])


def test_attention_gradients(rng):
    """Test attention backward for input and all projections"""
    arrays = dict(mha_params(rng, d_in=8, d_k=8, d_out=8), Z=rng.normal(size=(2, 7, 8)))
    R = rng.normal(size=(2, 7, 8))

    def forward():
        return mha_forward(arrays['Z'], arrays['W_Q'], arrays['W_K'], arrays['W_V'],
                           arrays['W_O'])

    def grads():
        _, cache = forward()
        dZ, g = mha_backward(R, cache)
        return dict(g, Z=dZ)

    report = grad_check(lambda: float(np.sum(forward()[0] * R)), grads, arrays,
                        max_coords=500, floor=1e-3)
    assert report.passed, report
    assert report.n_checked == 500


def test_lstm_examples(rng):
    """Test zero weights and bounded hidden state"""
    B, T, H = 3, 5, 8
    F, (h, c), caches = lstm_sequence(np.zeros((B, T, H)), np.zeros((2 * H, 4 * H)),
                                      np.zeros(4 * H))
    assert np.array_equal(F, np.zeros((B, H)))
    assert len(caches) == T
    W = glorot_uniform(rng, 2 * H, 4 * H) * 5
    F, _, _ = lstm_sequence(rng.normal(size=(B, T, H)) * 10, W, rng.normal(size=4 * H))
    assert np.all(np.abs(F) < 1)
    with raises(ShapeError):
        lstm_step(np.zeros((B, H)), (np.zeros((B, H)), np.zeros((B, H))),
                  np.zeros((H, 4 * H)), np.zeros(4 * H))


def test_lstm_gradients(rng):
    """Test back-propagation through time"""
    B, T, H = 2, 5, 16
    arrays = {'xs': rng.normal(size=(B, T, H)), 'W': glorot_uniform(rng, 2 * H, 4 * H),
              'b': rng.normal(size=4 * H) * 0.1}
    R = rng.normal(size=(B, H))

    def grads():
        _, _, caches = lstm_sequence(arrays['xs'], arrays['W'], arrays['b'])
        return dict(zip(('xs', 'W', 'b'), lstm_backward(R, caches, arrays['W'])))

    report = grad_check(
        lambda: float(np.sum(lstm_sequence(arrays['xs'], arrays['W'], arrays['b'])[0] * R)),
        grads, arrays, max_coords=1500, floor=1e-3)
    assert report.passed, report


def test_mse(rng):
    """Test loss values against a plain loop"""
    assert mse_loss(np.zeros(4), np.zeros(4))[0] == 0
    assert abs(mse_loss(np.zeros((3, 2)), np.full((3, 2), 0.5))[0] - 0.25) < 1e-15
    p, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    loop = sum((a - b) ** 2 for a, b in zip(p.ravel(), t.ravel())) / p.size
    loss, grad = mse_loss(p, t)
    assert abs(loss - loop) < 1e-12
    assert np.allclose(grad, 2 * (p - t) / 20)
    with raises(ShapeError):
        mse_loss(np.zeros(3), np.zeros(4))
    with raises(NonFiniteError):
        mse_loss(np.array([np.nan]), np.zeros(1))


def test_adam_zero_gradient():
    """Test zero gradients leave parameters unchanged"""
    params = ParamSet({'w': np.ones(3)})
    state = AdamState(params, lr=0.1)
    for _ in range(5):
        adam_step(params, state)
    assert np.array_equal(params['w'], np.ones(3))
    assert state.step == 5


def test_adam_descends():
    """Test one step on w^2 and convergence on a convex quadratic"""
    params = ParamSet({'w': [1.]})
    state = AdamState(params, lr=0.01)
    params.grads['w'][...] = 2 * params['w']
    adam_step(params, state)
    assert params['w'][0] < 1
    assert abs(params['w'][0] - 0.99) < 1e-6

    A, b = np.diag([1., 2., 3.]), np.array([1., -1., 0.5])
    params = ParamSet({'w': np.zeros(3)})
    state = AdamState(params, lr=0.1)
    for _ in range(500):
        params.grads['w'][...] = A @ params['w'] - b
        adam_step(params, state)
    assert np.linalg.norm(A @ params['w'] - b) < 1e-4


def test_adam_state_dict():
    """Test optimiser state round trip"""
    params = ParamSet({'w': [1., 2.]})
    state = AdamState(params)
    params.grads['w'][...] = [0.5, -0.5]
    adam_step(params, state)
    other = AdamState(params)
    other.load_state_dict(state.state_dict())
    assert other.step == 1
    assert np.array_equal(other.m['w'], state.m['w'])
    assert np.array_equal(other.v['w'], state.v['w'])


def test_param_set():
    """Test parameter bookkeeping and gradient clipping"""
    params = ParamSet({'a': np.zeros((2, 3)), 'b': np.zeros(4)})
    assert params.count() == 10
    assert list(params) == ['a', 'b'] and len(params) == 2
    with raises(GloveKeyError):
        params.add('a', np.zeros(1))
    with raises(GloveKeyError):
        params['c']
    params.accumulate({'a': np.full((2, 3), 3.), 'b': np.full(4, 4.)})
    norm = params.clip_grad_norm(1.)
    assert abs(norm - np.sqrt(6 * 9 + 4 * 16)) < 1e-12
    assert abs(params.grad_norm() - 1) < 1e-12
    params.zero_grad()
    assert params.grad_norm() == 0
    with raises(ShapeError):
        params.accumulate({'a': np.zeros(3)})
    with raises(CheckpointError):
        params.load_state_dict({'a': np.zeros((2, 3))})
    copy = params.copy()
    copy['a'][...] = 1
    assert not np.any(params['a'])


def test_grad_check_detects_errors(rng):
    """Test a wrong analytic gradient fails"""
    arrays = {'x': rng.normal(size=5)}
    report = grad_check(lambda: float(np.sum(arrays['x'] ** 3)),
                        lambda: {'x': 3 * arrays['x'] ** 2 * 1.01}, arrays)
    assert not report.passed
    assert report.worst[0] == 'x'
    report = grad_check(lambda: float(np.sum(arrays['x'] ** 3)),
                        lambda: {'x': 3 * arrays['x'] ** 2}, arrays)
    assert report.passed, report


def test_param_file(rng):
    """Test binary parameter format"""
    arrays = {'enc1.W': rng.normal(size=(7, 32)), 'enc1.b': np.zeros(32),
              'attn.W_Q': rng.normal(size=(2, 32, 64)), 'scalar': np.array(3.5)}
    fp = BytesIO()
    write_params(fp, arrays)
    raw = fp.getvalue()
    assert raw[:4] == b'SGNN'
    assert int.from_bytes(raw[4:6], 'little') == 1
    assert int.from_bytes(raw[6:10], 'little') == 4
    fp.seek(0)
    back = read_params(fp)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == np.shape(arrays[k])
        assert np.array_equal(back[k], arrays[k])
    with raises(CheckpointError):
        read_params(BytesIO(b'XXXX' + raw[4:]))
    with raises(CheckpointError):
        read_params(BytesIO(raw[:-3]))
