"""
Reference experiments: accuracy, ablation ordering, sensor ladder,
fine-tuning and baseline gap. Training runs are marked `slow`.
"""
import numpy as np
from pytest import fixture, mark

from sonoglove.geometry import platform_experiment
from sonoglove.io import format_stream
from sonoglove.kinematics import (
    decode_pose, fit_pose_basis, forward_kinematics, project_pose, sample_pose_sequences)
from sonoglove.pipeline import (
    DomainConfig, gen_human_dataset, gen_mech_dataset, pretrain, run_ablations,
    run_baseline_study, run_finetune_study, run_sensor_study, stream_infer)
from sonoglove.posenet import ModelConfig, PoseNet, TrainConfig, WindowSet, train


def reconstruct(basis, theta):
    return basis.mean + project_pose(basis, theta) @ basis.components


def test_marginal_span(skeleton):
    """Test sampled sequences cover the joint ranges"""
    theta = np.concatenate(sample_pose_sequences(100, 100, 0, skeleton))
    lo, hi = skeleton.limits[:, 0], skeleton.limits[:, 1]
    span = (theta.max(axis=0) - theta.min(axis=0)) / (hi - lo)
    assert np.all(span >= 0.8), span


def test_basis_low_rank(rng):
    """Test a rank-2 affine corpus is reproduced by two components"""
    base, dirs = rng.uniform(0, 0.5, 22), rng.normal(size=(2, 22))
    corpus = base + rng.normal(size=(300, 2)) @ dirs
    basis = fit_pose_basis(corpus, 2)
    assert np.max(np.abs(reconstruct(basis, corpus) - corpus)) < 1e-8


def test_basis_complete(skeleton, rng):
    """Test a full-rank basis round trips angles and poses"""
    lo, hi = skeleton.limits[:, 0], skeleton.limits[:, 1]
    corpus = rng.uniform(lo, hi, (500, 22))
    basis = fit_pose_basis(corpus, 22)
    assert np.max(np.abs(reconstruct(basis, corpus) - corpus)) < 1e-8
    theta = corpus[7]
    points = decode_pose(basis, project_pose(basis, theta), skeleton)
    assert np.allclose(points, forward_kinematics(skeleton, theta), rtol=0, atol=1e-8)


def test_platform_noise_scaling():
    """Test residuals grow linearly with range noise"""
    base = platform_experiment(steps=1000, noise_sigma=0.0005, seed=0).mean_error
    double = platform_experiment(steps=1000, noise_sigma=0.001, seed=1).mean_error
    assert abs(double / base - 2) < 0.6


@mark.timeout(600)
def test_stream_throughput():
    """Test full-size model replays 1000 frames at >= 10 frames/s, reproducibly"""
    ds = gen_mech_dataset(1000, seed=0, sequence_length=100)
    model = PoseNet(ModelConfig(head='servo'))
    lines = list(format_stream(ds.matrices))
    outputs, stats = stream_infer(lines, model)
    assert stats['frames'] == 1000 and stats['fps'] >= 10
    assert stats['malformed'] == 0 and stats['dropped'] == 0
    again, _ = stream_infer(lines, model)
    assert all(a[0] == b[0] and np.array_equal(a[1], b[1]) for a, b in zip(outputs, again))


@mark.slow
def test_servo_toy_overfit():
    """Test 200 epochs on 200 windows cut the loss tenfold"""
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (200, 5, 7, 7))
    X[:, :, np.arange(7), np.arange(7)] = 0
    Y = (X[:, -1, :5, 5] - 0.5) * 0.8
    model = PoseNet(ModelConfig(head='servo', seed=1))
    history = train(model, WindowSet(X, Y, np.zeros(200, int)),
                    config=TrainConfig(epochs=200, lr=1e-3, batch_size=20))
    assert history['train_loss'][-1] * 10 <= history['train_loss'][0]


@fixture(scope='module')
def mech30k():
    return gen_mech_dataset(30000, seed=0)


@mark.slow
def test_mech_accuracy(mech30k):
    """Test servo prediction error on held-out sequences"""
    res = pretrain(mech30k, seed=0)
    assert res.metrics['unit'] == 'servo'
    assert res.metrics['mean_error'] < 0.05, res.metrics


@mark.slow
def test_ablation_order(mech30k):
    """Test the full model has the lowest mean test loss"""
    small = mech30k.select(mech30k.sequence_ids[:100])
    res = run_ablations(small, (0, 1, 2), train_config=TrainConfig(epochs=10), check=True)
    loss = dict(zip(res.column('variant'), res.column('mean_loss')))
    assert loss['full'] == min(loss.values())


@mark.slow
def test_sensor_ladder():
    """Test error falls from 5 to 7 sensors, then plateaus"""
    res = run_sensor_study(poses=5000, seeds=(0, 1, 2), train_config=TrainConfig(epochs=20),
                           check=True)
    err = dict(zip(res.column('sensors'), res.column('mean_error_cm')))
    assert err[5] > err[6] > err[7]
    assert err[7] - err[8] < err[6] - err[7]


@mark.slow
def test_finetune_benefit():
    """Test fine-tuning on the shifted domain cuts its error by >= 10%"""
    res = run_finetune_study(20000, 5000, seed=0, pretrain_config=TrainConfig(epochs=15),
                             finetune_config=TrainConfig(epochs=10, lr=1e-4), check=True)
    _, before, after = res.column('mean_error_cm')
    assert after <= 0.9 * before


@mark.slow
def test_baseline_gap():
    """Test the model at least halves the nearest-neighbour error"""
    data = gen_human_dataset(DomainConfig(), 20000, seed=0)
    res = run_baseline_study(data, train_config=TrainConfig(epochs=15), check=True)
    base, ours = res.column('mean_error_cm')
    assert base >= 2 * ours

