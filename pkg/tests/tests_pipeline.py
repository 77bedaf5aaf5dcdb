"""Test dataset generation, splitting, training workflows, studies and streaming."""
from dataclasses import replace
from io import StringIO

import numpy as np
from pytest import fixture, raises

from sonoglove.io import format_stream
from sonoglove.pipeline import (
    HAND_LENGTHS, DomainConfig, MechHand, StreamInference, StudyResult, baseline_metrics,
    evaluate_dataset, finetune, fit_basis, gen_human_dataset, gen_mech_dataset, make_windows,
    pretrain, report, run_ablations, run_baseline_study, run_finetune_study, run_sensor_study,
    run_size_study, split_dataset, stream_infer)
from sonoglove.posenet import ModelConfig, PoseNet, TrainConfig
from sonoglove.sensorsim import MISSING, encode_input, standard_layout
from sonoglove.utils import DatasetError, GloveValueError

SMALL = dict(enc_hidden=8, enc_out=8, d_k=8, attn_out=8, dec_hidden=16, dec_out=16,
             head_hidden=16)
QUICK = TrainConfig(epochs=1, batch_size=32)


def small(head='servo', **kwargs):
    return ModelConfig(head=head, **dict(SMALL, **kwargs))


@fixture(scope='module')
def mech():
    return gen_mech_dataset(300, seed=0, sequence_length=50)


@fixture(scope='module')
def human():
    return gen_human_dataset(DomainConfig(sequence_length=50), poses=300, seed=0)


def test_mech_hand(skeleton):
    """Test servo to angle mapping"""
    hand = MechHand(skeleton)
    lo, hi = skeleton.limits[:, 0], skeleton.limits[:, 1]
    flex = np.concatenate(hand.flexion_dofs)
    assert len(flex) == 15
    assert np.allclose(hand.angles(np.full(5, -0.5))[flex], lo[flex])
    assert np.allclose(hand.angles(np.full(5, 0.5))[flex], hi[flex])
    assert np.allclose(hand.angles(np.full(5, 2.))[flex], hi[flex])
    other = np.setdiff1d(np.arange(22), flex)
    assert np.all(hand.angles(np.zeros((3, 5)))[:, other] == 0)


def test_gen_mech(mech):
    """Test mechanical dataset contents and determinism"""
    assert mech.kind == 'servo' and len(mech) == 300 and mech.n_sensors == 7
    assert list(mech.sequence_ids) == list(range(6))
    assert np.all(np.abs(mech.targets) <= 0.5)
    assert not np.any(mech.matrices == MISSING)
    again = gen_mech_dataset(300, seed=0, sequence_length=50)
    assert np.array_equal(again.matrices, mech.matrices)
    assert not np.array_equal(gen_mech_dataset(300, seed=1, sequence_length=50).targets,
                              mech.targets)


def test_gen_workers_independent():
    """Test generation output does not depend on the worker count"""
    one = gen_mech_dataset(60, seed=2, sequence_length=20)
    two = gen_mech_dataset(60, seed=2, sequence_length=20, workers=2)
    assert np.array_equal(one.matrices, two.matrices)
    assert np.array_equal(one.targets, two.targets)


def test_gen_human(human, skeleton):
    """Test simulated human dataset contents"""
    assert human.kind == 'joints' and human.targets.shape == (300, 23, 3)
    assert np.allclose(human.targets[:, 0], 0)
    assert np.allclose(human.targets[:, skeleton.landmark('middle_base'), :2], 0, atol=1e-12)
    big = gen_human_dataset(poses=2000, seed=3)
    off = ~np.eye(7, dtype=bool)
    frac = np.mean(big.matrices[:, off] == MISSING)
    assert 0 < frac < 0.01
    with raises(GloveValueError):
        gen_human_dataset(poses=3)


def test_domains():
    """Test domain settings"""
    base = DomainConfig()
    assert base.augment.mask_prob == 0.008 and base.layout.n == 7
    shifted = base.shifted()
    assert shifted.augment.noise_sigma == 2 * base.augment.noise_sigma
    assert shifted.augment.sensor_jitter == 0.003
    assert shifted.pose_seed_offset != base.pose_seed_offset
    assert shifted.name == 'sim-shifted'
    with raises(GloveValueError):
        DomainConfig(hand_scale=(1.2, 1.))
    with raises(GloveValueError):
        DomainConfig(sequence_length=3)
    a = gen_human_dataset(base, 40, seed=0)
    b = gen_human_dataset(shifted, 40, seed=0)
    assert not np.array_equal(a.targets, b.targets)


def test_hand_sizes(skeleton):
    """Test domains draw one hand size per sequence"""
    base, shifted = DomainConfig(), DomainConfig().shifted()
    lo, hi = base.hand_scale
    assert lo * skeleton.hand_length <= min(HAND_LENGTHS)
    assert hi * skeleton.hand_length >= max(HAND_LENGTHS)
    assert shifted.hand_scale[0] < shifted.hand_scale[1]
    assert shifted.hand_scale != base.hand_scale
    ds = gen_human_dataset(DomainConfig(sequence_length=20), 200, seed=0)
    palm = np.linalg.norm(ds.targets[:, skeleton.landmark('middle_base')], axis=-1)
    rest = skeleton.lengths[skeleton.landmark('middle_base')]
    per_seq = [palm[sl] for _, sl in ds.sequence_slices()]
    assert all(np.allclose(p, p[0], rtol=0, atol=1e-12) for p in per_seq)
    scales = np.array([p[0] for p in per_seq]) / rest
    assert np.all((scales >= lo - 1e-9) & (scales <= hi + 1e-9))
    assert np.ptp(scales) > 0.05


def test_fit_basis_default(skeleton):
    """Test the default basis corpus fits in memory and yields 12 components"""
    basis = fit_basis()
    assert basis.components.shape == (12, skeleton.n_dof)
    assert np.allclose(basis.components @ basis.components.T, np.eye(12), atol=1e-10)
    assert np.array_equal(fit_basis().components, basis.components)


def test_split(mech):
    """Test splits are disjoint whole sequences"""
    parts = split_dataset(mech, seed=4)
    ids = [set(p.sequence_ids) for p in parts]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set.union(*ids) == set(mech.sequence_ids)
    assert sum(map(len, parts)) == len(mech)
    assert [len(i) for i in ids] == [4, 1, 1]
    with raises(DatasetError):
        split_dataset(mech.select([0, 1]))


def test_make_windows(mech):
    """Test windows stay inside sequences"""
    w = make_windows(mech)
    assert w.inputs.shape == (6 * 46, 5, 7, 7)
    assert np.array_equal(w.inputs[0], encode_input(mech.matrices[:5]))
    assert np.array_equal(w.targets[0], mech.targets[4])
    assert np.array_equal(w.inputs[46], encode_input(mech.matrices[50:55]))
    assert np.array_equal(w.targets[-1], mech.targets[-1])
    assert list(np.unique(w.sequences)) == list(range(6))
    assert make_windows(mech.select([0]), window=60).size == 0


def test_pretrain_finetune(mech):
    """Test the pretrain and fine-tune workflow"""
    res = pretrain(mech, small(), QUICK, seed=0)
    again = pretrain(mech, small(), QUICK, seed=0)
    assert res.history == again.history
    assert res.metrics['unit'] == 'servo' and res.metrics['count'] == 46
    before = {k: v.copy() for k, v in res.model.params.items()}
    tuned = finetune(res.model, mech, TrainConfig(epochs=0), seed=0)
    assert tuned.metrics == evaluate_dataset(res.model, mech, seed=0)
    assert tuned.model is not res.model
    tuned = finetune(res.model, mech, QUICK, seed=0)
    assert tuned.model.adam.step == 6
    assert all(np.array_equal(v, before[k]) for k, v in res.model.params.items())
    with raises(GloveValueError):
        pretrain(mech, small('pose'), QUICK)
    with raises(GloveValueError):
        evaluate_dataset(res.model, mech, split='holdout')
    assert evaluate_dataset(res.model, mech, split='all')['count'] == 6 * 46


def test_baseline_metrics(human):
    """Test nearest-neighbour baseline"""
    assert baseline_metrics(human, human)['mean_error'] == 0
    tr, _, te = split_dataset(human)
    m = baseline_metrics(tr, te)
    assert m['mean_error'] > 0 and m['count'] == 46
    with raises(GloveValueError):
        baseline_metrics(gen_mech_dataset(20, sequence_length=10), human)


def test_run_ablations(mech):
    """Test ablation table"""
    with raises(GloveValueError):
        run_ablations(mech, seeds=(0, 1))
    res = run_ablations(mech, (0, 1, 2), small(), QUICK, check=False)
    assert res.header == ['variant', 'parameters', 'mean_loss', 'std_loss']
    assert res.column('variant') == ['no_seq', 'no_atten', 'no_skip', 'full']
    assert len(set(res.column('parameters'))) == 4
    assert all(v > 0 for v in res.column('mean_loss'))


def test_small_studies(basis):
    """Test study tables on tiny settings"""
    domain = DomainConfig(sequence_length=20)
    res = run_sensor_study((5, 7), poses=100, seeds=(0, 1), domain=domain,
                           model_config=small('pose'), train_config=QUICK, check=False)
    assert res.column('sensors') == [5, 7] and res.column('pairs') == [10, 21]
    res = run_finetune_study(100, 100, domain=domain, model_config=small('pose'),
                             pretrain_config=QUICK, finetune_config=QUICK, check=False)
    assert len(res.rows) == 3
    data = gen_human_dataset(domain, 100, seed=0)
    res = run_baseline_study(data, PoseNet(small('pose'), basis), check=False)
    assert res.column('method') == ['nearest neighbour', 'posenet']
    res = run_size_study(PoseNet(small('pose'), basis), poses=40, domain=domain)
    assert np.allclose(res.column('hand_length_cm'), [21.4, 19.2, 15.5])
    assert np.allclose(res.column('scale'), np.array([0.214, 0.192, 0.155]) / 0.183)
    with raises(GloveValueError):
        run_size_study(PoseNet(small()))


def parsed(m):
    """ranges as they come back from the wire"""
    out = np.vectorize(lambda v: float('%.4f' % (v * 1e3)) * 1e-3)(m)
    out[..., np.arange(7), np.arange(7)] = 0
    return out


def test_stream_infer(mech):
    """Test streaming matches windowed inference"""
    model = PoseNet(small())
    frames = np.repeat(mech.matrices[:1], 5, axis=0)
    lines = list(format_stream(frames))
    outputs, stats = stream_infer(lines, model)
    assert [f for f, _ in outputs] == list(range(5))
    expected = model.forward_window(encode_input(parsed(frames)))
    assert np.allclose(outputs[-1][1], expected, rtol=0, atol=1e-9)
    assert stats['frames'] == 5 and stats['malformed'] == 0 and stats['fps'] > 0
    carried, _ = stream_infer(lines, model, carry_state=True)
    assert np.allclose(carried[-1][1], expected, rtol=0, atol=1e-9)
    again, _ = stream_infer(lines, model)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(outputs, again))
    lines[10] = "F,0,1,x,3.0"
    outputs, stats = stream_infer(lines, model)
    assert len(outputs) == 5 and stats['malformed'] == 1


def test_stream_inference_padding(mech):
    """Test the window starts zero padded"""
    model = PoseNet(small())
    inference = StreamInference(model)
    assert inference.stats == {'frames': 0}
    pred = inference.push(mech.matrices[0])
    window = np.zeros((5, 7, 7))
    window[-1] = encode_input(mech.matrices[0])
    assert np.allclose(pred, model.forward_window(window), rtol=0, atol=1e-12)


def test_report(tmp_path):
    """Test study output"""
    res = StudyResult(['name', 'value'], [['a', 1.5], ['b', 2]])
    fp = StringIO()
    out = tmp_path / "res.csv"
    report(res, str(out), fp)
    assert 'name' in fp.getvalue() and '1.5' in fp.getvalue()
    assert out.read_text().splitlines() == ['name,value', 'a,1.5', 'b,2']
    assert res.column('value') == [1.5, 2]


def test_layouts_in_generation():
    """Test the sensor count follows the layout"""
    ds = gen_human_dataset(replace(DomainConfig(), layout=standard_layout(5)), 20, seed=0)
    assert ds.n_sensors == 5
