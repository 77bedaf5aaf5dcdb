"""
End-to-end workflows: dataset generation, sim-to-real pretraining and
fine-tuning, the reproduction studies, and streaming inference.

Usage:
>>> from sonoglove.pipeline import gen_mech_dataset, pretrain
>>> result = pretrain(gen_mech_dataset(3000, seed=0))
>>> result.metrics['mean_error']
"""
import copy
import logging
import sys
import time
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
from tqdm.auto import tqdm
from tqdm.contrib.concurrent import process_map
from tqdm.contrib.logging import logging_redirect_tqdm

from .contrib.progress import TrainProgress
from .io import FrameDataset, StreamReader, write_dataset
from .kinematics import (
    FINGERS, WINDOW, default_skeleton, fit_pose_basis, forward_kinematics_batch,
    normalize_pose, sample_keyframe_curves, sample_pose_sequences)
from .posenet import (
    ModelConfig, PoseNet, TrainConfig, WindowSet, evaluate, nn_baseline_batch,
    parameter_count, pose_metrics, train)
from .sensorsim import (
    D_MAX, AugmentConfig, augment, encode_input, jitter_layout, masked_fraction, measure,
    standard_layout)
from .utils import (
    DatasetError, GloveValueError, StudyAssertionError, child_seeds, format_table, write_csv)

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['DomainConfig', 'MechHand', 'TrainResult', 'StudyResult', 'StreamInference',
           'gen_human_dataset', 'gen_mech_dataset', 'split_dataset', 'make_windows',
           'fit_basis', 'pretrain', 'finetune', 'evaluate_dataset', 'baseline_metrics',
           'run_ablations', 'run_sensor_study', 'run_finetune_study', 'run_baseline_study',
           'run_size_study', 'stream_infer', 'report']
log = logging.getLogger(__name__)

PRETRAIN_POSES = 46000
FINETUNE_POSES = 5000
MECH_FRAMES = 30000
SEQUENCE_LENGTH = 100
PRETRAIN_LR = 1e-3
FINETUNE_LR = 1e-4
SPLIT = (0.8, 0.1, 0.1)
SERVO_RANGE = 0.5
MECH_NOISE = 0.0005
BASIS_POSES = 20000
BASIS_SEED_OFFSET = 7919
HAND_LENGTHS = (0.214, 0.192, 0.155)
# per-sequence scale ranges: simulator spans the 15.5-21.4 cm hands
HAND_SCALE = (0.84, 1.17)
SHIFTED_HAND_SCALE = (0.9, 1.1)

TrainResult = namedtuple('TrainResult', ['model', 'history', 'metrics'])


class StudyResult(namedtuple('StudyResult', ['header', 'rows'])):
    """Tabular study output."""
    __slots__ = ()

    @property
    def text(self):
        return format_table(self.header, self.rows)

    def column(self, name):
        i = list(self.header).index(name)
        return [row[i] for row in self.rows]


@dataclass
class DomainConfig(object):
    """
    One data domain (simulator or a shifted "real" glove).

    Parameters
    ----------
    augment  : AugmentConfig, optional
        [default: noise 1 mm, 0.8% masking].
    layout  : SensorLayout, optional
        [default: `standard_layout(7)`].
    hand_scale  : (float, float), optional
        Uniform range of per-sequence hand scale factors
        [default: (0.84, 1.17), 15.5-21.4 cm hands].
    sequence_length  : int, optional
        Frames per sampled pose sequence [default: 100].
    pose_seed_offset  : int, optional
        Added to the generation seed for pose sampling [default: 0].
    name  : str, optional
    """
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(mask_prob=0.008))
    layout: object = field(default_factory=lambda: standard_layout(7))
    hand_scale: tuple = HAND_SCALE
    sequence_length: int = SEQUENCE_LENGTH
    pose_seed_offset: int = 0
    name: str = 'sim'

    def __post_init__(self):
        lo, hi = self.hand_scale
        if not 0 < lo <= hi:
            raise GloveValueError("hand_scale needs 0 < lo <= hi")
        self.hand_scale = (float(lo), float(hi))
        if self.sequence_length < WINDOW:
            raise GloveValueError("sequence_length must be >= %d" % WINDOW)

    def shifted(self, jitter=0.003, noise_factor=2., seed_offset=1000,
                hand_scale=SHIFTED_HAND_SCALE):
        """
        The sim-to-real analog: jittered sensor placement, stronger noise,
        the hand sizes of the glove's users and a distinct pose corpus.
        """
        aug = replace(self.augment, noise_sigma=self.augment.noise_sigma * noise_factor,
                      sensor_jitter=jitter, seed=self.augment.seed + 1)
        return replace(self, augment=aug, hand_scale=hand_scale,
                       pose_seed_offset=self.pose_seed_offset + seed_offset,
                       name=self.name + '-shifted')


@dataclass(frozen=True, eq=False)
class MechHand(object):
    """
    Five-servo rig: servo value s in [-0.5, 0.5] drives every flexion DOF
    of its finger linearly from the lower (s = -0.5) to the upper limit;
    all other DOF stay at rest.
    """
    skeleton: object = field(default_factory=default_skeleton)

    @property
    def flexion_dofs(self):
        names = self.skeleton.dof_names
        return [[names.index(f + '_' + k) for k in ('base_flex', 'mid1_flex', 'mid2_flex')]
                for f in FINGERS]

    def angles(self, servo):
        """angles (..., D) for servo commands (..., 5), clamped into range"""
        servo = np.clip(np.asarray(servo, dtype=float), -SERVO_RANGE, SERVO_RANGE)
        theta = np.broadcast_to(self.skeleton.rest_angles(),
                                servo.shape[:-1] + (self.skeleton.n_dof,)).copy()
        lo, hi = self.skeleton.limits[:, 0], self.skeleton.limits[:, 1]
        for i, idx in enumerate(self.flexion_dofs):
            frac = servo[..., i, None] + SERVO_RANGE
            theta[..., idx] = lo[idx] + frac * (hi[idx] - lo[idx])
        return theta


def _sequence_lengths(total, length):
    if total < WINDOW:
        raise GloveValueError("need at least %d frames, got %d" % (WINDOW, total))
    q, r = divmod(total, length)
    lengths = [length] * q
    if r >= WINDOW or not q:
        lengths.append(r)
    elif r:
        lengths[-1] += r
    return lengths


def _human_sequence(job):
    seed, length, skeleton, layout, aug, hand_scale = job
    rng = np.random.default_rng(seed)
    scale = rng.uniform(*hand_scale)
    skel = skeleton.scaled(scale) if scale != 1. else skeleton
    theta = sample_keyframe_curves(rng, length, skel.limits[:, 0], skel.limits[:, 1])
    points = forward_kinematics_batch(skel, theta)
    m = augment(measure(points, layout, skel), aug, seed=rng)
    return m, normalize_pose(points, skel)


def _mech_sequence(job):
    seed, length, skeleton, layout, aug = job
    rng = np.random.default_rng(seed)
    servo = sample_keyframe_curves(rng, length, np.full(len(FINGERS), -SERVO_RANGE),
                                   np.full(len(FINGERS), SERVO_RANGE))
    points = forward_kinematics_batch(skeleton, MechHand(skeleton).angles(servo))
    return augment(measure(points, layout, skeleton), aug, seed=rng), servo


def _run_jobs(fn, jobs, workers=1, desc=None, progress=False):
    if workers > 1:
        return process_map(fn, jobs, max_workers=workers, chunksize=1, desc=desc,
                           unit='seq', disable=not progress)
    return [fn(job) for job in tqdm(jobs, desc=desc, unit='seq', disable=not progress)]


def _assemble(results, lengths, kind):
    return FrameDataset(np.concatenate([m for m, _ in results]),
                        np.concatenate([t for _, t in results]), kind,
                        np.repeat(np.arange(len(lengths)), lengths))


def _layout_for(domain):
    if not domain.augment.sensor_jitter:
        return domain.layout
    # once per domain
    rng = np.random.default_rng(domain.augment.seed)
    return jitter_layout(domain.layout, domain.augment.sensor_jitter, rng)


def gen_human_dataset(domain=None, poses=PRETRAIN_POSES, seed=0, skeleton=None, workers=1,
                      progress=False, out=None):
    """
    Simulated human-hand frames: sampled pose sequences are posed,
    normalised and measured by the domain's (jittered) sensor layout,
    then augmented.

    Parameters
    ----------
    domain  : DomainConfig, optional
    poses  : int, optional
        Total frames [default: 46000].
    seed  : int, optional
    workers  : int, optional
        Processes for generation; output is independent of this [default: 1].
    out  : str, optional
        If given, also write the JSON-lines dataset here.

    Returns
    -------
    FrameDataset with joint targets
    """
    domain = domain or DomainConfig()
    skeleton = skeleton or default_skeleton()
    lengths = _sequence_lengths(poses, domain.sequence_length)
    layout = _layout_for(domain)
    jobs = [(s, n, skeleton, layout, domain.augment, domain.hand_scale)
            for s, n in zip(child_seeds(seed + domain.pose_seed_offset, len(lengths)), lengths)]
    results = _run_jobs(_human_sequence, jobs, workers, 'gen-' + domain.name, progress)
    ds = _assemble(results, lengths, 'joints')
    frac = masked_fraction(ds.matrices)
    (log.warning if frac >= 0.01 else log.info)(
        "%s: %d frames in %d sequences, %.2f%% entries missing",
        domain.name, len(ds), len(lengths), 100 * frac)
    if out is not None:
        write_dataset(out, ds)
    return ds


def gen_mech_dataset(frames=MECH_FRAMES, seed=0, layout=None, skeleton=None,
                     noise_sigma=MECH_NOISE, sequence_length=SEQUENCE_LENGTH, workers=1,
                     progress=False, out=None):
    """
    Mechanical-hand frames with servo targets: smooth servo trajectories
    drive the finger flexions, measured with light noise and no masking.
    """
    skeleton = skeleton or default_skeleton()
    layout = layout or standard_layout(7)
    lengths = _sequence_lengths(frames, sequence_length)
    aug = AugmentConfig(noise_sigma=noise_sigma, mask_prob=0.)
    jobs = [(s, n, skeleton, layout, aug)
            for s, n in zip(child_seeds(seed, len(lengths)), lengths)]
    ds = _assemble(_run_jobs(_mech_sequence, jobs, workers, 'gen-mech', progress),
                   lengths, 'servo')
    log.info("mech: %d frames in %d sequences", len(ds), len(lengths))
    if out is not None:
        write_dataset(out, ds)
    return ds


def split_dataset(dataset, seed=0, fractions=SPLIT):
    """
    Disjoint (train, val, test) datasets by whole sequences.
    """
    ids = dataset.sequence_ids
    if len(ids) < 3:
        raise DatasetError("need >= 3 sequences to split, got %d" % len(ids))
    ids = np.random.default_rng(seed).permutation(ids)
    n_val = max(1, int(round(fractions[1] * len(ids))))
    n_test = max(1, int(round(fractions[2] * len(ids))))
    n_train = len(ids) - n_val - n_test
    if n_train < 1:
        raise DatasetError("too few sequences for a training split")
    parts = ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:]
    return tuple(dataset.select(np.sort(p)) for p in parts)


def make_windows(dataset, window=WINDOW, d_max=D_MAX):
    """
    Every run of `window` consecutive frames within a sequence, encoded,
    with the target of its final frame.
    """
    enc = encode_input(dataset.matrices, d_max)
    inputs, targets, seqs = [], [], []
    for sid, sl in dataset.sequence_slices():
        n = sl.stop - sl.start - window + 1
        if n < 1:
            continue
        win = np.lib.stride_tricks.sliding_window_view(enc[sl], window, axis=0)
        inputs.append(np.moveaxis(win, -1, 1))
        targets.append(dataset.targets[sl][window - 1:])
        seqs.append(np.full(n, sid))
    if not inputs:
        N = dataset.matrices.shape[-1] if dataset.matrices.ndim == 3 else 0
        return WindowSet(np.zeros((0, window, N, N)),
                         np.zeros((0,) + dataset.targets.shape[1:]), np.zeros(0, int))
    return WindowSet(np.ascontiguousarray(np.concatenate(inputs)),
                     np.concatenate(targets), np.concatenate(seqs))


def fit_basis(seed=0, skeleton=None, poses=BASIS_POSES, k=12):
    """pose basis fitted to a separately sampled angle corpus"""
    skeleton = skeleton or default_skeleton()
    seqs = sample_pose_sequences(max(2, poses // SEQUENCE_LENGTH), SEQUENCE_LENGTH,
                                 seed + BASIS_SEED_OFFSET, skeleton)
    return fit_pose_basis(np.concatenate(seqs), k)


def _head_for(dataset):
    return 'pose' if dataset.kind == 'joints' else 'servo'


def _check_compat(config, dataset):
    if config.head != _head_for(dataset):
        raise GloveValueError("a %r head cannot train on %r targets" % (
            config.head, dataset.kind))
    if config.n_sensors != dataset.n_sensors:
        raise GloveValueError("model expects %d sensors, dataset has %d" % (
            config.n_sensors, dataset.n_sensors))


def _progress(progress, desc):
    if isinstance(progress, TrainProgress):
        return progress
    return TrainProgress(desc=desc, leave=False, disable=not progress)


def pretrain(dataset, model_config=None, train_config=None, seed=0, progress=False):
    """
    Train a fresh model on `dataset`'s training split.

    Parameters
    ----------
    model_config  : ModelConfig, optional
        [default: full model matching the dataset's sensors and targets].
    train_config  : TrainConfig, optional
        [default: lr 1e-3].
    seed  : int, optional
        Split and pose-basis seed.

    Returns
    -------
    TrainResult(model, history, metrics on the test split)
    """
    config = model_config or ModelConfig(n_sensors=dataset.n_sensors, head=_head_for(dataset),
                                         seed=seed)
    _check_compat(config, dataset)
    train_config = train_config or TrainConfig(lr=PRETRAIN_LR, seed=seed)
    tr, va, te = (make_windows(s, config.window) for s in split_dataset(dataset, seed))
    basis = fit_basis(seed, k=config.n_coeffs) if config.head == 'pose' else None
    model = PoseNet(config, basis)
    history = train(model, tr, va, train_config, _progress(progress, 'pretrain'))
    metrics = evaluate(model, te)
    log.info("pretrain: test error %.4g %s", metrics['mean_error'], metrics['unit'])
    return TrainResult(model, history, metrics)


def finetune(model, dataset, train_config=None, seed=0, progress=False):
    """
    Continue training a copy of `model` on another domain (all parameters,
    fresh optimiser moments, default lr 1e-4).
    """
    _check_compat(model.config, dataset)
    train_config = train_config or TrainConfig(lr=FINETUNE_LR, seed=seed)
    model = copy.deepcopy(model)
    model.adam = None
    tr, va, te = (make_windows(s, model.config.window) for s in split_dataset(dataset, seed))
    history = train(model, tr, va, train_config, _progress(progress, 'finetune'))
    metrics = evaluate(model, te)
    log.info("finetune: test error %.4g %s", metrics['mean_error'], metrics['unit'])
    return TrainResult(model, history, metrics)


def evaluate_dataset(model, dataset, seed=0, split='test'):
    """metrics of `model` on one split ('train', 'val', 'test' or 'all')"""
    _check_compat(model.config, dataset)
    if split == 'all':
        part = dataset
    else:
        try:
            part = dict(zip(('train', 'val', 'test'), split_dataset(dataset, seed)))[split]
        except KeyError:
            raise GloveValueError("unknown split: " + repr(split))
    return evaluate(model, make_windows(part, model.config.window))


def baseline_metrics(reference, queries, window=WINDOW):
    """
    Nearest-neighbour baseline error on the frames of `queries` that end a
    window, looking up raw matrices of `reference`.
    """
    if reference.kind != 'joints' or queries.kind != 'joints':
        raise GloveValueError("the baseline compares joint targets")
    ends = np.concatenate([np.arange(sl.start + window - 1, sl.stop)
                           for _, sl in queries.sequence_slices()] or [np.zeros(0, int)])
    if not len(ends):
        raise DatasetError("no complete windows to evaluate")
    pred = nn_baseline_batch(queries.matrices[ends], reference.matrices, reference.targets)
    return pose_metrics(pred, queries.targets[ends])


def _runs(total, desc, progress):
    return tqdm(total=total, desc=desc, unit='run', disable=not progress)


def run_ablations(dataset, seeds=(0, 1, 2), model_config=None, train_config=None,
                  variants=('no_seq', 'no_atten', 'no_skip', 'full'), split_seed=0,
                  progress=False, check=True):
    """
    Train each ablation variant per seed on identical splits.

    Returns
    -------
    StudyResult with columns variant, parameters, mean_loss, std_loss.
    Raises `StudyAssertionError` (if `check`) unless the full model has the
    strictly lowest mean test loss.
    """
    if len(seeds) < 3:
        raise GloveValueError("ablations need >= 3 seeds")
    base = model_config or ModelConfig(n_sensors=dataset.n_sensors, head=_head_for(dataset))
    _check_compat(base, dataset)
    train_config = train_config or TrainConfig(lr=PRETRAIN_LR)
    tr, va, te = (make_windows(s, base.window) for s in split_dataset(dataset, split_seed))
    basis = fit_basis(split_seed, k=base.n_coeffs) if base.head == 'pose' else None
    rows = []
    with logging_redirect_tqdm(), _runs(len(variants) * len(seeds), 'ablate', progress) as bar:
        for name in variants:
            config = base.variant(name)
            losses = []
            for s in seeds:
                model = PoseNet(replace(config, seed=s), basis)
                train(model, tr, va, replace(train_config, seed=s))
                losses.append(model.loss(te))
                bar.update()
            count = parameter_count(config)
            log.info("%s: %d parameters, test loss %.6g", name, count, np.mean(losses))
            rows.append([name, count, float(np.mean(losses)), float(np.std(losses))])
    result = StudyResult(['variant', 'parameters', 'mean_loss', 'std_loss'], rows)
    counts = result.column('parameters')
    if len(set(counts)) != len(counts):
        log.warning("ablation variants share parameter counts: %s", counts)
    if check and 'full' in variants:
        loss = dict(zip(result.column('variant'), result.column('mean_loss')))
        worse = [v for v in loss if v != 'full' and not loss['full'] < loss[v]]
        if worse:
            raise StudyAssertionError("full model not better than %s" % worse, result)
    return result


def run_sensor_study(counts=(5, 6, 7, 8), poses=FINETUNE_POSES, seeds=(0, 1, 2), domain=None,
                     model_config=None, train_config=None, data_seed=0, workers=1,
                     progress=False, check=True):
    """
    Mean joint error per sensor count, datasets built from identical pose
    sequences.

    Returns
    -------
    StudyResult with columns sensors, pairs, mean_error_cm, std_error_cm.
    Raises `StudyAssertionError` (if `check`) unless the error falls
    strictly from 5 to 7 sensors and 7 -> 8 gains less than 6 -> 7.
    """
    domain = domain or DomainConfig()
    base = model_config or ModelConfig()
    train_config = train_config or TrainConfig(lr=PRETRAIN_LR)
    rows = []
    with logging_redirect_tqdm(), _runs(len(counts) * len(seeds), 'sensors', progress) as bar:
        for n in counts:
            layout = standard_layout(n)
            ds = gen_human_dataset(replace(domain, layout=layout), poses, data_seed,
                                   workers=workers)
            errors = []
            for s in seeds:
                res = pretrain(ds, replace(base, n_sensors=n, head='pose', seed=s),
                               replace(train_config, seed=s), seed=data_seed)
                errors.append(res.metrics['mean_error'])
                bar.update()
            rows.append([n, layout.n_pairs, float(np.mean(errors)), float(np.std(errors))])
    result = StudyResult(['sensors', 'pairs', 'mean_error_cm', 'std_error_cm'], rows)
    if check and set((5, 6, 7, 8)) <= set(counts):
        err = dict(zip(result.column('sensors'), result.column('mean_error_cm')))
        if not (err[5] > err[6] > err[7] and err[7] - err[8] < err[6] - err[7]):
            raise StudyAssertionError(
                "sensor ladder does not fall then plateau: %s" % err, result)
    return result


def run_finetune_study(sim_poses=PRETRAIN_POSES, real_poses=FINETUNE_POSES, seed=0,
                       domain=None, model_config=None, pretrain_config=None,
                       finetune_config=None, workers=1, progress=False, check=True):
    """
    Shifted-domain test error before and after fine-tuning.

    Returns
    -------
    StudyResult with columns stage, mean_error_cm; raises
    `StudyAssertionError` (if `check`) unless fine-tuning lowers the error.
    """
    domain = domain or DomainConfig()
    sim = gen_human_dataset(domain, sim_poses, seed, workers=workers, progress=progress)
    real = gen_human_dataset(domain.shifted(), real_poses, seed, workers=workers,
                             progress=progress)
    with logging_redirect_tqdm():
        pre = pretrain(sim, model_config, pretrain_config, seed, progress)
        before = evaluate_dataset(pre.model, real, seed)
        after = finetune(pre.model, real, finetune_config, seed, progress).metrics
    result = StudyResult(['stage', 'mean_error_cm'], [
        ['simulated test', pre.metrics['mean_error']],
        ['shifted, pretrain only', before['mean_error']],
        ['shifted, fine-tuned', after['mean_error']]])
    if check and not after['mean_error'] < before['mean_error']:
        raise StudyAssertionError("fine-tuning did not reduce the shifted-domain error", result)
    return result


def run_baseline_study(dataset, model=None, model_config=None, train_config=None, seed=0,
                       progress=False, check=True):
    """
    Nearest-neighbour baseline vs. the trained model on the test split.

    Returns
    -------
    StudyResult with columns method, mean_error_cm, max_error_cm.
    """
    tr, _, te = split_dataset(dataset, seed)
    if model is None:
        with logging_redirect_tqdm():
            model = pretrain(dataset, model_config, train_config, seed, progress).model
    ours = evaluate(model, make_windows(te, model.config.window))
    base = baseline_metrics(tr, te, model.config.window)
    result = StudyResult(['method', 'mean_error_cm', 'max_error_cm'], [
        ['nearest neighbour', base['mean_error'], base['max_error']],
        ['posenet', ours['mean_error'], ours['max_error']]])
    if check and not ours['mean_error'] < base['mean_error']:
        raise StudyAssertionError("model does not beat the baseline", result)
    return result


def run_size_study(model, hand_lengths=HAND_LENGTHS, poses=2000, seed=0, domain=None,
                   workers=1):
    """
    Error of a trained pose model on hands of other sizes.

    Returns
    -------
    StudyResult with columns hand_length_cm, scale, mean_error_cm.
    """
    if model.config.head != 'pose':
        raise GloveValueError("the size study needs a pose model")
    domain = domain or DomainConfig()
    rows = []
    for length in hand_lengths:
        scale = length / model.skeleton.hand_length
        ds = gen_human_dataset(replace(domain, hand_scale=(scale, scale)), poses, seed,
                               model.skeleton, workers)
        metrics = evaluate(model, make_windows(ds, model.config.window))
        rows.append([100. * length, scale, metrics['mean_error']])
    return StudyResult(['hand_length_cm', 'scale', 'mean_error_cm'], rows)


class StreamInference(object):
    """
    Sequential per-frame inference over a sliding window.

    Parameters
    ----------
    model  : PoseNet
    d_max  : float, optional
        Input scale [default: 0.3 m].
    carry_state  : bool, optional
        Step the LSTM once per frame, carrying (h, c), instead of
        re-running the zero-padded window [default: False].
    """
    def __init__(self, model, d_max=D_MAX, carry_state=False):
        self.model = model
        self.d_max = d_max
        self.carry_state = carry_state
        c = model.config
        self.buffer = np.zeros((c.window, c.n_sensors, c.n_sensors))
        self.state = None
        self.latencies = []

    def push(self, matrix):
        """prediction after adding one raw range matrix"""
        t0 = time.perf_counter()
        enc = encode_input(matrix, self.d_max)
        if self.carry_state:
            pred, self.state = self.model.step(enc, self.state)
        else:
            self.buffer = np.roll(self.buffer, -1, axis=0)
            self.buffer[-1] = enc
            pred = self.model.forward_window(self.buffer)
        self.latencies.append(time.perf_counter() - t0)
        return pred

    def run(self, lines, reader=None):
        """yield (frame, prediction) for every completed frame"""
        reader = reader or StreamReader(lines, self.model.config.n_sensors)
        for frame, matrix in reader:
            yield frame, self.push(matrix)

    @property
    def stats(self):
        lat = np.asarray(self.latencies)
        if not len(lat):
            return {'frames': 0}
        return {'frames': len(lat), 'mean_ms': 1e3 * lat.mean(),
                'p95_ms': 1e3 * np.percentile(lat, 95), 'max_ms': 1e3 * lat.max(),
                'fps': len(lat) / max(lat.sum(), 1e-12)}


def stream_infer(lines, model, d_max=D_MAX, carry_state=False):
    """
    Run `StreamInference` over wire lines.

    Returns
    -------
    outputs  : list of (frame, prediction)
    stats  : dict of latency and line statistics
    """
    reader = StreamReader(lines, model.config.n_sensors)
    inference = StreamInference(model, d_max, carry_state)
    outputs = list(inference.run(lines, reader))
    stats = dict(inference.stats, **reader.stats)
    if outputs:
        log.info("stream: %d frames at %.1f frames/s, %d malformed line(s)",
                 stats['frames'], stats['fps'], stats['malformed'])
    return outputs, stats


def report(result, out=None, fp=None):
    """print a `StudyResult` as aligned text; also CSV when `out` is given"""
    (fp or sys.stdout).write(result.text)
    if out is not None:
        write_csv(out, result.header, result.rows)
