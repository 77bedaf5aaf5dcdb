"""
File and wire formats: JSON-lines frame datasets, model checkpoints
(binary parameters plus YAML sidecar) and the ASCII sensor stream.
"""
import json
import logging
import os

import numpy as np
import yaml

from .kinematics import HandSkeleton, PoseBasis, default_skeleton
from .nn import AdamState, read_params, write_params
from .posenet import ModelConfig, PoseNet
from .sensorsim import MAX_RANGE, MISSING
from .utils import CheckpointError, DatasetError, GloveValueError, StreamAbort

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['FrameDataset', 'read_dataset', 'write_dataset', 'save_checkpoint',
           'load_checkpoint', 'sidecar_path', 'format_stream', 'StreamReader', 'ensure_dir']
log = logging.getLogger(__name__)

TARGET_KINDS = ('joints', 'servo')
SIDECAR_FORMAT = 1


class FrameDataset(object):
    """
    Frames grouped into contiguous sequences.

    Parameters
    ----------
    matrices  : array (F, N, N)
        Raw ranges [m], `MISSING` where unmeasured.
    targets  : array (F, 23, 3) or (F, 5)
    kind  : str
        'joints' or 'servo'.
    sequences  : array (F,) of int
        Sequence id per frame; frames of one sequence are contiguous and
        in time order.
    index  : array (F,) of int, optional
        Frame numbers [default: 0..F-1].
    """
    def __init__(self, matrices, targets, kind, sequences, index=None):
        if kind not in TARGET_KINDS:
            raise DatasetError("unknown target kind: " + repr(kind))
        self.matrices = np.asarray(matrices, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.kind = kind
        self.sequences = np.asarray(sequences, dtype=int)
        self.index = np.arange(len(self.matrices)) if index is None else np.asarray(index, int)
        F = len(self.matrices)
        if len(self.targets) != F or len(self.sequences) != F or len(self.index) != F:
            raise DatasetError("frame count mismatch between matrices, targets and ids")
        if F and (self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]):
            raise DatasetError("distance matrices must be (F, N, N)")
        if np.any(np.diff(self.sequences) < 0):
            raise DatasetError("sequence ids must be non-decreasing")

    def __len__(self):
        return len(self.matrices)

    def __repr__(self):
        return "FrameDataset(%d frames, %d sequences, %s)" % (
            len(self), len(self.sequence_ids), self.kind)

    @property
    def n_sensors(self):
        return self.matrices.shape[1]

    @property
    def sequence_ids(self):
        return np.unique(self.sequences)

    def select(self, sequence_ids):
        """frames of the given sequences, in file order"""
        mask = np.isin(self.sequences, sequence_ids)
        return FrameDataset(self.matrices[mask], self.targets[mask], self.kind,
                            self.sequences[mask], self.index[mask])

    def sequence_slices(self):
        """(id, slice) per contiguous sequence"""
        if not len(self):
            return []
        starts = np.flatnonzero(np.r_[True, np.diff(self.sequences) != 0])
        ends = np.r_[starts[1:], len(self)]
        return [(int(self.sequences[s]), slice(s, e)) for s, e in zip(starts, ends)]


def _record(ds, f):
    rec = {'i': int(ds.index[f]), 's': int(ds.sequences[f]), 'd': ds.matrices[f].tolist()}
    rec[ds.kind] = ds.targets[f].tolist()
    return rec


def write_dataset(path, dataset):
    """one JSON object per line: {"i", "s", "d", "joints" | "servo"}"""
    with open(path, 'w', newline='\n') as fd:
        for f in range(len(dataset)):
            fd.write(json.dumps(_record(dataset, f), separators=(',', ':')) + '\n')
    log.info("written:%s (%d frames)", path, len(dataset))


def read_dataset(path):
    matrices, targets, sequences, index = [], [], [], []
    kind = None
    with open(path) as fd:
        for lineno, line in enumerate(fd, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kinds = [k for k in TARGET_KINDS if k in rec]
                if len(kinds) != 1:
                    raise DatasetError("need exactly one of %s" % (TARGET_KINDS,))
                if kind is None:
                    kind = kinds[0]
                elif kinds[0] != kind:
                    raise DatasetError("mixed target kinds")
                index.append(int(rec['i']))
                sequences.append(int(rec['s']))
                matrices.append(rec['d'])
                targets.append(rec[kind])
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetError("%s:%d: bad record (%s)" % (path, lineno, e))
    if not matrices:
        raise DatasetError("empty dataset: " + str(path))
    try:
        m = np.array(matrices, dtype=float)
        t = np.array(targets, dtype=float)
    except ValueError:
        raise DatasetError("ragged matrices or targets in " + str(path))
    n = m.shape[-1]
    if m.ndim != 3 or m.shape[1] != n:
        raise DatasetError("distance matrices must be square")
    off = ~np.eye(n, dtype=bool)
    if np.any(m[:, ~off] != 0) or np.any((m[:, off] < 0) & (m[:, off] != MISSING)):
        raise DatasetError("matrices need a zero diagonal and ranges >= 0 or %g" % MISSING)
    ds = FrameDataset(m, t, kind, sequences, index)
    log.debug("read %r from %s", ds, path)
    return ds


def sidecar_path(path):
    return str(path) + '.yaml'


def save_checkpoint(model, path, optimizer=True):
    """
    Write `model` parameters (plus pose basis, skeleton geometry and,
    if `optimizer`, Adam moments) and the `<path>.yaml` config sidecar.
    """
    arrays = model.params.state_dict()
    if model.basis is not None:
        arrays['basis.mean'] = model.basis.mean
        arrays['basis.components'] = model.basis.components
        arrays['basis.explained_variance'] = model.basis.explained_variance
    skel = model.skeleton
    arrays['skeleton.lengths'] = skel.lengths
    arrays['skeleton.rest_directions'] = skel.rest_directions
    arrays['skeleton.dof_axes'] = skel.dof_axes
    arrays['skeleton.limits'] = skel.limits
    if optimizer and model.adam is not None:
        arrays.update(model.adam.state_dict())
        lr = model.adam.lr
    else:
        lr = None
    with open(path, 'wb') as fd:
        write_params(fd, arrays)
    with open(sidecar_path(path), 'w') as fd:
        yaml.safe_dump({'format': SIDECAR_FORMAT, 'model': model.config.to_dict(),
                        'parameters': model.params.count(), 'lr': lr},
                       fd, default_flow_style=False, sort_keys=False)
    log.info("written:%s", path)


def load_checkpoint(path, config=None):
    """
    Rebuild a `PoseNet` from `save_checkpoint` output.

    Parameters
    ----------
    config  : ModelConfig, optional
        If given, must equal the sidecar's configuration.
    """
    try:
        with open(sidecar_path(path)) as fd:
            meta = yaml.safe_load(fd) or {}
    except FileNotFoundError:
        raise CheckpointError("missing config sidecar " + sidecar_path(path))
    if meta.get('format') != SIDECAR_FORMAT or 'model' not in meta:
        raise CheckpointError("unsupported sidecar in " + sidecar_path(path))
    try:
        saved = ModelConfig.from_dict(meta['model'])
    except (KeyError, GloveValueError) as e:
        raise CheckpointError("bad model config in sidecar: %s" % e)
    if config is not None and config != saved:
        raise CheckpointError("checkpoint config %s does not match %s" % (saved, config))
    with open(path, 'rb') as fd:
        arrays = read_params(fd)
    base = default_skeleton()
    try:
        skeleton = HandSkeleton(base.landmarks, base.parents, arrays.pop('skeleton.lengths'),
                                arrays.pop('skeleton.rest_directions'), base.dof_names,
                                base.dof_segments, arrays.pop('skeleton.dof_axes'),
                                arrays.pop('skeleton.limits'))
    except KeyError as e:
        raise CheckpointError("checkpoint lacks %s" % e)
    basis = None
    if 'basis.mean' in arrays:
        basis = PoseBasis(arrays.pop('basis.mean'), arrays.pop('basis.components'),
                          arrays.pop('basis.explained_variance'))
    adam = {k: arrays.pop(k) for k in list(arrays) if k.startswith('adam.')}
    try:
        model = PoseNet(saved, basis, skeleton)
    except GloveValueError as e:
        raise CheckpointError(str(e))
    model.params.load_state_dict(arrays)
    if adam:
        model.adam = AdamState(model.params, lr=meta.get('lr') or 1e-3)
        model.adam.load_state_dict(adam)
    log.debug("loaded %r from %s", model, path)
    return model


def format_stream(matrices, start=0):
    """
    Wire lines for (F, N, N) range matrices: 'F,<frame>,<i>,<j>,<mm>' per
    off-diagonal entry (-1 when missing), then 'E,<frame>'.
    """
    for f, m in enumerate(np.asarray(matrices, dtype=float), start):
        n = len(m)
        for i in range(n):
            for j in range(n):
                if i != j:
                    v = m[i, j]
                    yield "F,%d,%d,%d,%s" % (
                        f, i, j, '-1' if v == MISSING else '%.4f' % (v * 1e3))
        yield "E,%d" % f


class StreamReader(object):
    """
    Iterate completed frames `(frame, matrix)` from wire lines.

    Malformed lines are skipped, logged and counted (the affected entry
    stays missing). Once at least `min_lines` lines have been read, more
    than `max_malformed` malformed lines (as a fraction) raise
    `StreamAbort`. A record naming another frame while one is open
    drops the open frame (counted in `dropped`) and starts the new one,
    so a lost terminator costs at most one frame.
    """
    def __init__(self, lines, n_sensors=7, max_malformed=0.01, min_lines=100):
        self.lines = lines
        self.n = n_sensors
        self.max_malformed = max_malformed
        self.min_lines = min_lines
        self.n_lines = 0
        self.malformed = 0
        self.frames = 0
        self.dropped = 0

    def _blank(self):
        m = np.full((self.n, self.n), MISSING)
        np.fill_diagonal(m, 0.)
        return m

    def _reject(self, line, why):
        self.malformed += 1
        log.warning("stream line %d malformed (%s): %r", self.n_lines, why, line)

    def _check(self):
        if self.n_lines >= self.min_lines \
                and self.malformed > self.max_malformed * self.n_lines:
            raise StreamAbort("%d of %d stream lines malformed" % (self.malformed, self.n_lines))

    def _record(self, line):
        """(tag, frame, entry); entry is (i, j, metres) or None for 'E'"""
        parts = line.split(',')
        try:
            tag, fid = parts[0], int(parts[1])
        except (IndexError, ValueError):
            raise ValueError("bad header")
        if tag == 'E' and len(parts) == 2:
            return tag, fid, None
        if tag != 'F' or len(parts) != 5:
            raise ValueError("unknown record")
        i, j, val = int(parts[2]), int(parts[3]), float(parts[4])
        if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
            raise ValueError("bad sensor pair")
        if val == MISSING:
            return tag, fid, (i, j, MISSING)
        if not 0 <= val <= MAX_RANGE * 1e3:
            raise ValueError("range outside [0, %g] mm" % (MAX_RANGE * 1e3))
        return tag, fid, (i, j, val * 1e-3)

    def __iter__(self):
        frame, m = None, None
        for line in self.lines:
            if isinstance(line, bytes):
                line = line.decode('ascii', 'replace')
            line = line.strip()
            if not line:
                continue
            self.n_lines += 1
            try:
                tag, fid, entry = self._record(line)
            except ValueError as e:
                self._reject(line, e)
                self._check()
                continue
            self._check()
            if frame is not None and fid != frame:
                self.dropped += 1
                log.warning("stream frame %d not terminated before frame %d; dropped",
                            frame, fid)
                frame, m = None, None
            if m is None:
                frame, m = fid, self._blank()
            if entry is not None:
                i, j, val = entry
                m[i, j] = val
                continue
            self.frames += 1
            yield frame, m
            frame, m = None, None
        if m is not None:
            self.dropped += 1
            log.warning("stream ended inside frame %d; dropped", frame)

    @property
    def stats(self):
        return {'lines': self.n_lines, 'malformed': self.malformed, 'frames': self.frames,
                'dropped': self.dropped}


def ensure_dir(path):
    """create the parent directory of `path` if needed"""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        os.makedirs(parent)
    return path
