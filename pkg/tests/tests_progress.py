"""Test training progress bars."""
from io import StringIO

import numpy as np
from pytest import raises
from tqdm import tqdm

from sonoglove.contrib.progress import TrainProgress
from sonoglove.posenet import ModelConfig, PoseNet, TrainConfig, WindowSet, train
from sonoglove.utils import GloveKeyError

SMALL = dict(enc_hidden=8, enc_out=8, d_k=8, attn_out=8, dec_hidden=16, dec_out=16,
             head_hidden=16)


def run_callbacks(progress, epochs=3, batches=2):
    progress.on_train_begin(epochs, batches * 2, 2)
    for epoch in range(epochs):
        progress.on_epoch_begin(epoch)
        for batch in range(batches):
            progress.on_batch_end(batch, {'loss': 1. / (batch + 1), 'batch': batch})
        progress.on_epoch_end(epoch, {'loss': 0.5})
    progress.on_train_end()


def test_epoch_bar():
    """Test verbose=0 shows only the epoch bar"""
    with StringIO() as our_file:
        run_callbacks(TrainProgress(verbose=0, tqdm_class=tqdm, file=our_file, desc="training"))
        res = our_file.getvalue()
    assert "training: " in res
    assert "3/3" in res
    assert "2/2" not in res


def test_batch_bars():
    """Test verbose=2 leaves a bar per epoch"""
    with StringIO() as our_file:
        run_callbacks(TrainProgress(verbose=2, tqdm_class=tqdm, file=our_file))
        res = our_file.getvalue()
    assert "3/3" in res
    assert "2/2" in res
    assert "batch" in res


def test_verbosity():
    """Test invalid verbosity"""
    with raises(GloveKeyError):
        TrainProgress(verbose=3, disable=True)


def test_train_progress():
    """Test `train` drives the bars"""
    rng = np.random.default_rng(0)
    windows = WindowSet(rng.uniform(0, 1, (8, 5, 7, 7)), rng.uniform(-0.5, 0.5, (8, 5)),
                        np.zeros(8, int))
    model = PoseNet(ModelConfig(head='servo', **SMALL))
    with StringIO() as our_file:
        history = train(model, windows, config=TrainConfig(epochs=2, batch_size=4),
                        progress=TrainProgress(verbose=2, tqdm_class=tqdm, file=our_file,
                                               desc="pretrain"))
        res = our_file.getvalue()
    assert len(history['train_loss']) == 2
    assert "pretrain: " in res and "2/2" in res
    assert "loss=" in res
