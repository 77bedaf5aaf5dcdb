"""
Epoch and batch progress bars for `sonoglove.posenet.train`.

Usage:
>>> from sonoglove.contrib.progress import TrainProgress
>>> train(model, train_set, val_set, config, progress=TrainProgress(desc="pretrain"))
"""
from copy import copy
from functools import partial

from tqdm.auto import tqdm as tqdm_auto

from ..utils import GloveKeyError

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['TrainProgress']


class TrainProgress(object):
    """Training callback for epoch and batch progress."""
    @staticmethod
    def bar2callback(bar, pop=None, delta=(lambda logs: 1)):
        def callback(_, logs=None):
            n = delta(logs)
            if logs:
                if pop:
                    logs = copy(logs)
                    [logs.pop(i, 0) for i in pop]
                bar.set_postfix(logs, refresh=False)
            bar.update(n)

        return callback

    def __init__(self, epochs=None, data_size=None, batch_size=None, verbose=1,
                 tqdm_class=tqdm_auto, **tqdm_kwargs):
        """
        Parameters
        ----------
        epochs  : int, optional
        data_size  : int, optional
            Number of training windows.
        batch_size  : int, optional
            Number of windows per batch.
        verbose  : int
            0: epoch, 1: batch (transient), 2: batch. [default: 1].
        tqdm_class  : optional
            `tqdm` class to use for bars [default: `tqdm.auto.tqdm`].
        tqdm_kwargs  : optional
            Any other arguments used for all bars (e.g. `disable=True`).
        """
        if verbose not in (0, 1, 2):
            raise GloveKeyError("unknown verbosity: %r" % (verbose,))
        if tqdm_kwargs:
            tqdm_class = partial(tqdm_class, **tqdm_kwargs)
        self.tqdm_class = tqdm_class
        self.verbose = verbose
        self.epoch_bar = tqdm_class(total=epochs, unit='epoch')
        self.on_epoch_end = self.bar2callback(self.epoch_bar)
        self.batch_bar = None
        self.set_data(data_size, batch_size)

    def set_data(self, data_size, batch_size):
        """(re)compute the number of batches per epoch"""
        if data_size and batch_size:
            self.batches = (data_size + batch_size - 1) // batch_size
        else:
            self.batches = None

    def _batch_callback(self):
        self.on_batch_end = self.bar2callback(
            self.batch_bar, pop=['batch', 'size'], delta=lambda logs: 1)

    def on_train_begin(self, epochs=None, data_size=None, batch_size=None):
        if data_size is not None:
            self.set_data(data_size, batch_size)
        if epochs is not None and epochs != self.epoch_bar.total:
            self.epoch_bar.reset(total=epochs)

    def on_epoch_begin(self, epoch):
        if self.epoch_bar.n < epoch:
            ebar = self.epoch_bar
            ebar.n = ebar.last_print_n = ebar.initial = epoch
        if self.verbose == 0:
            return
        if self.verbose == 1 and self.batch_bar is not None:
            self.batch_bar.reset(total=self.batches)
            return
        if self.batch_bar is not None:
            self.batch_bar.close()
        self.batch_bar = self.tqdm_class(total=self.batches, unit='batch',
                                         leave=self.verbose == 2)
        self._batch_callback()

    def on_batch_end(self, batch, logs=None):
        pass

    def on_train_end(self):
        if self.batch_bar is not None:
            self.batch_bar.close()
        self.epoch_bar.close()
