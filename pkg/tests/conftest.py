"""Shared pytest config."""
import sys

import numpy as np
from pytest import fixture

from sonoglove.kinematics import default_skeleton, fit_pose_basis, sample_pose_sequences
from tqdm import tqdm


@fixture(autouse=True)
def pretest_posttest():
    """Fixture for all tests ensuring environment cleanup"""
    sys.setswitchinterval(1)

    if getattr(tqdm, "_instances", False):
        n = len(tqdm._instances)
        if n:
            tqdm._instances.clear()
            raise EnvironmentError(
                "{0} `tqdm` instances still in existence PRE-test".format(n))
    yield
    if getattr(tqdm, "_instances", False):
        n = len(tqdm._instances)
        if n:
            tqdm._instances.clear()
            raise EnvironmentError(
                "{0} `tqdm` instances still in existence POST-test".format(n))


@fixture(scope='session')
def skeleton():
    return default_skeleton()


@fixture(scope='session')
def basis(skeleton):
    """12-component basis over 2000 sampled poses"""
    return fit_pose_basis(np.concatenate(sample_pose_sequences(20, 100, 1, skeleton)), 12)


@fixture
def rng():
    return np.random.default_rng(0)
