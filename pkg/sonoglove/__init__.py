"""
Ultrasonic-glove hand tracking: synthetic hands, simulated range
sensors, trilateration, and a from-scratch encoder-decoder pose model.
"""
from .geometry import TriangleFrame, fit_circle, platform_experiment, trilaterate
from .kinematics import (
    HandSkeleton, PoseBasis, decode_pose, default_skeleton, fit_pose_basis, forward_kinematics,
    normalize_pose, sample_pose_sequences)
from .posenet import ModelConfig, PoseNet, TrainConfig, evaluate, nn_baseline, train
from .sensorsim import AugmentConfig, SensorLayout, augment, encode_input, measure, standard_layout
from .utils import (
    CheckpointError, DatasetError, DegenerateError, GloveKeyError, GloveValueError,
    GloveWarning, InconsistentRangesError, LimitError, NonFiniteError, ShapeError,
    StreamAbort, StudyAssertionError)
from .version import __version__

__all__ = ['HandSkeleton', 'PoseBasis', 'default_skeleton', 'forward_kinematics',
           'fit_pose_basis', 'decode_pose', 'sample_pose_sequences', 'normalize_pose',
           'SensorLayout', 'AugmentConfig', 'standard_layout', 'measure', 'augment',
           'encode_input', 'TriangleFrame', 'trilaterate', 'fit_circle', 'platform_experiment',
           'ModelConfig', 'TrainConfig', 'PoseNet', 'train', 'evaluate', 'nn_baseline',
           'GloveValueError', 'LimitError', 'DegenerateError', 'ShapeError',
           'InconsistentRangesError', 'CheckpointError', 'DatasetError', 'GloveKeyError',
           'NonFiniteError', 'StudyAssertionError', 'StreamAbort', 'GloveWarning',
           '__version__']
