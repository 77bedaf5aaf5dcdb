"""
YAML configuration files.

Every section and key is optional; absent keys keep the compiled-in
defaults, unknown keys are errors::

    skeleton:
      bases: {index: [0.022, 0.0, 0.080], ...}     # finger -> [x, y, z] m
      phalanges: {index: [0.043, 0.025, 0.022]}    # finger -> 3 lengths m
      directions: {thumb: [0.62, -0.35, 0.70]}     # finger -> rest direction
      palm: {index_root: [...], pinky_root: [...]}
      limits: {finger: {base_flex: [-0.3, 1.6]}, thumb: {...}, arch: [0, 0.3]}
      scale: 1.0                                   # uniform size factor
    layout:
      sensors: 7                                   # standard 5-8 layout, or
      attachments: [{landmark: index_tip, offset: [0, 0.004, 0]}, ...]
      offset: [0, 0.004, 0]                        # with `sensors` only
    augment: {noise_sigma: 0.001, mask_prob: 0.008, sensor_jitter: 0, seed: 0}
    domain: {hand_scale: [0.84, 1.17], sequence_length: 100, pose_seed_offset: 0, name: sim}
    model: {heads: 2, activation: relu, ...}       # `ModelConfig` fields
    train: {epochs: 20, lr: 0.001, batch_size: 64, clip_norm: 5, seed: 0}
"""
import logging
from dataclasses import dataclass, field, fields, replace

import yaml

from .kinematics import default_skeleton, make_skeleton
from .pipeline import DomainConfig
from .posenet import ModelConfig, TrainConfig
from .sensorsim import DEFAULT_OFFSET, AugmentConfig, SensorLayout, standard_layout
from .utils import GloveKeyError, GloveValueError

__author__ = {"github.com/": ["sonoglove"]}
__all__ = ['GloveConfig', 'load_config', 'parse_config', 'SECTIONS']
log = logging.getLogger(__name__)

SECTIONS = ('skeleton', 'layout', 'augment', 'domain', 'model', 'train')
SKELETON_KEYS = ('bases', 'phalanges', 'directions', 'palm', 'limits', 'scale')
LAYOUT_KEYS = ('sensors', 'offset', 'attachments')
DOMAIN_KEYS = ('hand_scale', 'sequence_length', 'pose_seed_offset', 'name')


@dataclass
class GloveConfig(object):
    """Everything a CLI command may be configured with."""
    skeleton: object = field(default_factory=default_skeleton)
    domain: DomainConfig = field(default_factory=DomainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _section(name, data, allowed):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise GloveValueError("config section %r must be a mapping" % name)
    unknown = set(data) - set(allowed)
    if unknown:
        raise GloveKeyError("unknown %s keys: %s" % (name, sorted(unknown)))
    return dict(data)


def _layout(data):
    lay = _section('layout', data, LAYOUT_KEYS)
    if 'attachments' in lay:
        if 'sensors' in lay or 'offset' in lay:
            raise GloveValueError("layout takes either `attachments` or `sensors`/`offset`")
        return SensorLayout.from_dict(lay)
    return standard_layout(lay.get('sensors', 7), lay.get('offset', DEFAULT_OFFSET))


def parse_config(data):
    """`GloveConfig` from an already-parsed mapping"""
    data = _section('top level', data or {}, SECTIONS)
    sk = _section('skeleton', data.get('skeleton'), SKELETON_KEYS)
    scale = sk.pop('scale', 1.0)
    skeleton = make_skeleton(**sk) if sk else default_skeleton()
    if scale != 1.0:
        skeleton = skeleton.scaled(scale)
    layout = _layout(data.get('layout'))
    base = DomainConfig()
    aug = replace(base.augment, **_section(
        'augment', data.get('augment'), [f.name for f in fields(AugmentConfig)]))
    dom = _section('domain', data.get('domain'), DOMAIN_KEYS)
    if 'hand_scale' in dom:
        dom['hand_scale'] = tuple(dom['hand_scale'])
    domain = replace(base, augment=aug, layout=layout, **dom)
    model = dict(_section('model', data.get('model'), [f.name for f in fields(ModelConfig)]))
    model.setdefault('n_sensors', layout.n)
    train = TrainConfig(**_section('train', data.get('train'), [f.name for f in fields(TrainConfig)]))
    return GloveConfig(skeleton, domain, ModelConfig.from_dict(model), train)


def load_config(path=None):
    """Parse the YAML file at `path` (defaults only when `None`)."""
    if path is None:
        return GloveConfig()
    with open(path) as fd:
        try:
            data = yaml.safe_load(fd)
        except yaml.YAMLError as e:
            raise GloveValueError("%s: invalid YAML (%s)" % (path, e))
    try:
        cfg = parse_config(data)
    except TypeError as e:
        raise GloveValueError("%s: %s" % (path, e))
    log.info("config:%s", path)
    return cfg
