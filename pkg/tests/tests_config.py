"""Test YAML configuration parsing."""
import numpy as np
from pytest import raises

from sonoglove.config import GloveConfig, load_config, parse_config
from sonoglove.utils import GloveKeyError, GloveValueError


def test_defaults():
    """Test an empty mapping gives compiled-in defaults"""
    for cfg in (parse_config({}), parse_config(None), load_config()):
        assert isinstance(cfg, GloveConfig)
        assert cfg.domain.layout.n == 7 and cfg.model.n_sensors == 7
        assert cfg.domain.augment.mask_prob == 0.008
        assert cfg.train.epochs == 20 and cfg.train.lr == 1e-3
        assert abs(cfg.skeleton.hand_length - 0.183) < 1e-12


def test_layout():
    """Test standard and explicit layouts"""
    cfg = parse_config({'layout': {'sensors': 5}})
    assert cfg.domain.layout.n == 5 and cfg.model.n_sensors == 5
    cfg = parse_config({'layout': {'attachments': [
        {'landmark': 'index_tip'}, {'landmark': 'thumb_tip', 'offset': [0, 0.002, 0]},
        {'landmark': 'wrist'}]}})
    assert cfg.domain.layout.landmarks == ['index_tip', 'thumb_tip', 'wrist']
    assert np.allclose(cfg.domain.layout.offsets[1], [0, 0.002, 0])
    assert cfg.model.n_sensors == 3
    # an explicit model width wins
    assert parse_config({'layout': {'sensors': 5}, 'model': {'n_sensors': 6}}).model.n_sensors == 6
    with raises(GloveValueError):
        parse_config({'layout': {'sensors': 5, 'attachments': [{'landmark': 'wrist'}]}})
    with raises(GloveValueError):
        parse_config({'layout': {'sensors': 9}})


def test_unknown_keys():
    """Test typos are reported"""
    with raises(GloveKeyError):
        parse_config({'modle': {}})
    with raises(GloveKeyError):
        parse_config({'train': {'epoch': 3}})
    with raises(GloveKeyError):
        parse_config({'skeleton': {'limits': {'knuckle': [0, 1]}}})
    with raises(GloveValueError):
        parse_config({'train': [1, 2]})


def test_skeleton():
    """Test skeleton scaling and table overrides"""
    cfg = parse_config({'skeleton': {'scale': 2.0}})
    assert abs(cfg.skeleton.hand_length - 0.366) < 1e-12
    cfg = parse_config({'skeleton': {'phalanges': {'middle': [0.05, 0.03, 0.03]}}})
    assert abs(cfg.skeleton.hand_length - 0.195) < 1e-12


def test_sections():
    """Test train, augment, domain and model overrides"""
    cfg = parse_config({'train': {'epochs': 3, 'lr': 0.01}, 'augment': {'noise_sigma': 0.002},
                        'domain': {'hand_scale': [0.9, 1.1], 'name': 'lab'},
                        'model': {'heads': 3, 'activation': 'tanh'}})
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.01 and cfg.train.batch_size == 64
    assert cfg.domain.augment.noise_sigma == 0.002
    assert cfg.domain.augment.mask_prob == 0.008
    assert cfg.domain.hand_scale == (0.9, 1.1) and cfg.domain.name == 'lab'
    assert cfg.model.heads == 3 and cfg.model.activation == 'tanh'
    with raises(GloveValueError):
        parse_config({'model': {'heads': 5}})


def test_load_file(tmp_path):
    """Test reading files"""
    path = tmp_path / "glove.yaml"
    path.write_text("train:\n  epochs: 2\nlayout: {sensors: 6}\n")
    cfg = load_config(str(path))
    assert cfg.train.epochs == 2 and cfg.model.n_sensors == 6
    path.write_text("train: [unclosed\n")
    with raises(GloveValueError):
        load_config(str(path))
    path.write_text("train: {epochs: x}\n")
    with raises(GloveValueError):
        load_config(str(path))
    with raises(OSError):
        load_config(str(tmp_path / "missing.yaml"))
