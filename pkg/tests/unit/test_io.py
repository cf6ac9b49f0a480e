"""Tests the adssm file io system."""
# pylint: disable=protected-access, missing-function-docstring

import os

import numpy as np
import pytest
import torch

from adssm import config
from adssm import exceptions
from adssm import io
from adssm import model
from adssm import signals


def _write(path, content):
    with open(path, 'w') as f:
        f.write(content)
    return str(path)


def test_io_load_config_defaults():
    conf = io.load_config()
    assert conf == config.Config()
    assert (conf.learning_rate, conf.batch_size, conf.epochs,
            conf.anneal_end_epoch) == (0.0008, 128, 5000, 1250)
    assert (conf.hidden, conf.latent, conf.interval_length) == (256, 128, 90)
    assert (conf.chunk_seconds, conf.sample_rate_hz, conf.seed) == (
        4.0, 125.0, 0)


def test_io_load_config_empty_file(tmp_path):
    assert io.load_config(_write(tmp_path / 'c.yaml', '')) == config.Config()


def test_io_load_config_file_then_flags(tmp_path):
    path = _write(tmp_path / 'c.yaml',
                  'epochs: 5000\nlearning_rate: 1e-3\nuse_attention: false\n')
    conf = io.load_config(path, {'epochs': 50, 'seed': None})
    assert conf.epochs == 50
    assert conf.learning_rate == 0.001
    assert conf.use_attention is False
    assert conf.seed == 0


def test_io_load_config_unknown_key_lists_valid_keys(tmp_path):
    path = _write(tmp_path / 'c.yaml', 'epochs: 5\nlatent_size: 3\n')
    with pytest.raises(exceptions.UnknownConfigKeyError) as info:
        io.load_config(path)
    assert info.value.key == 'latent_size'
    assert info.value.line == 2
    assert 'latent' in info.value.valid
    assert 'line 2' in str(info.value)


def test_io_load_config_reports_bad_value_line(tmp_path):
    path = _write(tmp_path / 'c.yaml', 'seed: 1\nepochs: ten\n')
    with pytest.raises(exceptions.ConfigError) as info:
        io.load_config(path)
    assert info.value.line == 2


def test_io_load_config_rejects_nested_values(tmp_path):
    path = _write(tmp_path / 'c.yaml', 'hidden:\n  - 1\n  - 2\n')
    with pytest.raises(exceptions.ConfigError) as info:
        io.load_config(path)
    assert info.value.line == 1


def test_io_load_config_malformed_yaml_has_line(tmp_path):
    path = _write(tmp_path / 'c.yaml', 'seed: 1\nepochs: [5\nhidden: 3\n')
    with pytest.raises(exceptions.ConfigError) as info:
        io.load_config(path)
    assert info.value.line >= 2
    assert info.value.exit_code == exceptions.EXIT_MALFORMED_INPUT


def test_io_load_config_validates_values():
    with pytest.raises(exceptions.ConfigError):
        io.load_config(overrides={'batch_size': 0})
    with pytest.raises(exceptions.UnknownConfigKeyError):
        io.load_config(overrides={'bogus': 1})


def test_io_dump_config_round_trips(tmp_path):
    conf = config.Config(epochs=3, strict_posterior=True)
    path = _write(tmp_path / 'c.yaml', io.dump_config(conf))
    assert io.load_config(path) == conf


def test_io_waveform_round_trip(tmp_path):
    w = signals.Waveform(np.random.default_rng(0).normal(size=300), 125.0,
                         signals.Channel.ECG)
    path = str(tmp_path / 'w.csv')
    io.write_waveform(path, w)
    loaded = io.read_waveform(path, signals.Channel.ECG)
    assert loaded.sample_rate_hz == 125.0
    assert loaded.label == signals.Channel.ECG
    np.testing.assert_array_equal(loaded.samples, w.samples)


def test_io_read_waveform_rejects_bad_header(tmp_path):
    path = _write(tmp_path / 'w.csv', 'time,value\n0,1\n0.008,2\n')
    with pytest.raises(exceptions.MalformedCsvError) as info:
        io.read_waveform(path)
    assert info.value.line == 1


def test_io_read_waveform_reports_uneven_spacing_line(tmp_path):
    path = _write(tmp_path / 'w.csv',
                  't_sec,value\n0,0\n0.008,1\n0.016,2\n0.030,3\n0.032,4\n')
    with pytest.raises(exceptions.MalformedCsvError) as info:
        io.read_waveform(path)
    assert info.value.line == 5


def test_io_read_waveform_reports_unparsable_line(tmp_path):
    path = _write(tmp_path / 'w.csv', 't_sec,value\n0,0\n0.008,abc\n')
    with pytest.raises(exceptions.MalformedCsvError) as info:
        io.read_waveform(path)
    assert info.value.line == 3


def test_io_read_waveform_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.read_waveform(str(tmp_path / 'missing.csv'))


def test_io_manifest_round_trip(tmp_path):
    entries = [io.ManifestEntry('s00', str(tmp_path / 's00_ppg.csv'),
                                str(tmp_path / 's00_ecg.csv'), 'healthy'),
               io.ManifestEntry('s01', str(tmp_path / 'sub' / 's01_ppg.csv'),
                                str(tmp_path / 'sub' / 's01_ecg.csv'), 'afib')]
    path = str(tmp_path / 'manifest.csv')
    io.write_manifest(path, entries)
    with open(path) as f:
        assert 'sub/s01_ppg.csv' in f.read().replace(os.sep, '/')
    assert io.read_manifest(path) == entries


def test_io_read_manifest_rejects_unknown_label(tmp_path):
    path = _write(tmp_path / 'm.csv',
                  'subject,ppg_path,ecg_path,label\ns0,a.csv,b.csv,sick\n')
    with pytest.raises(exceptions.MalformedCsvError) as info:
        io.read_manifest(path)
    assert info.value.line == 2


def test_io_write_peaks_leaves_missing_pulse_empty(tmp_path):
    path = str(tmp_path / 'peaks.csv')
    io.write_peaks(path, np.array([0.5, 1.3]), np.array([0.7, np.nan]))
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines == ['beat_index,r_time_s,systolic_time_s',
                     '0,0.500000,0.700000', '1,1.300000,']


def test_io_append_training_log_writes_header_once(tmp_path):
    path = str(tmp_path / 'metrics.csv')
    io.append_training_log(path, (0, 0.0, 1.5, 2.5, 0.0))
    io.append_training_log(path, (1, 0.5, 1.25, 2.0, 0.0))
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == 'epoch,beta,train_loss,val_loss,wall_clock_s'
    assert lines[1:] == ['0,0.0,1.5,2.5,0.0', '1,0.5,1.25,2.0,0.0']


def test_io_checkpoint_round_trip_is_exact(tmp_path):
    tensors = {'a': torch.randn(3, 4, dtype=model.DTYPE),
               'b.c': torch.tensor(1.0 / 3.0, dtype=model.DTYPE),
               'd': torch.zeros(0, 2, dtype=model.DTYPE)}
    path = str(tmp_path / 'x.ckpt')
    io.save_checkpoint(path, model.TINY_DIMS, tensors)
    dims, loaded = io.load_checkpoint(path)
    assert dims == model.TINY_DIMS
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert loaded[name].shape == value.shape
        assert torch.equal(loaded[name], value)
    assert not os.path.exists(path + '.tmp')


def test_io_checkpoint_rejects_bad_magic(tmp_path):
    path = str(tmp_path / 'x.ckpt')
    io.save_checkpoint(path, model.TINY_DIMS, {'a': torch.ones(2)})
    with open(path, 'r+b') as f:
        f.write(b'NOTADSSM')
    with pytest.raises(exceptions.CheckpointError):
        io.load_checkpoint(path)


def test_io_checkpoint_rejects_truncation(tmp_path):
    path = str(tmp_path / 'x.ckpt')
    io.save_checkpoint(path, model.TINY_DIMS,
                       {'a': torch.ones(5, dtype=model.DTYPE)})
    with open(path, 'rb') as f:
        data = f.read()
    with open(path, 'wb') as f:
        f.write(data[:-3])
    with pytest.raises(exceptions.CheckpointError):
        io.load_checkpoint(path)
