"""Loaders and writers for adssm file formats."""
import csv
import logging
import math
import os
import struct
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import attr
import numpy as np
import torch
import yaml

from adssm import config as _config
from adssm import exceptions
from adssm import model
from adssm import signals

_LOGGER = logging.getLogger(__name__)

WAVEFORM_HEADER = ('t_sec', 'value')
MANIFEST_HEADER = ('subject', 'ppg_path', 'ecg_path', 'label')
PEAKS_HEADER = ('beat_index', 'r_time_s', 'systolic_time_s')
TRAINING_LOG_HEADER = ('epoch', 'beta', 'train_loss', 'val_loss',
                       'wall_clock_s')
SPACING_TOLERANCE_S = 1e-6
LABELS = ('healthy', 'afib')

CHECKPOINT_MAGIC = b'ADSSMCKP'
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct('<8sI5II')
_U32 = struct.Struct('<I')
_U64 = struct.Struct('<Q')


@attr.s(auto_attribs=True, frozen=True)
class ManifestEntry:
    """One paired PPG/ECG record listed in a manifest."""

    subject: str
    ppg_path: str
    ecg_path: str
    label: str


def _read_content(filename: str) -> str:
    """Reads the content of a file."""
    with open(filename, 'r') as f:
        return f.read()


def _coerce(key: str, value: Any, value_type: type, line: int) -> Any:
    """Checks a raw YAML scalar against the type of its config key."""
    if value_type is bool:
        if isinstance(value, bool):
            return value
    elif value_type is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif value_type is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, like 1e-8, as strings
            try:
                return float(value)
            except ValueError:
                pass
    raise exceptions.ConfigError(
        f'{key} expects {value_type.__name__}, got {value!r}.', line=line)


def _parse_config(content: str) -> Dict[str, Any]:
    """Parses a flat YAML mapping, tracking the line of every key."""
    try:
        root = yaml.compose(content, Loader=yaml.SafeLoader)
        data = yaml.safe_load(content)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else 0
        raise exceptions.ConfigError(f'Malformed config: {exc.problem}.',
                                     line=line) from exc
    if root is None:
        return {}
    if not isinstance(root, yaml.MappingNode):
        raise exceptions.ConfigError('Config must be a flat key: value mapping.',
                                     line=root.start_mark.line + 1)

    keys = _config.Config.keys()
    values = {}
    for key_node, value_node in root.value:
        line = key_node.start_mark.line + 1
        key = key_node.value
        if key not in keys:
            raise exceptions.UnknownConfigKeyError(key, sorted(keys), line=line)
        if not isinstance(value_node, yaml.ScalarNode):
            raise exceptions.ConfigError(f'{key} must be a scalar value.',
                                         line=line)
        values[key] = _coerce(key, data[key], keys[key], line)
    return values


def load_config(filename: str = '',
                overrides: Optional[Mapping[str, Any]] = None) -> _config.Config:
    """Resolves a configuration from defaults, a YAML file and flag overrides.

    Args:
        filename: Optional path to a flat YAML mapping of config keys.
        overrides: Values that win over the file, usually command-line flags;
            None values are ignored.

    Raises:
        ConfigError for malformed content or values, UnknownConfigKeyError for
        keys that do not exist.
    """
    values = _parse_config(_read_content(filename)) if filename else {}
    keys = _config.Config.keys()
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in keys:
            raise exceptions.UnknownConfigKeyError(key, sorted(keys))
        values[key] = _coerce(key, value, keys[key], 0)
    return _config.Config(**values)


def dump_config(conf: _config.Config) -> str:
    """Renders a configuration as YAML."""
    return yaml.safe_dump(conf.as_dict(), sort_keys=True)


def _open_csv(path: str, header: Sequence[str]) -> Tuple[List[List[str]], int]:
    """Reads a CSV file, checking its header, returning the data rows."""
    with open(path, 'r', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or tuple(cell.strip() for cell in rows[0]) != tuple(header):
        raise exceptions.MalformedCsvError(
            path, f'expected header {",".join(header)}.', line=1)
    return rows[1:], 2


def read_waveform(path: str,
                  label: signals.Channel = signals.Channel.PPG,
                  sample_rate_hz: Optional[float] = None) -> signals.Waveform:
    """Reads a `t_sec,value` CSV into a waveform, validating the spacing."""
    rows, first_line = _open_csv(path, WAVEFORM_HEADER)
    times, values = [], []
    for line, row in enumerate(rows, first_line):
        if not row:
            continue
        if len(row) != 2:
            raise exceptions.MalformedCsvError(path, 'expected 2 columns.', line)
        try:
            times.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError as exc:
            raise exceptions.MalformedCsvError(path, str(exc), line) from exc
        if not (math.isfinite(times[-1]) and math.isfinite(values[-1])):
            raise exceptions.MalformedCsvError(path, 'non-finite value.', line)
    if len(times) < 2:
        raise exceptions.MalformedCsvError(path, 'need at least 2 samples.')

    t = np.asarray(times)
    steps = np.diff(t)
    if sample_rate_hz is None:
        span = t[-1] - t[0]
        sample_rate_hz = round((len(t) - 1) / span, 6) if span > 0 else 0.0
    if not sample_rate_hz > 0:
        raise exceptions.MalformedCsvError(path, 't_sec must strictly increase.')
    expected = t[0] + np.arange(len(t)) / sample_rate_hz
    bad = np.flatnonzero((steps <= 0) |
                         (np.abs(t[1:] - expected[1:]) > SPACING_TOLERANCE_S))
    if bad.size:
        raise exceptions.MalformedCsvError(
            path, f'samples are not uniformly spaced at {sample_rate_hz:g} Hz.',
            line=int(bad[0]) + first_line + 1)
    return signals.Waveform(np.asarray(values), sample_rate_hz, label)


def write_waveform(path: str, w: signals.Waveform):
    """Writes a waveform as a `t_sec,value` CSV."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(WAVEFORM_HEADER)
        for i, value in enumerate(w.samples):
            writer.writerow((f'{i / w.sample_rate_hz:.6f}', repr(float(value))))


def read_manifest(path: str) -> List[ManifestEntry]:
    """Reads a paired-record manifest; relative paths follow the manifest."""
    rows, first_line = _open_csv(path, MANIFEST_HEADER)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for line, row in enumerate(rows, first_line):
        if not row:
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise exceptions.MalformedCsvError(
                path, f'expected {len(MANIFEST_HEADER)} columns.', line)
        subject, ppg_path, ecg_path, label = (cell.strip() for cell in row)
        if label not in LABELS:
            raise exceptions.MalformedCsvError(
                path, f'label must be one of {", ".join(LABELS)}.', line)
        entries.append(ManifestEntry(subject,
                                     os.path.join(base, ppg_path),
                                     os.path.join(base, ecg_path),
                                     label))
    return entries


def write_manifest(path: str, entries: Iterable[ManifestEntry]):
    """Writes a manifest with paths relative to its own directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow((entry.subject,
                             os.path.relpath(entry.ppg_path, base),
                             os.path.relpath(entry.ecg_path, base),
                             entry.label))


def write_peaks(path: str, r_times_s: np.ndarray,
                systolic_times_s: np.ndarray):
    """Writes ground-truth beat times; pulses past the end stay empty."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(PEAKS_HEADER)
        for i, (r_time, systolic) in enumerate(zip(r_times_s, systolic_times_s)):
            writer.writerow((i, f'{r_time:.6f}',
                             f'{systolic:.6f}' if np.isfinite(systolic) else ''))


def append_training_log(path: str, row: Sequence[Any]):
    """Appends one epoch row, writing the header to a new file."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='') as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(TRAINING_LOG_HEADER)
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Writes a plain CSV table."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def save_checkpoint(path: str, dims: model.Dims,
                    tensors: Mapping[str, torch.Tensor]):
    """Writes named float64 tensors behind a versioned header.

    Layout, little-endian: magic, version, the five Dims widths, tensor count,
    then per tensor its name length, utf-8 name, rank, each extent as u64 and
    the row-major float64 data.
    """
    tmp_path = f'{path}.tmp'
    with open(tmp_path, 'wb') as f:
        f.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                             *dims.as_tuple(), len(tensors)))
        for name, tensor in tensors.items():
            encoded = name.encode('utf-8')
            data = tensor.detach().cpu().numpy().astype('<f8', copy=False)
            f.write(_U32.pack(len(encoded)))
            f.write(encoded)
            f.write(_U32.pack(data.ndim))
            for extent in data.shape:
                f.write(_U64.pack(extent))
            f.write(np.ascontiguousarray(data).tobytes())
    os.replace(tmp_path, path)


def _read_exact(f, size: int, path: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise exceptions.CheckpointError(f'{path}: truncated checkpoint.')
    return data


def load_checkpoint(path: str) -> Tuple[model.Dims, Dict[str, torch.Tensor]]:
    """Reads a checkpoint written by save_checkpoint."""
    tensors: Dict[str, torch.Tensor] = {}
    with open(path, 'rb') as f:
        magic, version, *widths, count = _HEADER.unpack(
            _read_exact(f, _HEADER.size, path))
        if magic != CHECKPOINT_MAGIC:
            raise exceptions.CheckpointError(f'{path}: not an adssm checkpoint.')
        if version != CHECKPOINT_VERSION:
            raise exceptions.CheckpointError(
                f'{path}: unsupported checkpoint version {version}.')
        for _ in range(count):
            (length,) = _U32.unpack(_read_exact(f, _U32.size, path))
            name = _read_exact(f, length, path).decode('utf-8')
            (rank,) = _U32.unpack(_read_exact(f, _U32.size, path))
            shape = tuple(_U64.unpack(_read_exact(f, _U64.size, path))[0]
                          for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64)) * 8
            data = np.frombuffer(_read_exact(f, size, path), dtype='<f8')
            tensors[name] = torch.from_numpy(
                data.astype(np.float64).reshape(shape))
        if f.read(1):
            raise exceptions.CheckpointError(f'{path}: trailing bytes.')
    return model.Dims(*widths), tensors
