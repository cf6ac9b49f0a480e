"""Turns paired recordings into aligned, normalized training chunks."""
import logging
from typing import Dict, List, Optional, Sequence

import attr
import numpy as np

from adssm import config as _config
from adssm import exceptions
from adssm import io
from adssm import model
from adssm import signals

_LOGGER = logging.getLogger(__name__)

TRAIN = 'train'
VALIDATION = 'validation'
TEST = 'test'
NOISY = 'noisy'


@attr.s(auto_attribs=True, eq=False, frozen=True)
class Record:
    """A paired PPG/ECG recording of one subject."""

    subject: str
    cohort: str
    ppg: signals.Waveform
    ecg: signals.Waveform


@attr.s(auto_attribs=True, eq=False, frozen=True)
class ChunkPair:
    """Aligned PP (x) and RR (y) intervals of one chunk plus its raw signals."""

    chunk_id: str
    subject: str
    cohort: str
    split: str
    x: signals.IntervalSequence
    y: signals.IntervalSequence
    lags: np.ndarray
    ppg: signals.Waveform
    ecg: signals.Waveform

    @property
    def steps(self) -> int:
        """Returns the number of paired intervals."""
        return len(self.x)


@attr.s(auto_attribs=True, eq=False)
class Dataset:
    """Chunks grouped by split."""

    train: List[ChunkPair] = attr.Factory(list)
    validation: List[ChunkPair] = attr.Factory(list)
    test: List[ChunkPair] = attr.Factory(list)


def split_record(record: Record,
                 train_seconds: float = 48.0,
                 validation_seconds: float = 12.0) -> Dict[str, Record]:
    """Cuts a record into its leading train, validation and trailing test parts.

    Parts shorter than two samples are left out.
    """
    rate = record.ppg.sample_rate_hz
    first = int(round(train_seconds * rate))
    second = first + int(round(validation_seconds * rate))
    bounds = {TRAIN: (0, first), VALIDATION: (first, second),
              TEST: (second, len(record.ppg))}
    parts = {}
    for split, (start, stop) in bounds.items():
        stop = min(stop, len(record.ppg), len(record.ecg))
        if stop - start < 2:
            continue
        parts[split] = attr.evolve(
            record,
            ppg=record.ppg.evolve(record.ppg.samples[start:stop]),
            ecg=record.ecg.evolve(record.ecg.samples[start:stop]))
    return parts


def chunk_name(subject: str, split: str, start: int, tag: str = '') -> str:
    """Returns the `subject:split:start[~tag]` id of a chunk."""
    suffix = f'~{tag}' if tag else ''
    return f'{subject}:{split}:{start}{suffix}'


def prepare_record(record: Record,
                   conf: _config.Config,
                   split: str = TRAIN,
                   noise: Optional[signals.NoiseSpec] = None,
                   seed: int = 0,
                   tag: str = '',
                   cohort: Optional[str] = None) -> List[ChunkPair]:
    """Noise (optional), filter, chunk, segment, align and normalize a record.

    Chunks without two usable peaks on either channel, or without any PP/RR
    pair, are skipped with a warning.
    """
    ppg, ecg = record.ppg, record.ecg
    if ppg.sample_rate_hz != ecg.sample_rate_hz:
        raise exceptions.SignalError(
            f'{record.subject}: PPG and ECG sample rates differ.')
    if noise is not None:
        ppg = signals.add_noise(ppg, noise, seed)
        if conf.noise_on_ecg:
            ecg = signals.add_noise(ecg, noise, seed + 1)
    ppg = signals.bandpass_filter(ppg, conf.ppg_low_hz, conf.ppg_high_hz)
    ecg = signals.bandpass_filter(ecg, conf.ecg_low_hz, conf.ecg_high_hz)

    size = int(round(conf.chunk_seconds * ppg.sample_rate_hz))
    cohort = cohort or record.cohort
    pairs = []
    for index, (ppg_chunk, ecg_chunk) in enumerate(
            zip(signals.chunk(ppg, conf.chunk_seconds),
                signals.chunk(ecg, conf.chunk_seconds))):
        chunk_id = chunk_name(record.subject, split, index * size, tag)
        try:
            pp = signals.segment_intervals(
                ppg_chunk,
                signals.detect_peaks(ppg_chunk, conf.min_bpm, conf.max_bpm),
                conf.interval_length, chunk_id)
            rr = signals.segment_intervals(
                ecg_chunk,
                signals.detect_peaks(ecg_chunk, conf.min_bpm, conf.max_bpm),
                conf.interval_length, chunk_id)
            pp, rr, lags = signals.align_pairs(pp, rr)
        except exceptions.SignalError as exc:
            _LOGGER.warning('Skipping chunk %s: %s', chunk_id, exc)
            continue
        pairs.append(ChunkPair(chunk_id=chunk_id,
                               subject=record.subject,
                               cohort=cohort,
                               split=split,
                               x=signals.normalize(pp),
                               y=signals.normalize(rr),
                               lags=lags,
                               ppg=ppg_chunk,
                               ecg=ecg_chunk))
    return pairs


def noise_seed(seed: int, subject: str) -> int:
    """Seed of the noise added to one subject's PPG."""
    return model.chunk_seed(seed, f'noise:{subject}')


def build_dataset(records: Sequence[Record], conf: _config.Config) -> Dataset:
    """Splits every record and prepares its chunks.

    With noise augmentation each training record also contributes a copy
    whose PPG carries the default baseline wander and Gaussian noise. With
    noisy_test each test record also contributes such a copy, labelled with
    the `noisy` cohort so it is reported next to the clean chunks.
    """
    data = Dataset()
    for record in records:
        parts = split_record(record, conf.train_seconds, conf.validation_seconds)
        for split, part in parts.items():
            getattr(data, split).extend(prepare_record(part, conf, split))
        if conf.noise_augmentation and TRAIN in parts:
            data.train.extend(prepare_record(
                parts[TRAIN], conf, TRAIN,
                noise=signals.DEFAULT_NOISE,
                seed=noise_seed(conf.seed, record.subject),
                tag='aug'))
        if conf.noisy_test and TEST in parts:
            data.test.extend(prepare_record(
                parts[TEST], conf, TEST,
                noise=signals.DEFAULT_NOISE,
                seed=noise_seed(conf.seed, f'{record.subject}:{TEST}'),
                tag=NOISY,
                cohort=NOISY))
    _LOGGER.info('Prepared %d train, %d validation and %d test chunks.',
                 len(data.train), len(data.validation), len(data.test))
    return data


def load_records(manifest_path: str,
                 conf: _config.Config) -> List[Record]:
    """Reads every record listed in a manifest."""
    records = []
    for entry in io.read_manifest(manifest_path):
        ppg = io.read_waveform(entry.ppg_path, signals.Channel.PPG)
        ecg = io.read_waveform(entry.ecg_path, signals.Channel.ECG)
        if ppg.sample_rate_hz != conf.sample_rate_hz:
            _LOGGER.warning('%s is sampled at %g Hz, config expects %g Hz.',
                            entry.subject, ppg.sample_rate_hz,
                            conf.sample_rate_hz)
        records.append(Record(entry.subject, entry.label, ppg, ecg))
    return records
