"""Generates ECG from PPG intervals through the prior pathway."""
import logging
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
import torch

from adssm import config as _config
from adssm import dataset as _dataset
from adssm import exceptions
from adssm import model
from adssm import signals

_LOGGER = logging.getLogger(__name__)

MEAN = 'mean'
SAMPLE = 'sample'
MODES = (MEAN, SAMPLE)
MIN_BAND_DRAWS = 20
BAND_PERCENTILES = (5.0, 95.0)


@attr.s(auto_attribs=True, eq=False, frozen=True)
class Translation:
    """ECG generated for one chunk of PP intervals.

    ecg_mean and ecg_samples are in the units restored by the PPG chunk's
    scale; per_interval_mean stays in the normalized model space.
    """

    chunk_id: str
    ecg_mean: signals.Waveform
    per_interval_mean: np.ndarray
    pp_lengths_used: np.ndarray
    ecg_samples: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None

    def __attrs_post_init__(self):
        if len(self.ecg_mean) != int(self.pp_lengths_used.sum()):
            raise exceptions.ShapeMismatchError(
                f'{self.chunk_id}: translation length {len(self.ecg_mean)} '
                f'differs from the PP lengths {int(self.pp_lengths_used.sum())}.')
        if (self.ecg_samples is not None and
                self.ecg_samples.shape[1] != len(self.ecg_mean)):
            raise exceptions.ShapeMismatchError(
                f'{self.chunk_id}: draws and mean trace differ in length.')

    @property
    def draws(self) -> int:
        """Returns the number of Monte Carlo draws, 0 in mean mode."""
        return 0 if self.ecg_samples is None else int(self.ecg_samples.shape[0])


def reassemble(intervals: np.ndarray, lengths: Sequence[int],
               scale: float = 1.0, offset: float = 0.0) -> np.ndarray:
    """Resamples each interval to its length, concatenates and denormalizes."""
    pieces = [signals.resample(row, int(length))
              for row, length in zip(intervals, lengths)]
    return np.concatenate(pieces) * scale + offset


def _emit_path(x: signals.IntervalSequence, network: model.AdssmNetwork,
               noise: Optional[torch.Tensor]) -> Tuple[np.ndarray, np.ndarray]:
    with torch.no_grad():
        path = model.prior_rollout(x, network, noise)
        intervals = model.emit(path.samples, network)
    return intervals.numpy().copy(), path.attention.numpy().copy()


def translate_chunk(x: signals.IntervalSequence,
                    network: model.AdssmNetwork,
                    mode: str = MEAN,
                    draws: int = 0,
                    seed: int = 0,
                    sample_rate_hz: float = 125.0) -> Translation:
    """Rolls the prior over a chunk of PP intervals and emits its ECG.

    Args:
        x: Normalized PP intervals with their original lengths and scale.
        network: Trained network.
        mode: `mean` follows the prior means; `sample` also draws latent paths.
        draws: Number of latent paths drawn in sample mode.
        seed: Seed of the draws; draw i uses chunk_seed(seed, 'draw:i').
        sample_rate_hz: Rate of the generated waveform.

    Returns:
        The translation, exactly sum(x.original_lengths) samples long.

    Raises:
        NonFiniteError if the network holds NaN or infinite parameters,
        InvalidArgumentError for an unknown mode or a non-positive draw count.
    """
    if mode not in MODES:
        raise exceptions.InvalidArgumentError(
            f'mode must be one of {", ".join(MODES)}, got {mode!r}.')
    if mode == SAMPLE and draws < 1:
        raise exceptions.InvalidArgumentError(
            f'Sample mode needs at least one draw, got {draws}.')
    if not network.is_finite():
        raise exceptions.NonFiniteError(
            'Network parameters are not finite; was it trained?',
            chunk_id=x.chunk_id)

    lengths = x.original_lengths
    mean_intervals, attention = _emit_path(x, network, None)
    ecg_mean = reassemble(mean_intervals, lengths, x.scale, x.offset)

    ecg_samples = None
    if mode == SAMPLE:
        traces = []
        for i in range(draws):
            noise = model.draw_noise(model.chunk_seed(seed, f'draw:{i}'),
                                     len(x), network.dims.latent)
            intervals, _ = _emit_path(x, network, noise)
            traces.append(reassemble(intervals, lengths, x.scale, x.offset))
        ecg_samples = np.stack(traces)

    if not np.all(np.isfinite(ecg_mean)):
        raise exceptions.NonFiniteError(
            f'Translation of chunk {x.chunk_id} is not finite.',
            chunk_id=x.chunk_id)
    return Translation(chunk_id=x.chunk_id,
                       ecg_mean=signals.Waveform(ecg_mean, sample_rate_hz,
                                                 signals.Channel.ECG),
                       per_interval_mean=mean_intervals,
                       pp_lengths_used=np.asarray(lengths).copy(),
                       ecg_samples=ecg_samples,
                       attention=attention)


def uncertainty_band(
        translation: Translation,
        minimum_draws: int = MIN_BAND_DRAWS,
) -> Tuple[signals.Waveform, signals.Waveform]:
    """Pointwise 5th and 95th percentiles across the Monte Carlo draws.

    Raises:
        InsufficientDrawsError when fewer than minimum_draws draws exist.
    """
    if translation.draws < minimum_draws:
        raise exceptions.InsufficientDrawsError(translation.draws,
                                                minimum_draws)
    lower, upper = np.percentile(translation.ecg_samples, BAND_PERCENTILES,
                                 axis=0)
    return translation.ecg_mean.evolve(lower), translation.ecg_mean.evolve(upper)


def prepare_ppg(ppg: signals.Waveform,
                conf: _config.Config,
                subject: str = 'record') -> List[signals.IntervalSequence]:
    """Filters, chunks, segments and normalizes a PPG recording on its own."""
    ppg = signals.bandpass_filter(ppg, conf.ppg_low_hz, conf.ppg_high_hz)
    size = int(round(conf.chunk_seconds * ppg.sample_rate_hz))
    sequences = []
    for index, piece in enumerate(signals.chunk(ppg, conf.chunk_seconds)):
        chunk_id = _dataset.chunk_name(subject, _dataset.TEST, index * size)
        try:
            pp = signals.segment_intervals(
                piece, signals.detect_peaks(piece, conf.min_bpm, conf.max_bpm),
                conf.interval_length, chunk_id)
        except exceptions.SignalError as exc:
            _LOGGER.warning('Skipping chunk %s: %s', chunk_id, exc)
            continue
        sequences.append(signals.normalize(pp))
    return sequences


def concatenate(translations: Sequence[Translation]) -> Translation:
    """Joins chunk translations end to end, in order."""
    if not translations:
        raise exceptions.InvalidArgumentError('Nothing to concatenate.')
    first = translations[0]
    samples = None
    if all(t.ecg_samples is not None for t in translations):
        samples = np.concatenate([t.ecg_samples for t in translations], axis=1)
    return Translation(
        chunk_id=first.chunk_id.rsplit(':', 1)[0],
        ecg_mean=first.ecg_mean.evolve(
            np.concatenate([t.ecg_mean.samples for t in translations])),
        per_interval_mean=np.concatenate(
            [t.per_interval_mean for t in translations]),
        pp_lengths_used=np.concatenate(
            [t.pp_lengths_used for t in translations]),
        ecg_samples=samples)


def translate_record(ppg: signals.Waveform,
                     network: model.AdssmNetwork,
                     conf: _config.Config,
                     mode: str = MEAN,
                     draws: int = 0,
                     seed: int = 0,
                     subject: str = 'record') -> Tuple[List[Translation],
                                                       Translation]:
    """Translates every usable chunk of a PPG recording.

    Returns:
        The per-chunk translations and their concatenation.
    """
    chunks = [translate_chunk(x, network, mode, draws,
                              model.chunk_seed(seed, x.chunk_id),
                              ppg.sample_rate_hz)
              for x in prepare_ppg(ppg, conf, subject)]
    if not chunks:
        raise exceptions.UnusableChunkError(0, subject)
    _LOGGER.info('Translated %d chunks of %s.', len(chunks), subject)
    return chunks, concatenate(chunks)


def reference_segment(pair: _dataset.ChunkPair) -> signals.Waveform:
    """The recorded ECG matching a translation of the pair's PP intervals.

    Starts at the first aligned RR onset and spans the summed PP lengths,
    truncated at the end of the chunk.
    """
    start = int(pair.y.onsets[0])
    stop = start + int(pair.x.original_lengths.sum())
    return pair.ecg.evolve(pair.ecg.samples[start:stop])
