"""Preprocessing from raw paired waveforms to normalized interval sequences."""
import enum
import logging
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy import ndimage
from scipy import signal

from adssm import exceptions

_LOGGER = logging.getLogger(__name__)

INTERVAL_LENGTH = 90
FILTER_ORDER = 2
MOVING_AVERAGE_SECONDS = 0.75
THRESHOLD_FRACTION = 0.15

PPG_BAND = (0.5, 8.0)
ECG_BAND = (0.5, 40.0)


class Channel(enum.Enum):
    """Physiological channel of a waveform."""

    PPG = 'PPG'
    ECG = 'ECG'


class IntervalKind(enum.Enum):
    """Peak-to-peak interval flavour."""

    PP = 'PP'
    RR = 'RR'


def _as_float_array(value: Sequence[float]) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _as_int_array(value: Sequence[int]) -> np.ndarray:
    return np.asarray(value, dtype=np.int64).reshape(-1)


@attr.s(auto_attribs=True, eq=False, frozen=True)
class Waveform:
    """A uniformly sampled 1-D physiological signal."""

    samples: np.ndarray = attr.ib(converter=_as_float_array)
    sample_rate_hz: float = attr.ib(converter=float)
    label: Channel = Channel.PPG

    @sample_rate_hz.validator
    def _check_rate(self, _, value):
        if not value > 0:
            raise exceptions.SignalError(
                f'Sample rate must be positive, got {value}.')

    @samples.validator
    def _check_samples(self, _, value):
        if value.ndim != 1 or value.size < 2:
            raise exceptions.SignalError(
                'A waveform needs a 1-D array of at least 2 samples.')
        if not np.all(np.isfinite(value)):
            raise exceptions.SignalError('Waveform samples must be finite.')

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        """Returns the duration covered by the samples in seconds."""
        return len(self) / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        """Returns the sample times in seconds."""
        return np.arange(len(self)) / self.sample_rate_hz

    def evolve(self, samples: np.ndarray) -> 'Waveform':
        """Returns a copy of this waveform carrying new samples."""
        return attr.evolve(self, samples=samples)


@attr.s(auto_attribs=True, eq=False, frozen=True)
class PeakList:
    """Sample indices of systolic or R peaks, strictly increasing."""

    indices: np.ndarray = attr.ib(converter=_as_int_array,
                                  factory=lambda: np.zeros(0, np.int64))

    @indices.validator
    def _check_indices(self, _, value):
        if value.size > 1 and np.any(np.diff(value) <= 0):
            raise exceptions.SignalError('Peak indices must strictly increase.')
        if value.size and value[0] < 0:
            raise exceptions.SignalError('Peak indices must be non-negative.')

    def __len__(self) -> int:
        return int(self.indices.size)


@attr.s(auto_attribs=True, eq=False, frozen=True)
class IntervalSequence:
    """A chunk's peak-to-peak segments, each resampled to a fixed length."""

    segments: np.ndarray = attr.ib(converter=_as_float_array)
    original_lengths: np.ndarray = attr.ib(converter=_as_int_array)
    kind: IntervalKind = IntervalKind.PP
    chunk_id: str = ''
    onsets: Optional[np.ndarray] = attr.ib(
        default=None, converter=attr.converters.optional(_as_int_array))
    scale: float = 1.0
    offset: float = 0.0

    def __attrs_post_init__(self):
        if self.segments.ndim != 2 or self.segments.shape[0] < 1:
            raise exceptions.SignalError(
                'An interval sequence needs a non-empty T x n matrix.')
        if self.original_lengths.size != self.segments.shape[0]:
            raise exceptions.SignalError(
                'original_lengths must have one entry per segment.')
        if np.any(self.original_lengths < 2):
            raise exceptions.SignalError(
                'Every interval must span at least 2 samples.')
        if self.onsets is not None and self.onsets.size != len(self):
            raise exceptions.SignalError('onsets must have one entry per segment.')

    def __len__(self) -> int:
        return int(self.segments.shape[0])

    def take(self, rows: Sequence[int]) -> 'IntervalSequence':
        """Returns the sub-sequence made of the given rows."""
        rows = np.asarray(rows, dtype=np.int64)
        onsets = self.onsets[rows] if self.onsets is not None else None
        return attr.evolve(self,
                           segments=self.segments[rows],
                           original_lengths=self.original_lengths[rows],
                           onsets=onsets)


@attr.s(auto_attribs=True, eq=False, frozen=True)
class NoiseSpec:
    """Baseline wander sinusoids plus i.i.d. Gaussian noise."""

    baseline_components: Tuple[Tuple[float, float], ...] = attr.ib(
        default=(), converter=lambda items: tuple(
            (float(a), float(f)) for a, f in items))
    gaussian_std: float = attr.ib(default=0.0, converter=float)

    @baseline_components.validator
    def _check_components(self, _, value):
        for _amplitude, frequency in value:
            if not frequency > 0:
                raise exceptions.SignalError(
                    f'Noise frequencies must be positive, got {frequency}.')

    @gaussian_std.validator
    def _check_std(self, _, value):
        if value < 0:
            raise exceptions.SignalError(
                f'Noise standard deviation must be non-negative, got {value}.')


DEFAULT_NOISE = NoiseSpec(baseline_components=((0.3, 0.3), (0.4, 0.2),
                                               (0.1, 0.9)),
                          gaussian_std=0.3)


def bandpass_filter(w: Waveform, low_hz: float, high_hz: float) -> Waveform:
    """Zero-phase Butterworth band-pass built from second-order sections."""
    nyquist = w.sample_rate_hz / 2
    if not 0 < low_hz < high_hz < nyquist:
        raise exceptions.SignalError(
            f'Invalid band ({low_hz}, {high_hz}) Hz; need '
            f'0 < low < high < {nyquist} Hz.')
    sos = signal.butter(FILTER_ORDER, (low_hz, high_hz), btype='bandpass',
                        fs=w.sample_rate_hz, output='sos')
    padlen = min(len(w) - 1, 3 * (2 * len(sos) + 1))
    filtered = signal.sosfiltfilt(sos, w.samples, padlen=padlen)
    return w.evolve(filtered)


def detect_peaks(w: Waveform,
                 min_bpm: float = 40.0,
                 max_bpm: float = 180.0) -> PeakList:
    """Finds peaks above a moving-average-plus-offset adaptive threshold.

    Each contiguous run of samples above the threshold contributes its highest
    sample (earliest on ties), unless that sample sits on either end of the
    waveform. Candidates closer than the refractory gap implied by max_bpm
    keep the higher one.

    Args:
        w: Waveform to search.
        min_bpm: Lowest plausible rate; only validated.
        max_bpm: Highest plausible rate, sets the refractory gap.

    Returns:
        PeakList, empty when nothing crosses the threshold.

    Raises:
        SignalError if the rate bounds are invalid or samples are not finite.
    """
    if not 20 <= min_bpm < max_bpm <= 300:
        raise exceptions.SignalError(
            f'Need 20 <= min_bpm < max_bpm <= 300, got ({min_bpm}, {max_bpm}).')
    x = w.samples
    if not np.all(np.isfinite(x)):
        raise exceptions.SignalError('Cannot detect peaks on non-finite samples.')

    window = max(1, int(round(MOVING_AVERAGE_SECONDS * w.sample_rate_hz)))
    moving_average = ndimage.uniform_filter1d(x, size=window, mode='nearest')
    threshold = moving_average + THRESHOLD_FRACTION * (x.max() - x.mean())
    above = x > threshold
    if not above.any():
        return PeakList()

    edges = np.diff(above.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    stops = list(np.flatnonzero(edges == -1) + 1)
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        stops.append(x.size)

    refractory = w.sample_rate_hz * 60.0 / max_bpm
    peaks: List[int] = []
    for start, stop in zip(starts, stops):
        candidate = start + int(np.argmax(x[start:stop]))
        # a maximum on the first or last sample is a truncated pulse
        if candidate in (0, x.size - 1):
            continue
        if peaks and candidate - peaks[-1] < refractory:
            if x[candidate] > x[peaks[-1]]:
                peaks[-1] = candidate
            continue
        peaks.append(candidate)
    return PeakList(peaks)


def chunk(w: Waveform, seconds: float) -> List[Waveform]:
    """Splits a waveform into consecutive non-overlapping chunks."""
    if not seconds > 0:
        raise exceptions.SignalError(
            f'Chunk length must be positive, got {seconds}.')
    size = int(round(seconds * w.sample_rate_hz))
    if size < 2:
        raise exceptions.SignalError(
            f'{seconds} s at {w.sample_rate_hz} Hz is shorter than 2 samples.')
    count = len(w) // size
    return [w.evolve(w.samples[i * size:(i + 1) * size])
            for i in range(count)]


def resample(values: np.ndarray, length: int) -> np.ndarray:
    """Linearly resamples values to the given length keeping both endpoints."""
    values = np.asarray(values, dtype=np.float64)
    source = np.arange(values.size, dtype=np.float64)
    target = np.linspace(0.0, values.size - 1.0, length)
    return np.interp(target, source, values)


def segment_intervals(w: Waveform,
                      peaks: PeakList,
                      length: int = INTERVAL_LENGTH,
                      chunk_id: str = '') -> IntervalSequence:
    """Cuts the waveform between successive peaks and resamples each cut."""
    if len(peaks) < 2:
        raise exceptions.UnusableChunkError(len(peaks), chunk_id)
    indices = peaks.indices
    if indices[-1] >= len(w):
        raise exceptions.SignalError('Peak index beyond the end of the waveform.')
    rows = [resample(w.samples[a:b], length)
            for a, b in zip(indices[:-1], indices[1:])]
    kind = IntervalKind.RR if w.label == Channel.ECG else IntervalKind.PP
    return IntervalSequence(segments=np.stack(rows),
                            original_lengths=np.diff(indices),
                            kind=kind,
                            chunk_id=chunk_id,
                            onsets=indices[:-1])


def align_pairs(
        ppg: IntervalSequence,
        ecg: IntervalSequence
) -> Tuple[IntervalSequence, IntervalSequence, np.ndarray]:
    """Pairs each PP interval with the RR interval starting nearest after it.

    Returns:
        The paired PP and RR sequences, truncated to a common length, and the
        per-pair lag in samples (RR onset minus PP onset, never negative).

    Raises:
        AlignmentError if no PP interval has a following RR interval.
    """
    if ppg.onsets is None or ecg.onsets is None:
        raise exceptions.AlignmentError('Both sequences need interval onsets.')
    if ppg.chunk_id != ecg.chunk_id:
        raise exceptions.AlignmentError(
            f'Cannot pair chunk {ppg.chunk_id!r} with {ecg.chunk_id!r}.')
    pp_rows, rr_rows = [], []
    for i, onset in enumerate(ppg.onsets):
        j = int(np.searchsorted(ecg.onsets, onset, side='left'))
        if j >= len(ecg):
            break
        if rr_rows and j <= rr_rows[-1]:
            continue
        pp_rows.append(i)
        rr_rows.append(j)
    if not pp_rows:
        raise exceptions.AlignmentError(
            f'No overlapping PP/RR intervals in chunk {ppg.chunk_id!r}.')
    lags = ecg.onsets[rr_rows] - ppg.onsets[pp_rows]
    return ppg.take(pp_rows), ecg.take(rr_rows), lags


def normalize(seq: IntervalSequence) -> IntervalSequence:
    """Min-max scales the whole chunk to [-1, 1], keeping scale and offset.

    The stored scale and offset compose with any previous normalization, so
    denormalize always returns to the original units.
    """
    low = float(seq.segments.min())
    high = float(seq.segments.max())
    offset = (high + low) / 2
    half_range = (high - low) / 2
    if half_range > 0:
        scaled = (seq.segments - offset) / half_range
    else:
        scaled = np.zeros_like(seq.segments)
    return attr.evolve(seq,
                       segments=scaled,
                       scale=seq.scale * half_range,
                       offset=seq.offset + seq.scale * offset)


def denormalize(seq: IntervalSequence) -> IntervalSequence:
    """Maps a normalized sequence back to the original units."""
    return attr.evolve(seq,
                       segments=seq.segments * seq.scale + seq.offset,
                       scale=1.0,
                       offset=0.0)


def add_noise(w: Waveform, spec: NoiseSpec, seed: int) -> Waveform:
    """Adds baseline wander sinusoids and Gaussian noise, reproducibly."""
    rng = np.random.default_rng(seed)
    t = w.times
    noisy = w.samples.copy()
    phases = rng.uniform(0.0, 2 * np.pi, size=len(spec.baseline_components))
    for (amplitude, frequency), phase in zip(spec.baseline_components, phases):
        noisy += amplitude * np.sin(2 * np.pi * frequency * t + phase)
    if spec.gaussian_std > 0:
        noisy += rng.normal(0.0, spec.gaussian_std, size=noisy.size)
    _LOGGER.debug('Added %d wander components and std %.3f noise.',
                  len(spec.baseline_components), spec.gaussian_std)
    return w.evolve(noisy)
