"""Tests the waveform preprocessing pipeline."""
# pylint: disable=protected-access, missing-function-docstring

import numpy as np
import pytest
from scipy import signal

from adssm import exceptions
from adssm import signals
from adssm import synthdata


def _sequence(onsets, kind=signals.IntervalKind.PP, chunk_id='c'):
    count = len(onsets)
    return signals.IntervalSequence(
        segments=np.arange(count * 4, dtype=float).reshape(count, 4),
        original_lengths=np.full(count, 40),
        kind=kind,
        chunk_id=chunk_id,
        onsets=onsets)


def test_signals_waveform_rejects_non_finite_samples():
    with pytest.raises(exceptions.SignalError):
        signals.Waveform([0.0, np.nan, 1.0], 125.0)
    with pytest.raises(exceptions.SignalError):
        signals.Waveform([0.0], 125.0)
    with pytest.raises(exceptions.SignalError):
        signals.Waveform([0.0, 1.0], 0.0)


def test_signals_waveform_duration_and_times():
    w = signals.Waveform(np.zeros(250), 125.0)
    assert w.duration_s == 2.0
    assert w.times[1] == pytest.approx(0.008)
    assert len(w.evolve(np.ones(10))) == 10


def test_signals_bandpass_removes_offset_and_keeps_shape():
    t = np.arange(1250) / 125.0
    w = signals.Waveform(np.sin(2 * np.pi * 2.0 * t) + 5.0, 125.0)
    filtered = signals.bandpass_filter(w, 0.5, 8.0)
    assert len(filtered) == len(w)
    interior = slice(250, -250)
    assert abs(filtered.samples[interior].mean()) < 0.05
    assert np.corrcoef(filtered.samples[interior],
                       w.samples[interior])[0, 1] > 0.99


@pytest.mark.parametrize('low, high', [(0.0, 8.0), (8.0, 0.5), (0.5, 62.5)])
def test_signals_bandpass_rejects_invalid_band(low, high):
    w = signals.Waveform(np.zeros(100), 125.0)
    with pytest.raises(exceptions.SignalError):
        signals.bandpass_filter(w, low, high)


def test_signals_detect_peaks_on_flat_signal_is_empty():
    w = signals.Waveform(np.zeros(500), 125.0)
    assert len(signals.detect_peaks(w)) == 0


def test_signals_detect_peaks_refractory_keeps_earlier_on_tie():
    samples = np.zeros(200)
    samples[50] = 1.0
    samples[60] = 1.0
    peaks = signals.detect_peaks(signals.Waveform(samples, 125.0))
    assert list(peaks.indices) == [50]


def test_signals_detect_peaks_refractory_keeps_higher_peak():
    samples = np.zeros(200)
    samples[50] = 0.8
    samples[60] = 1.0
    peaks = signals.detect_peaks(signals.Waveform(samples, 125.0))
    assert list(peaks.indices) == [60]


def test_signals_detect_peaks_rejects_invalid_rates():
    w = signals.Waveform(np.zeros(100), 125.0)
    with pytest.raises(exceptions.SignalError):
        signals.detect_peaks(w, min_bpm=120, max_bpm=60)


def test_signals_detect_peaks_finds_synthetic_r_peaks():
    _, ecg, truth = synthdata.generate_pair(synthdata.SubjectProfile(), 10.0)
    peaks = signals.detect_peaks(ecg)
    assert len(peaks) == len(truth.r_peaks)
    assert np.all(np.abs(peaks.indices - truth.r_peaks) <= 1)


def test_signals_detect_peaks_finds_synthetic_systolic_peaks():
    ppg, _, truth = synthdata.generate_pair(synthdata.SubjectProfile(), 10.0)
    peaks = signals.detect_peaks(ppg).indices
    for expected in truth.systolic_peaks:
        assert np.min(np.abs(peaks - expected)) <= 1


def test_signals_chunk_drops_partial_tail():
    w = signals.Waveform(np.arange(1300, dtype=float), 125.0)
    chunks = signals.chunk(w, 4.0)
    assert [len(c) for c in chunks] == [500, 500]
    assert chunks[1].samples[0] == 500.0
    with pytest.raises(exceptions.SignalError):
        signals.chunk(w, 0.0)


def test_signals_resample_keeps_endpoints():
    np.testing.assert_allclose(signals.resample([0.0, 1.0, 2.0], 5),
                               [0.0, 0.5, 1.0, 1.5, 2.0])


def test_signals_segment_intervals():
    w = signals.Waveform(np.arange(100, dtype=float), 125.0,
                         signals.Channel.ECG)
    seq = signals.segment_intervals(w, signals.PeakList([10, 30, 70]),
                                    chunk_id='a:test:0')
    assert seq.segments.shape == (2, 90)
    assert seq.kind == signals.IntervalKind.RR
    assert list(seq.original_lengths) == [20, 40]
    assert list(seq.onsets) == [10, 30]
    assert seq.segments[0, 0] == 10.0
    assert seq.segments[0, -1] == 29.0
    assert seq.chunk_id == 'a:test:0'


def test_signals_segment_intervals_needs_two_peaks():
    w = signals.Waveform(np.zeros(100), 125.0)
    with pytest.raises(exceptions.UnusableChunkError) as info:
        signals.segment_intervals(w, signals.PeakList([10]), chunk_id='x')
    assert info.value.count == 1
    assert info.value.chunk_id == 'x'


def test_signals_align_pairs_takes_first_following_rr():
    pp = _sequence([10, 50, 90])
    rr = _sequence([5, 20, 60], kind=signals.IntervalKind.RR)
    pp_out, rr_out, lags = signals.align_pairs(pp, rr)
    assert list(pp_out.onsets) == [10, 50]
    assert list(rr_out.onsets) == [20, 60]
    assert list(lags) == [10, 10]
    np.testing.assert_array_equal(rr_out.segments, rr.segments[1:])


def test_signals_align_pairs_skips_reused_rr():
    pp = _sequence([10, 12])
    rr = _sequence([15, 40], kind=signals.IntervalKind.RR)
    pp_out, rr_out, _ = signals.align_pairs(pp, rr)
    assert len(pp_out) == len(rr_out) == 1
    assert list(pp_out.onsets) == [10]


def test_signals_align_pairs_without_overlap_raises():
    with pytest.raises(exceptions.AlignmentError):
        signals.align_pairs(_sequence([100]),
                            _sequence([10], kind=signals.IntervalKind.RR))
    with pytest.raises(exceptions.AlignmentError):
        signals.align_pairs(_sequence([10]), _sequence([20], chunk_id='other'))


def test_signals_normalize_and_denormalize():
    seq = signals.IntervalSequence(segments=[[0.0, 2.0], [4.0, 6.0]],
                                   original_lengths=[10, 10])
    norm = signals.normalize(seq)
    np.testing.assert_allclose(norm.segments, [[-1, -1 / 3], [1 / 3, 1]])
    assert norm.scale == 3.0
    assert norm.offset == 3.0
    np.testing.assert_allclose(signals.denormalize(norm).segments,
                               seq.segments)


def test_signals_normalize_composes():
    seq = signals.IntervalSequence(segments=[[1.0, -7.0], [3.0, 12.0]],
                                   original_lengths=[10, 10])
    twice = signals.normalize(signals.normalize(seq))
    np.testing.assert_allclose(signals.denormalize(twice).segments,
                               seq.segments)


def test_signals_normalize_constant_chunk():
    seq = signals.IntervalSequence(segments=np.full((2, 3), 4.0),
                                   original_lengths=[10, 10])
    norm = signals.normalize(seq)
    assert np.all(norm.segments == 0.0)
    assert norm.scale == 0.0
    np.testing.assert_allclose(signals.denormalize(norm).segments, 4.0)


def test_signals_add_noise_is_reproducible():
    w = signals.Waveform(np.zeros(1000), 125.0)
    first = signals.add_noise(w, signals.DEFAULT_NOISE, seed=3)
    second = signals.add_noise(w, signals.DEFAULT_NOISE, seed=3)
    other = signals.add_noise(w, signals.DEFAULT_NOISE, seed=4)
    np.testing.assert_array_equal(first.samples, second.samples)
    assert not np.array_equal(first.samples, other.samples)


def test_signals_add_noise_baseline_only_is_bounded():
    w = signals.Waveform(np.zeros(1000), 125.0)
    spec = signals.NoiseSpec(baseline_components=((0.3, 0.3), (0.4, 0.2)))
    noisy = signals.add_noise(w, spec, seed=0)
    assert np.max(np.abs(noisy.samples)) <= 0.7 + 1e-12
    assert np.max(np.abs(noisy.samples)) > 0.0


def test_signals_noise_spec_validation():
    with pytest.raises(exceptions.SignalError):
        signals.NoiseSpec(gaussian_std=-1.0)
    with pytest.raises(exceptions.SignalError):
        signals.NoiseSpec(baseline_components=((0.1, 0.0),))
    unchanged = signals.add_noise(signals.Waveform(np.ones(10), 125.0),
                                  signals.NoiseSpec(), seed=0)
    assert np.all(unchanged.samples == 1.0)


def test_signals_bandpass_removes_constant_signal():
    w = signals.Waveform(np.full(1250, 2.0), 125.0)
    filtered = signals.bandpass_filter(w, 0.5, 40.0)
    assert np.max(np.abs(filtered.samples)) < 1e-3 * 2.0


def _rms(values):
    return float(np.sqrt(np.mean(values ** 2)))


def test_signals_bandpass_keeps_in_band_sinusoid():
    t = np.arange(1250) / 125.0
    w = signals.Waveform(np.sin(2 * np.pi * 5.0 * t), 125.0)
    filtered = signals.bandpass_filter(w, 0.5, 40.0)
    interior = slice(125, -125)
    ratio = _rms(filtered.samples[interior]) / _rms(w.samples[interior])
    assert abs(ratio - 1.0) < 0.05


def test_signals_bandpass_attenuates_slow_drift():
    t = np.arange(7500) / 125.0
    w = signals.Waveform(np.sin(2 * np.pi * 0.05 * t), 125.0)
    filtered = signals.bandpass_filter(w, 0.5, 40.0)
    interior = slice(625, -625)
    assert _rms(filtered.samples[interior]) < 0.05 * _rms(w.samples[interior])


def test_signals_detect_peaks_on_sinusoid():
    t = np.arange(500) / 125.0
    peaks = signals.detect_peaks(signals.Waveform(np.sin(2 * np.pi * t), 125.0))
    assert len(peaks) == 4
    assert np.all(np.abs(np.diff(peaks.indices) - 125) <= 1)


def test_signals_detect_peaks_skips_truncated_edge_pulses():
    t = np.arange(481) / 125.0
    # starts just past a crest and ends while climbing towards the next
    samples = np.sin(2 * np.pi * (t + 0.3))
    peaks = signals.detect_peaks(signals.Waveform(samples, 125.0)).indices
    assert len(peaks) == 3
    assert np.all(np.abs(peaks - [119, 244, 369]) <= 1)


def test_signals_detect_peaks_ignores_constant_offset():
    ppg, _, _ = synthdata.generate_pair(synthdata.SubjectProfile(), 10.0)
    shifted = ppg.evolve(ppg.samples + 3.0)
    np.testing.assert_array_equal(signals.detect_peaks(ppg).indices,
                                  signals.detect_peaks(shifted).indices)


def test_signals_chunk_examples():
    assert [len(c) for c in signals.chunk(
        signals.Waveform(np.zeros(500), 125.0), 4.0)] == [500]
    assert [len(c) for c in signals.chunk(
        signals.Waveform(np.zeros(1250), 125.0), 4.0)] == [500, 500]
    assert signals.chunk(signals.Waveform(np.zeros(499), 125.0), 4.0) == []


@pytest.mark.parametrize('seconds', [0.001, 0.01])
def test_signals_chunk_shorter_than_two_samples(seconds):
    w = signals.Waveform(np.zeros(500), 125.0)
    with pytest.raises(exceptions.SignalError):
        signals.chunk(w, seconds)


def test_signals_normalize_is_idempotent():
    rng = np.random.default_rng(6)
    seq = signals.IntervalSequence(segments=rng.normal(3.0, 2.0, (5, 90)),
                                   original_lengths=np.full(5, 100))
    once = signals.normalize(seq)
    twice = signals.normalize(once)
    np.testing.assert_allclose(twice.segments, once.segments, atol=1e-12,
                               rtol=0)


def test_signals_add_noise_sinusoid_variance():
    w = signals.Waveform(np.zeros(7500), 125.0)
    spec = signals.NoiseSpec(baseline_components=((1.0, 0.5),))
    noisy = signals.add_noise(w, spec, seed=2)
    assert np.var(noisy.samples) == pytest.approx(0.5, rel=0.05)


def test_signals_add_noise_default_spectrum():
    w = signals.Waveform(np.zeros(25000), 125.0)
    noisy = signals.add_noise(w, signals.DEFAULT_NOISE, seed=1)
    freqs, power = signal.periodogram(noisy.samples, fs=125.0)
    strongest = np.sort(freqs[np.argsort(power)[-3:]])
    np.testing.assert_allclose(strongest, [0.2, 0.3, 0.9], atol=1e-9)
    expected = 0.3 ** 2 + (0.3 ** 2 + 0.4 ** 2 + 0.1 ** 2) / 2
    assert np.var(noisy.samples) == pytest.approx(expected, rel=0.05)
