"""Tests the synthetic paired waveform generator."""
# pylint: disable=protected-access, missing-function-docstring

import numpy as np
import pytest

from adssm import exceptions
from adssm import signals
from adssm import synthdata


def test_synthdata_generate_pair_shapes_and_labels():
    ppg, ecg, truth = synthdata.generate_pair(synthdata.SubjectProfile(), 8.0)
    assert len(ppg) == len(ecg) == 1000
    assert ppg.label == signals.Channel.PPG
    assert ecg.label == signals.Channel.ECG
    assert truth.rate_hz == 125.0
    assert np.all(truth.r_times_s < 8.0)
    assert truth.r_times_s.size == truth.systolic_times_s.size


def test_synthdata_systolic_follows_r_by_transit_time():
    profile = synthdata.SubjectProfile(ptt_delay_s=0.24)
    _, _, truth = synthdata.generate_pair(profile, 10.0)
    finite = np.isfinite(truth.systolic_times_s)
    np.testing.assert_allclose(
        truth.systolic_times_s[finite] - truth.r_times_s[finite], 0.24)


def test_synthdata_healthy_without_variability_is_regular():
    _, _, truth = synthdata.generate_pair(
        synthdata.SubjectProfile(mean_bpm=75.0), 20.0)
    intervals = np.diff(truth.r_peaks)
    assert intervals.max() - intervals.min() <= 1
    assert np.mean(intervals) == pytest.approx(100, abs=1)


def test_synthdata_afib_is_irregular():
    healthy = synthdata.generate_pair(
        synthdata.SubjectProfile(hr_variability=0.02), 60.0, seed=1)[2]
    afib = synthdata.generate_pair(
        synthdata.SubjectProfile(afib=True), 60.0, seed=1)[2]
    assert np.std(np.diff(afib.r_times_s)) > 3 * np.std(
        np.diff(healthy.r_times_s))


def test_synthdata_afib_has_no_p_wave():
    healthy_profile = synthdata.SubjectProfile()
    afib_profile = synthdata.SubjectProfile(afib=True, hr_variability=0.0)
    _, healthy, truth = synthdata.generate_pair(healthy_profile, 8.0)
    _, afib, afib_truth = synthdata.generate_pair(afib_profile, 8.0)

    def p_energy(ecg, r_peaks):
        rows = [ecg.samples[r - 25:r - 15] for r in r_peaks[1:]]
        return float(np.mean(np.square(rows)))

    assert p_energy(afib, afib_truth.r_peaks) < 0.5 * p_energy(
        healthy, truth.r_peaks)


def test_synthdata_is_reproducible():
    profile = synthdata.SubjectProfile(afib=True)
    first = synthdata.generate_pair(profile, 10.0, seed=5)
    second = synthdata.generate_pair(profile, 10.0, seed=5)
    other = synthdata.generate_pair(profile, 10.0, seed=6)
    np.testing.assert_array_equal(first[1].samples, second[1].samples)
    assert not np.array_equal(first[1].samples, other[1].samples)


def test_synthdata_morphology_seed_changes_amplitudes():
    first = synthdata.generate_pair(synthdata.SubjectProfile(), 8.0)[1]
    second = synthdata.generate_pair(
        synthdata.SubjectProfile(morphology_seed=9), 8.0)[1]
    assert not np.array_equal(first.samples, second.samples)


@pytest.mark.parametrize('duration, rate', [(3.9, 125.0), (10.0, 40.0)])
def test_synthdata_rejects_short_or_coarse_requests(duration, rate):
    with pytest.raises(exceptions.SignalError):
        synthdata.generate_pair(synthdata.SubjectProfile(), duration, rate)


@pytest.mark.parametrize('kwargs', [{'mean_bpm': 20.0},
                                    {'hr_variability': -0.1},
                                    {'ptt_delay_s': 0.5}])
def test_synthdata_profile_validation(kwargs):
    with pytest.raises(exceptions.SignalError):
        synthdata.SubjectProfile(**kwargs)
