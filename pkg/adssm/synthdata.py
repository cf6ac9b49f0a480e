"""Paired synthetic PPG/ECG waveforms with known ground truth."""
from typing import Tuple

import attr
import numpy as np

from adssm import exceptions
from adssm import signals

MIN_RATE_HZ = 50.0
AFIB_LOG_SIGMA = 0.25
MIN_RR_FRACTION = 0.4

# (offset, amplitude mV, width s); P and T offsets are fractions of the beat
# interval, QRS offsets are in seconds.
_P_WAVE = (-0.16, 0.15, 0.025)
_QRS = (
    (-0.025, -0.12, 0.008),
    (0.0, 1.0, 0.010),
    (0.025, -0.25, 0.008),
)
_T_WAVE = (0.25, 0.25, 0.045)

_PULSE_RISE_S = 0.06
_PULSE_DECAY_FRACTION = 0.2


@attr.s(auto_attribs=True, frozen=True)
class SubjectProfile:
    """Heart-rate and morphology settings for one synthetic subject."""

    mean_bpm: float = attr.ib(default=70.0)
    hr_variability: float = attr.ib(default=0.0)
    afib: bool = False
    ptt_delay_s: float = attr.ib(default=0.2)
    morphology_seed: int = 0

    @mean_bpm.validator
    def _check_bpm(self, _, value):
        if not 30 <= value <= 220:
            raise exceptions.SignalError(
                f'mean_bpm must lie in [30, 220], got {value}.')

    @hr_variability.validator
    def _check_variability(self, _, value):
        if value < 0:
            raise exceptions.SignalError(
                f'hr_variability must be non-negative, got {value}.')

    @ptt_delay_s.validator
    def _check_ptt(self, _, value):
        if not 0.1 <= value <= 0.4:
            raise exceptions.SignalError(
                f'ptt_delay_s must lie in [0.1, 0.4], got {value}.')


@attr.s(auto_attribs=True, eq=False, frozen=True)
class GroundTruth:
    """Beat times emitted by the generator; NaN marks a pulse past the end."""

    r_times_s: np.ndarray
    systolic_times_s: np.ndarray
    rate_hz: float = 125.0

    @property
    def r_peaks(self) -> np.ndarray:
        """Returns the R peaks as sample indices at the generator's rate."""
        return self._indices(self.r_times_s)

    @property
    def systolic_peaks(self) -> np.ndarray:
        """Returns the in-range systolic peaks as sample indices."""
        times = self.systolic_times_s[np.isfinite(self.systolic_times_s)]
        return self._indices(times)

    def _indices(self, times: np.ndarray) -> np.ndarray:
        return np.round(times * self.rate_hz).astype(np.int64)


def _beat_intervals(profile: SubjectProfile, duration_s: float,
                    rng: np.random.Generator) -> np.ndarray:
    mean_rr = 60.0 / profile.mean_bpm
    count = int(np.ceil(duration_s / (mean_rr * MIN_RR_FRACTION))) + 2
    if profile.afib:
        sigma = np.sqrt(AFIB_LOG_SIGMA ** 2 +
                        np.log1p((profile.hr_variability / mean_rr) ** 2))
        rr = rng.lognormal(np.log(mean_rr) - sigma ** 2 / 2, sigma, size=count)
    elif profile.hr_variability > 0:
        rr = rng.normal(mean_rr, profile.hr_variability, size=count)
    else:
        rr = np.full(count, mean_rr)
    return np.maximum(rr, mean_rr * MIN_RR_FRACTION)


def _gaussian(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _skewed_pulse(t: np.ndarray, center: float, decay: float) -> np.ndarray:
    width = np.where(t < center, _PULSE_RISE_S, decay)
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def generate_pair(
        profile: SubjectProfile,
        duration_s: float,
        rate_hz: float = 125.0,
        seed: int = 0,
) -> Tuple[signals.Waveform, signals.Waveform, GroundTruth]:
    """Builds an ECG from P-QRS-T bumps and a PPG of delayed skewed pulses.

    Args:
        profile: Subject heart-rate and morphology settings.
        duration_s: Signal length in seconds, at least 4.
        rate_hz: Sample rate, at least 50 Hz to resolve the QRS complex.
        seed: Seed for beat timing; morphology uses profile.morphology_seed.

    Returns:
        PPG waveform, ECG waveform and the ground-truth beat times.
    """
    if duration_s < 4:
        raise exceptions.SignalError(
            f'Need at least 4 s of signal, got {duration_s}.')
    if rate_hz < MIN_RATE_HZ:
        raise exceptions.SignalError(
            f'Rate {rate_hz} Hz is too low to resolve the QRS complex.')

    rng = np.random.default_rng(seed)
    morph = np.random.default_rng(profile.morphology_seed)
    gains = 1.0 + 0.1 * morph.uniform(-1.0, 1.0, size=3 + len(_QRS))

    rr = _beat_intervals(profile, duration_s, rng)
    first = rr[0] / 2
    r_times = first + np.concatenate(([0.0], np.cumsum(rr[1:])))
    r_times = np.round(r_times * rate_hz) / rate_hz
    keep = r_times < duration_s
    r_times = r_times[keep]
    local_rr = rr[1:][:r_times.size]

    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    ecg = np.zeros(n)
    ppg = np.zeros(n)
    for r_time, beat_rr in zip(r_times, local_rr):
        if not profile.afib:
            offset, amplitude, width = _P_WAVE
            ecg += gains[0] * amplitude * _gaussian(
                t, r_time + offset * beat_rr, width)
        for k, (offset, amplitude, width) in enumerate(_QRS):
            ecg += gains[1 + k] * amplitude * _gaussian(t, r_time + offset, width)
        offset, amplitude, width = _T_WAVE
        ecg += gains[-2] * amplitude * _gaussian(
            t, r_time + offset * beat_rr, width)
        ppg += gains[-1] * _skewed_pulse(t, r_time + profile.ptt_delay_s,
                                         _PULSE_DECAY_FRACTION * beat_rr)

    systolic = r_times + profile.ptt_delay_s
    systolic = np.where(systolic < (n - 1) / rate_hz, systolic, np.nan)
    truth = GroundTruth(r_times_s=r_times,
                        systolic_times_s=systolic,
                        rate_hz=rate_hz)
    return (signals.Waveform(ppg, rate_hz, signals.Channel.PPG),
            signals.Waveform(ecg, rate_hz, signals.Channel.ECG),
            truth)
