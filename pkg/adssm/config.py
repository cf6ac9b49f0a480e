"""Defines the resolved run configuration."""
from typing import Any, Dict

import attr

from adssm import exceptions


def _positive(_, attribute, value):
    if not value > 0:
        raise exceptions.ConfigError(
            f'{attribute.name} must be positive, got {value!r}.')


def _non_negative(_, attribute, value):
    if value < 0:
        raise exceptions.ConfigError(
            f'{attribute.name} must be non-negative, got {value!r}.')


@attr.s(auto_attribs=True, frozen=True)
class Config:
    """Every tunable of a run, defaulting to the published hyperparameters."""

    # optimizer
    learning_rate: float = attr.ib(default=0.0008, validator=_positive)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = attr.ib(default=1e-8, validator=_positive)
    grad_clip: float = attr.ib(default=10.0, validator=_positive)
    # schedule
    epochs: int = attr.ib(default=5000, validator=_positive)
    batch_size: int = attr.ib(default=128, validator=_positive)
    anneal_end_epoch: int = attr.ib(default=1250, validator=_positive)
    checkpoint_every: int = attr.ib(default=100, validator=_positive)
    # network
    hidden: int = attr.ib(default=256, validator=_positive)
    latent: int = attr.ib(default=128, validator=_positive)
    attn_hidden: int = attr.ib(default=128, validator=_positive)
    interval_length: int = attr.ib(default=90, validator=_positive)
    strict_posterior: bool = False
    use_attention: bool = True
    # preprocessing
    sample_rate_hz: float = attr.ib(default=125.0, validator=_positive)
    chunk_seconds: float = attr.ib(default=4.0, validator=_positive)
    ppg_low_hz: float = 0.5
    ppg_high_hz: float = 8.0
    ecg_low_hz: float = 0.5
    ecg_high_hz: float = 40.0
    min_bpm: float = 40.0
    max_bpm: float = 180.0
    train_seconds: float = attr.ib(default=48.0, validator=_non_negative)
    validation_seconds: float = attr.ib(default=12.0, validator=_non_negative)
    # noise
    noise_augmentation: bool = False
    noise_on_ecg: bool = False
    noisy_test: bool = False
    # run
    seed: int = attr.ib(default=0, validator=_non_negative)
    threads: int = attr.ib(default=1, validator=_positive)
    record_wall_clock: bool = True

    @classmethod
    def keys(cls) -> Dict[str, type]:
        """Returns every configuration key with its value type."""
        return {field.name: field.type for field in attr.fields(cls)}

    def as_dict(self) -> Dict[str, Any]:
        """Returns the configuration as a flat mapping."""
        return attr.asdict(self)
