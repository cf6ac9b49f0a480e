"""Expose public adssm API."""

from importlib import metadata

from adssm import config
from adssm import dataset
from adssm import exceptions
from adssm import io
from adssm import metrics
from adssm import model
from adssm import signals
from adssm import synthdata
from adssm import training
from adssm import translate

__version__ = metadata.version('adssm')

AdssmNetwork = model.AdssmNetwork
Config = config.Config
Dims = model.Dims
IntervalSequence = signals.IntervalSequence
Schedule = training.Schedule
Translation = translate.Translation
Waveform = signals.Waveform

build_dataset = dataset.build_dataset
generate_pair = synthdata.generate_pair
load_config = io.load_config
train = training.train
translate_chunk = translate.translate_chunk
