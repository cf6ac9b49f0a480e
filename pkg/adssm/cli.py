"""Command line interface for adssm."""
import logging
import os
import sys
from typing import Any, List, Optional

import click
import numpy as np
import torch

import adssm
from adssm import dataset as _dataset
from adssm import exceptions
from adssm import io
from adssm import metrics
from adssm import model
from adssm import signals
from adssm import synthdata
from adssm import training
from adssm import translate as _translate

_LOGGER = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def _resolve(ctx: click.Context, **overrides: Any):
    """Loads the configuration for a subcommand and applies run settings."""
    conf = io.load_config(ctx.obj['config'], overrides)
    torch.set_num_threads(conf.threads)
    _LOGGER.info('Resolved configuration (seed=%d):\n%s', conf.seed,
                 io.dump_config(conf))
    return conf


@click.group()
@click.option('--config', help='Flat YAML file of config keys.', default='')
@click.option('--log-level', default='INFO', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']),
              help='Verbosity of the log written to stderr.')
@click.pass_context
def cli(ctx: click.Context, config: str = '', log_level: str = 'INFO'):
    """Translates PPG into ECG with an attention-based deep state-space model.

    Waveform CSVs carry a `t_sec,value` header with uniformly spaced samples;
    manifests carry `subject,ppg_path,ecg_path,label` with paths relative to
    the manifest and labels healthy or afib.
    """
    logging.basicConfig(level=log_level, format=LOG_FORMAT, force=True)
    ctx.ensure_object(dict)
    ctx.obj['config'] = config


@cli.command()
def version():
    """Print out the current version."""
    click.echo(adssm.__version__)


@cli.command()
@click.option('--subjects', default=4, show_default=True, type=int,
              help='Number of synthetic subjects.')
@click.option('--afib', default=0, show_default=True, type=int,
              help='How many of the subjects have atrial fibrillation.')
@click.option('--duration', default=60.0, show_default=True, type=float,
              help='Record length in seconds.')
@click.option('--seed', type=int, help='Overrides the config seed.')
@click.option('--out', required=True, help='Output directory.')
@click.pass_context
def synth(ctx, subjects: int, afib: int, duration: float, seed: Optional[int],
          out: str):
    """Write paired synthetic PPG/ECG records, ground-truth peaks and a
    manifest.csv."""
    conf = _resolve(ctx, seed=seed)
    if subjects < 1 or not 0 <= afib <= subjects:
        raise click.BadParameter('need subjects >= 1 and 0 <= afib <= subjects.')
    os.makedirs(out, exist_ok=True)
    entries = []
    for index in range(subjects):
        subject = f's{index:02d}'
        rng = np.random.default_rng(model.chunk_seed(conf.seed,
                                                     f'subject:{subject}'))
        is_afib = index >= subjects - afib
        profile = synthdata.SubjectProfile(
            mean_bpm=float(rng.uniform(60.0, 90.0)),
            hr_variability=0.0 if is_afib else float(rng.uniform(0.01, 0.05)),
            afib=is_afib,
            ptt_delay_s=float(rng.uniform(0.15, 0.3)),
            morphology_seed=index)
        ppg, ecg, truth = synthdata.generate_pair(
            profile, duration, conf.sample_rate_hz,
            seed=model.chunk_seed(conf.seed, f'beats:{subject}'))
        ppg_path = os.path.join(out, f'{subject}_ppg.csv')
        ecg_path = os.path.join(out, f'{subject}_ecg.csv')
        io.write_waveform(ppg_path, ppg)
        io.write_waveform(ecg_path, ecg)
        io.write_peaks(os.path.join(out, f'{subject}_peaks.csv'),
                       truth.r_times_s, truth.systolic_times_s)
        entries.append(io.ManifestEntry(subject, ppg_path, ecg_path,
                                        'afib' if is_afib else 'healthy'))
    io.write_manifest(os.path.join(out, 'manifest.csv'), entries)
    _LOGGER.info('Wrote %d records to %s.', subjects, out)


@cli.command()
@click.option('--manifest', required=True, help='Record manifest CSV.')
@click.option('--out', required=True, help='Chunk summary CSV.')
@click.pass_context
def preprocess(ctx, manifest: str, out: str):
    """Summarize the aligned chunks every record yields, per split."""
    conf = _resolve(ctx)
    data = _dataset.build_dataset(_dataset.load_records(manifest, conf), conf)
    rows = []
    for split in (_dataset.TRAIN, _dataset.VALIDATION, _dataset.TEST):
        for pair in getattr(data, split):
            rows.append((pair.chunk_id, pair.subject, pair.cohort, split,
                         pair.steps, pair.x.scale, pair.x.offset,
                         pair.y.scale, pair.y.offset,
                         float(np.mean(pair.lags))))
    io.write_rows(out, ('chunk_id', 'subject', 'cohort', 'split', 'intervals',
                        'pp_scale', 'pp_offset', 'rr_scale', 'rr_offset',
                        'mean_lag_samples'), rows)


@cli.command()
@click.option('--manifest', required=True, help='Record manifest CSV.')
@click.option('--out', required=True, help='Checkpoint directory.')
@click.option('--epochs', type=int, help='Overrides the config epochs.')
@click.option('--seed', type=int, help='Overrides the config seed.')
@click.option('--resume', default='', help='Checkpoint to continue from.')
@click.pass_context
def train(ctx, manifest: str, out: str, epochs: Optional[int],
          seed: Optional[int], resume: str):
    """Train a network; writes metrics.csv and *.ckpt files to --out."""
    conf = _resolve(ctx, epochs=epochs, seed=seed)
    data = _dataset.build_dataset(_dataset.load_records(manifest, conf), conf)
    sched = training.Schedule.from_config(conf)
    state = training.train(data, sched, conf.seed, out, conf=conf,
                           resume_from=resume)
    _LOGGER.info('Trained %d parameters for %d epochs; best loss %.6f.',
                 model.parameter_count(state.network), state.epoch,
                 state.best_loss)


def _band_paths(out: str):
    stem, ext = os.path.splitext(out)
    return f'{stem}_lower{ext or ".csv"}', f'{stem}_upper{ext or ".csv"}'


@cli.command(name='translate')
@click.option('--ppg', required=True, help='PPG waveform CSV.')
@click.option('--checkpoint', required=True, help='Trained checkpoint.')
@click.option('--out', required=True, help='Translated ECG CSV.')
@click.option('--ref', default='', help='Reference ECG CSV for metrics.')
@click.option('--report', default='', help='Per-chunk metrics CSV; needs --ref.')
@click.option('--mode', default=_translate.MEAN, show_default=True,
              type=click.Choice(_translate.MODES))
@click.option('--draws', default=0, show_default=True, type=int,
              help='Latent paths drawn in sample mode; bands need 20.')
@click.option('--seed', type=int, help='Overrides the config seed.')
@click.option('--cohort', default='healthy', show_default=True,
              help='Cohort label written to the report.')
@click.pass_context
def translate(ctx, ppg: str, checkpoint: str, out: str, ref: str, report: str,
              mode: str, draws: int, seed: Optional[int], cohort: str):
    """Translate a PPG recording into ECG.

    Sample mode with at least 20 draws also writes <out>_lower.csv and
    <out>_upper.csv holding the 5th and 95th percentile bands.
    """
    conf = _resolve(ctx, seed=seed)
    if report and not ref:
        raise click.UsageError('--report needs --ref.')
    network = training.load_network(checkpoint, conf.strict_posterior,
                                    conf.use_attention)
    waveform = io.read_waveform(ppg, signals.Channel.PPG)
    subject = os.path.splitext(os.path.basename(ppg))[0]

    if ref:
        record = _dataset.Record(subject, cohort, waveform,
                                 io.read_waveform(ref, signals.Channel.ECG))
        pairs = _dataset.prepare_record(record, conf, _dataset.TEST)
        chunks = [_translate.translate_chunk(
            pair.x, network, mode, draws,
            model.chunk_seed(conf.seed, pair.chunk_id),
            waveform.sample_rate_hz) for pair in pairs]
        if not chunks:
            raise exceptions.UnusableChunkError(0, subject)
        whole = _translate.concatenate(chunks)
        records = [metrics.evaluate_translation(t, pair)
                   for t, pair in zip(chunks, pairs)]
        if report:
            metrics.write_report(report, records)
        click.echo(metrics.format_summary(metrics.aggregate(records)))
    else:
        _, whole = _translate.translate_record(waveform, network, conf, mode,
                                               draws, conf.seed, subject)

    io.write_waveform(out, whole.ecg_mean)
    if whole.draws >= _translate.MIN_BAND_DRAWS:
        lower, upper = _translate.uncertainty_band(whole)
        lower_path, upper_path = _band_paths(out)
        io.write_waveform(lower_path, lower)
        io.write_waveform(upper_path, upper)
    elif mode == _translate.SAMPLE:
        _LOGGER.warning('Only %d draws; uncertainty bands need %d.',
                        whole.draws, _translate.MIN_BAND_DRAWS)


@cli.command()
@click.option('--pred', required=True, help='Generated ECG CSV.')
@click.option('--ref', required=True, help='Recorded ECG CSV.')
@click.option('--out', default='', help='Per-chunk metrics CSV.')
@click.option('--summary', default='', help='Per-cohort summary CSV.')
@click.option('--cohort', default='healthy', show_default=True,
              help='Cohort label of this pair.')
@click.pass_context
def evaluate(ctx, pred: str, ref: str, out: str, summary: str, cohort: str):
    """Compare two ECG waveforms chunk by chunk."""
    conf = _resolve(ctx)
    prediction = io.read_waveform(pred, signals.Channel.ECG)
    reference = io.read_waveform(ref, signals.Channel.ECG)
    if prediction.sample_rate_hz != reference.sample_rate_hz:
        raise exceptions.SignalError('Waveforms have different sample rates.')
    subject = os.path.splitext(os.path.basename(ref))[0]
    size = int(round(conf.chunk_seconds * reference.sample_rate_hz))
    length = min(len(prediction), len(reference))
    records = []
    for start in range(0, length, size):
        stop = min(start + size, length)
        if stop - start < 2:
            continue
        records.append(metrics.compare(
            reference.samples[start:stop], prediction.samples[start:stop],
            _dataset.chunk_name(subject, _dataset.TEST, start), subject,
            cohort))
    if out:
        metrics.write_report(out, records)
    summaries = metrics.aggregate(records)
    if summary:
        metrics.write_summary(summary, summaries)
    click.echo(metrics.format_summary(summaries))


@cli.command()
@click.option('--input', 'input_path', required=True, help='Waveform CSV.')
@click.option('--out', required=True, help='Noisy waveform CSV.')
@click.option('--seed', type=int, help='Overrides the config seed.')
@click.pass_context
def noise(ctx, input_path: str, out: str, seed: Optional[int]):
    """Add baseline wander (0.3/0.4/0.1 at 0.3/0.2/0.9 Hz) and Gaussian
    noise (std 0.3) to a waveform."""
    conf = _resolve(ctx, seed=seed)
    waveform = io.read_waveform(input_path)
    io.write_waveform(out, signals.add_noise(waveform, signals.DEFAULT_NOISE,
                                             conf.seed))


@cli.command()
@click.option('--seed', type=int, help='Overrides the config seed.')
@click.pass_context
def gradcheck(ctx, seed: Optional[int]):
    """Compare analytic and finite-difference gradients on a tiny network.

    Exits 0 only when the largest relative error is below 1e-4.
    """
    conf = _resolve(ctx, seed=seed)
    errors = model.check_gradients(seed=conf.seed)
    worst = max(errors, key=errors.get)
    click.echo(f'max_relative_error={errors[worst]:.3e} group={worst}')
    if not errors[worst] < GRADCHECK_TOLERANCE:
        raise exceptions.ExitException(
            exceptions.EXIT_FAILURE,
            f'Gradient error {errors[worst]:.3e} in {worst} exceeds '
            f'{GRADCHECK_TOLERANCE:g}.')


def _report_error(code: int, exc: BaseException) -> int:
    message = str(exc).replace('\\', '\\\\').replace('"', '\\"')
    message = message.replace('\n', ' ')
    click.echo(f'error code={code} kind={type(exc).__name__} '
               f'message="{message}"', err=True)
    return code


def run(argv: Optional[List[str]] = None) -> int:
    """Runs the command line and returns its exit code instead of exiting."""
    try:
        result = cli.main(args=argv, prog_name='adssm', standalone_mode=False)
    except click.UsageError as exc:
        return _report_error(exceptions.EXIT_USAGE, exc)
    except click.Abort as exc:
        return _report_error(exceptions.EXIT_FAILURE, exc)
    except click.ClickException as exc:
        return _report_error(exc.exit_code, exc)
    except FileNotFoundError as exc:
        return _report_error(exceptions.EXIT_MISSING_FILE, exc)
    except exceptions.AdssmError as exc:
        return _report_error(exc.exit_code, exc)
    return result if isinstance(result, int) else 0


def main():
    """Console script entry point."""
    sys.exit(run())

