"""Similarity metrics between recorded and generated ECG, with reports."""
import collections
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import attr
import numpy as np

from adssm import dataset as _dataset
from adssm import exceptions
from adssm import io
from adssm import translate as _translate

_LOGGER = logging.getLogger(__name__)

REPORT_HEADER = ('chunk_id', 'subject', 'cohort', 'pearson', 'rmse_mv',
                 'snr_db')
SUMMARY_HEADER = ('cohort', 'count', 'pearson_mean', 'pearson_std',
                  'rmse_mv_mean', 'rmse_mv_std', 'snr_db_mean', 'snr_db_std')
METRICS = ('pearson', 'rmse_mv', 'snr_db')
SNR_FOOTER = ('snr_db = 20*log10(||y||^2 / ||y - yhat||^2); squared norms '
              'with a factor of 20 give twice the usual power-ratio dB.')

SIGNAL = 'signal'
INTERVAL = 'interval'

# Columns of a 90-point RR interval where the P wave of the next beat sits.
P_WAVE_WINDOW = (68, 82)


def _pair(y: Sequence[float],
          yhat: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size != yhat.size:
        raise exceptions.ShapeMismatchError(
            f'Cannot compare {y.size} samples with {yhat.size}.')
    if not y.size:
        raise exceptions.InvalidArgumentError('Metrics need at least 1 sample.')
    return y, yhat


def pearson(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Pearson correlation coefficient.

    Raises:
        UndefinedMetricError if either input is constant.
    """
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise exceptions.InvalidArgumentError(
            'Correlation needs at least 2 samples.')
    dy = y - y.mean()
    dyhat = yhat - yhat.mean()
    denominator = np.linalg.norm(dy) * np.linalg.norm(dyhat)
    if denominator == 0:
        raise exceptions.UndefinedMetricError(
            'Correlation is undefined for a constant trace.')
    return float(np.clip(dy @ dyhat / denominator, -1.0, 1.0))


def rmse(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Root mean squared error, in the units of the inputs."""
    y, yhat = _pair(y, yhat)
    return float(np.linalg.norm(y - yhat) / math.sqrt(y.size))


def snr_db(y: Sequence[float], yhat: Sequence[float]) -> float:
    """20 log10 of the squared signal norm over the squared residual norm.

    Returns +inf for an exact match and -inf for a zero signal.
    """
    y, yhat = _pair(y, yhat)
    residual = float(np.sum((y - yhat) ** 2))
    power = float(np.sum(y ** 2))
    if residual == 0:
        return math.inf
    if power == 0:
        return -math.inf
    return 20.0 * math.log10(power / residual)


@attr.s(auto_attribs=True, frozen=True)
class MetricRecord:
    """Metrics of one translated chunk."""

    chunk_id: str
    subject: str
    cohort: str
    pearson: float
    rmse_mv: float
    snr_db: float

    def as_row(self) -> Tuple:
        """Returns the values in report column order."""
        return attr.astuple(self)


@attr.s(auto_attribs=True, frozen=True)
class CohortSummary:
    """Mean and population standard deviation of each metric in a cohort."""

    cohort: str
    count: int
    mean: Dict[str, float]
    std: Dict[str, float]

    def as_row(self) -> Tuple:
        """Returns cohort, count and mean, std per metric in column order."""
        row = [self.cohort, self.count]
        for name in METRICS:
            row.extend((self.mean[name], self.std[name]))
        return tuple(row)


def compare(y: Sequence[float], yhat: Sequence[float], chunk_id: str = '',
            subject: str = '', cohort: str = '') -> MetricRecord:
    """Computes all three metrics; an undefined correlation becomes NaN."""
    try:
        rho = pearson(y, yhat)
    except exceptions.UndefinedMetricError as exc:
        _LOGGER.warning('%s: %s', chunk_id or 'comparison', exc)
        rho = math.nan
    return MetricRecord(chunk_id=chunk_id,
                        subject=subject,
                        cohort=cohort,
                        pearson=rho,
                        rmse_mv=rmse(y, yhat),
                        snr_db=snr_db(y, yhat))


def aggregate(records: Iterable[MetricRecord],
              cohort: Optional[str] = None) -> Dict[str, CohortSummary]:
    """Groups records by cohort, optionally keeping only one cohort.

    NaN correlations are left out of the correlation statistics.
    """
    groups: Dict[str, List[MetricRecord]] = collections.OrderedDict()
    for record in records:
        if cohort is not None and record.cohort != cohort:
            continue
        groups.setdefault(record.cohort, []).append(record)
    if not groups:
        raise exceptions.InvalidArgumentError('No metric records to aggregate.')

    summaries = collections.OrderedDict()
    for name in sorted(groups):
        members = groups[name]
        mean, std = {}, {}
        for metric in METRICS:
            values = np.array([getattr(r, metric) for r in members])
            values = values[~np.isnan(values)]
            mean[metric] = float(values.mean()) if values.size else math.nan
            std[metric] = float(values.std()) if values.size else math.nan
        summaries[name] = CohortSummary(name, len(members), mean, std)
    return summaries


def format_summary(summaries: Dict[str, CohortSummary]) -> str:
    """Renders `mean +- std` per metric and cohort with the SNR footnote."""
    lines = [f'{"cohort":<10} {"n":>4}  {"pearson":>17}  {"rmse_mv":>17}  '
             f'{"snr_db":>17}']
    for summary in summaries.values():
        cells = [f'{summary.mean[m]:8.3f} +- {summary.std[m]:<5.3f}'
                 for m in METRICS]
        lines.append(f'{summary.cohort:<10} {summary.count:>4}  ' +
                     '  '.join(cells))
    lines.append(f'note: {SNR_FOOTER}')
    return '\n'.join(lines)


def write_report(path: str, records: Iterable[MetricRecord]):
    """Writes per-chunk metrics."""
    io.write_rows(path, REPORT_HEADER, (r.as_row() for r in records))


def write_summary(path: str, summaries: Dict[str, CohortSummary]):
    """Writes per-cohort statistics ending in a `#` footnote row."""
    rows = [s.as_row() for s in summaries.values()]
    rows.append((f'# {SNR_FOOTER}',))
    io.write_rows(path, SUMMARY_HEADER, rows)


def band_energy(segments: np.ndarray,
                start: int = P_WAVE_WINDOW[0],
                stop: int = P_WAVE_WINDOW[1]) -> np.ndarray:
    """Energy of each interval inside the [start, stop) phase window.

    Samples are measured from the median of their interval, which sits on the
    isoelectric baseline of an RR interval.
    """
    segments = np.atleast_2d(np.asarray(segments, dtype=np.float64))
    if not 0 <= start < stop <= segments.shape[1]:
        raise exceptions.InvalidArgumentError(
            f'Window [{start}, {stop}) outside 0..{segments.shape[1]}.')
    baseline = np.median(segments, axis=1, keepdims=True)
    window = segments[:, start:stop] - baseline
    return np.sum(window ** 2, axis=1)


def evaluate_translation(translation: _translate.Translation,
                         pair: _dataset.ChunkPair,
                         space: str = SIGNAL) -> MetricRecord:
    """Scores a translation against the recorded ECG of its chunk.

    Args:
        translation: Output of translate_chunk for pair.x.
        pair: The chunk with its recorded ECG.
        space: `signal` compares restored waveforms over the overlap;
            `interval` compares the normalized 90-point RR intervals.
    """
    if space == SIGNAL:
        reference = _translate.reference_segment(pair).samples
        prediction = translation.ecg_mean.samples[:reference.size]
    elif space == INTERVAL:
        reference = pair.y.segments
        prediction = translation.per_interval_mean
    else:
        raise exceptions.InvalidArgumentError(
            f'space must be {SIGNAL} or {INTERVAL}, got {space!r}.')
    return compare(reference, prediction, pair.chunk_id, pair.subject,
                   pair.cohort)
