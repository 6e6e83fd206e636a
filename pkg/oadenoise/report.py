# -*- coding: utf-8 -*-
"""Report bundle: aggregated curves, renderings and pass/fail verdicts.

The report is built only from the CSV tables of ``metrics/``; every
verdict in ``summary.txt`` can therefore be recomputed from those tables
with :func:`evaluate_verdicts`.

Each curve is copied as CSV and rendered twice: as a 16-bit PGM line plot
(always) and as a PNG when matplotlib is installed.

"""
import logging
import os
import warnings

import numpy as np
from astropy.table import Table

from oadenoise.exceptions import MissingArtifactError, OptoacousticWarning
from oadenoise.fileio import write_manifest, write_pgm
from oadenoise.metrics import finite_mean
from oadenoise.pipeline import (METRICS, REPORT, Timings, finish_output,
                                read_table, write_table)

__all__ = ['CURVES', 'THRESHOLDS', 'histogram_table', 'render_curves',
           'evaluate_verdicts', 'cmd_report']

log = logging.getLogger(__name__)

CURVES = (
    ('snr_mean_time', 'sample', None),
    ('snr_mean_transducer', 'channel', None),
    ('snr_sigma_sweep', 'sigma', ('snr_before', 'snr_after', 'snr_gain')),
    ('cr_per_wavelength', 'wavelength_nm', ('cr_noisy', 'cr_denoised')),
    ('depth_profiles_noisy', 'depth_m', None),
    ('depth_profiles_denoised', 'depth_m', None),
)
"""``(name, x column, y columns)`` of the curves copied from ``metrics/``;
`None` selects every other column"""

THRESHOLDS = {
    'snr_mean_gain': 5.0,
    'snr_min_gain': 0.0,
    'gn_gain_in_range': 0.0,
    'cr_fraction_improved': 0.9,
    'cr_mean_gain': 0.01,
}
"""Pass thresholds of the verdicts"""


def histogram_table(values, bins=20):
    """Histogram of the finite ``values`` as a table.

    Returns
    -------
    table : `~astropy.table.Table`
        Columns ``bin_low``, ``bin_high`` and ``count``; no rows if no value
        is finite.

    """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    table = Table(names=('bin_low', 'bin_high', 'count'),
                  dtype=('f8', 'f8', 'i8'))
    if values.size == 0:
        return table
    counts, edges = np.histogram(values, bins=bins)
    for lo, hi, n in zip(edges[:-1], edges[1:], counts):
        table.add_row((lo, hi, n))
    return table


def _draw_segment(image, p0, p1, level):
    n = int(np.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])))) + 1
    rows = np.round(np.linspace(p0[0], p1[0], n)).astype(int)
    cols = np.round(np.linspace(p0[1], p1[1], n)).astype(int)
    image[rows, cols] = level


def render_curves(x, ys, shape=(240, 480), margin=8):
    """Rasterize one or more curves into a gray-level image.

    The frame is drawn at level 0.25 and series ``k`` of ``n`` at
    ``1 - 0.5 k / n``; non-finite points break a curve.

    Parameters
    ----------
    x : array_like
        Shared abscissa.

    ys : list of array_like
        Ordinates of every series.

    shape : tuple of int
        ``(height, width)`` of the image.

    margin : int
        Pixels between the image border and the plot area.

    Returns
    -------
    image : ndarray

    """
    height, width = shape
    image = np.zeros(shape)
    top, bottom = margin, height - 1 - margin
    left, right = margin, width - 1 - margin
    image[[top, bottom], left:right + 1] = 0.25
    image[top:bottom + 1, [left, right]] = 0.25

    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in ys]
    finite_x = x[np.isfinite(x)]
    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else \
        np.array([])
    if finite_x.size == 0 or finite_y.size == 0:
        return image
    x0, x1 = finite_x.min(), finite_x.max()
    y0, y1 = finite_y.min(), finite_y.max()
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    for k, y in enumerate(ys):
        level = 1.0 - 0.5 * k / len(ys)
        rows = bottom - (y - y0) / (y1 - y0) * (bottom - top)
        cols = left + (x - x0) / (x1 - x0) * (right - left)
        ok = np.isfinite(rows) & np.isfinite(cols)
        for i in range(len(x)):
            if not ok[i]:
                continue
            if i + 1 < len(x) and ok[i + 1]:
                _draw_segment(image, (rows[i], cols[i]),
                              (rows[i + 1], cols[i + 1]), level)
            else:
                image[int(round(rows[i])), int(round(cols[i]))] = level
    return image


def _plot_png(x, ys, labels, xlabel, path):
    """Line plot with matplotlib; skipped if it is not installed."""
    try:
        from matplotlib.figure import Figure
    except ImportError:
        return False
    fig = Figure(figsize=(8, 4))
    ax = fig.subplots()
    for y, label in zip(ys, labels):
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    if labels:
        ax.legend(loc='best')
    fig.savefig(path, dpi=100)
    return True


def _render(table, xname, ynames, directory, name):
    x = np.asarray(table[xname], dtype=float)
    ys = [np.asarray(table[c], dtype=float) for c in ynames]
    write_pgm(render_curves(x, ys), os.path.join(directory, f'{name}.pgm'))
    _plot_png(x, ys, list(ynames), xname,
              os.path.join(directory, f'{name}.png'))


def _verdict(value, passed):
    if value is None or not np.isfinite(value):
        return 'MISSING' if value is None else 'FAIL'
    return 'PASS' if passed else 'FAIL'


def evaluate_verdicts(metrics_dir, gn_sigma_max=0.5):
    """Recompute all pass/fail verdicts from the metric tables.

    ================================  ====================================
    ``snr_mean_gain``                 mean finite SNR gain >= 5 dB
    ``snr_min_gain``                  every SNR gain >= 0 dB; NaN gains
                                      are skipped, -inf fails
    ``gn_gain_in_range``              gain > 0 for every swept sigma in
                                      ``(0, gn_sigma_max]``
    ``cr_fraction_improved``          share of CR gains > 0 is >= 0.9
    ``cr_mean_gain``                  mean CR gain > 0.01
    ================================  ====================================

    Returns
    -------
    verdicts : dict
        Name to ``(value, verdict)``; the verdict is ``'PASS'``,
        ``'FAIL'`` or ``'MISSING'`` (value `None`).

    """
    verdicts = {}
    snr_path = os.path.join(metrics_dir, 'snr.csv')
    if os.path.exists(snr_path):
        gains = np.asarray(read_table(snr_path)['snr_gain'], dtype=float)
        defined = gains[~np.isnan(gains)]
        mean_gain = finite_mean(gains)[0]
        min_gain = float(defined.min()) if defined.size else float('nan')
    else:
        mean_gain = min_gain = None
    verdicts['snr_mean_gain'] = (mean_gain, _verdict(
        mean_gain, mean_gain is not None and
        mean_gain >= THRESHOLDS['snr_mean_gain']))
    verdicts['snr_min_gain'] = (min_gain, _verdict(
        min_gain, min_gain is not None and
        min_gain >= THRESHOLDS['snr_min_gain']))

    sweep_path = os.path.join(metrics_dir, 'snr_sigma_sweep.csv')
    worst = None
    if os.path.exists(sweep_path):
        sweep = read_table(sweep_path)
        sigma = np.asarray(sweep['sigma'], dtype=float)
        in_range = (sigma > 0) & (sigma <= gn_sigma_max)
        if in_range.any():
            worst = float(np.min(np.asarray(sweep['snr_gain'],
                                            dtype=float)[in_range]))
    verdicts['gn_gain_in_range'] = (worst, _verdict(
        worst, worst is not None and worst > THRESHOLDS['gn_gain_in_range']))

    cr_path = os.path.join(metrics_dir, 'contrast_resolution.csv')
    if os.path.exists(cr_path):
        cr_gain = np.asarray(read_table(cr_path)['cr_gain'], dtype=float)
        fraction = float(np.mean(cr_gain > 0)) if cr_gain.size else \
            float('nan')
        cr_mean = finite_mean(cr_gain)[0]
    else:
        fraction = cr_mean = None
    verdicts['cr_fraction_improved'] = (fraction, _verdict(
        fraction, fraction is not None and
        fraction >= THRESHOLDS['cr_fraction_improved']))
    verdicts['cr_mean_gain'] = (cr_mean, _verdict(
        cr_mean, cr_mean is not None and
        cr_mean > THRESHOLDS['cr_mean_gain']))
    return verdicts


def cmd_report(config, results_dir=None, output=None):
    """Aggregate the metric tables into a report bundle.

    Writes ``snr_gain_histogram`` (from ``snr.csv``) and every entry of
    `CURVES` as CSV plus renderings, and ``summary.txt`` with the
    verdicts of :func:`evaluate_verdicts`. Missing metric tables are
    listed in the summary and in a single warning; the available parts are
    still reported.

    Returns
    -------
    directory : str
        The report directory.

    Raises
    ------
    MissingArtifactError
        ``results_dir`` does not exist.

    """
    timings = Timings()
    root = config.output_dir(output)
    results_dir = results_dir or os.path.join(root, METRICS)
    if not os.path.isdir(results_dir):
        raise MissingArtifactError(f'Missing metrics directory: expected '
                                   f'{results_dir}')
    out = os.path.join(root, REPORT)
    os.makedirs(out, exist_ok=True)
    written, missing = [], []

    snr_path = os.path.join(results_dir, 'snr.csv')
    if os.path.exists(snr_path):
        hist = histogram_table(read_table(snr_path)['snr_gain'])
        write_table(hist, os.path.join(out, 'snr_gain_histogram.csv'))
        if len(hist):
            centers = 0.5 * (np.asarray(hist['bin_low']) +
                             np.asarray(hist['bin_high']))
            write_pgm(render_curves(centers, [hist['count']]),
                      os.path.join(out, 'snr_gain_histogram.pgm'))
            _plot_png(centers, [hist['count']], [], 'snr_gain',
                      os.path.join(out, 'snr_gain_histogram.png'))
        written.append('snr_gain_histogram')
    else:
        missing.append('snr.csv')

    for name, xname, ynames in CURVES:
        path = os.path.join(results_dir, f'{name}.csv')
        if not os.path.exists(path):
            missing.append(f'{name}.csv')
            continue
        table = read_table(path)
        if ynames is None:
            ynames = [c for c in table.colnames if c != xname]
        write_table(table, os.path.join(out, f'{name}.csv'))
        if len(table):
            _render(table, xname, ynames, out, name)
        written.append(name)

    sigma_max = config.get('dataset', 'gn_sigma_max')
    verdicts = evaluate_verdicts(results_dir, sigma_max)
    summary = {}
    for name, (value, verdict) in verdicts.items():
        summary[f'{name}.verdict'] = verdict
        summary[f'{name}.value'] = 'none' if value is None else float(value)
        summary[f'{name}.threshold'] = THRESHOLDS[name]
    summary['artifacts'] = written
    summary['missing'] = missing
    write_manifest(os.path.join(out, 'summary.txt'), summary)
    if missing:
        warnings.warn(f'Report is missing inputs: {", ".join(missing)}',
                      OptoacousticWarning)
    for name, (value, verdict) in verdicts.items():
        log.info('%s: %s (%s)', name, verdict, value)

    inputs = {}
    if os.path.exists(os.path.join(results_dir, 'manifest.txt')):
        inputs['metrics'] = os.path.join(results_dir, 'manifest.txt')
    finish_output(out, config, 'report', inputs,
                  {'artifacts': written, 'missing': missing,
                   'summary': 'summary.txt'}, timings)
    return out
