# -*- coding: utf-8 -*-
r"""Blind spectral unmixing by regularized non-negative matrix factorization.

Per-pixel spectra of reconstructed multispectral images are stacked into a
matrix ``S`` (pixels x wavelengths) and factorized as ``S ~ W H`` with
``W, H >= 0`` by minimizing

.. math::

    \frac{1}{2}\|S - WH\|_F^2 + \lambda_1 (\|W\|_1 + \|H\|_1)
    + \frac{\lambda_F}{2} (\|W\|_F^2 + \|H\|_F^2)

where the L1 norms are entrywise. ``H`` holds component spectra and the
columns of ``W`` the per-pixel coefficients, which can be rendered as
images and averaged over depth.

"""
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from astropy.table import Table
from scipy import ndimage

from oadenoise import const
from oadenoise.core import ImageGrid, MultispectralStack, seeded_rng
from oadenoise.exceptions import (ConfigError, NumericalError,
                                  OptoacousticWarning, ShapeMismatchError)

__all__ = ['SpectraMatrix', 'NmfConfig', 'NmfResult', 'assemble_spectra',
           'nmf_objective', 'nmf_factorize', 'depth_profiles',
           'pearson', 'match_components', 'select_components']

log = logging.getLogger(__name__)


class SpectraMatrix:
    """Nonnegative spectra of all pixels of one or more scans.

    Attributes
    ----------
    values : ndarray
        ``(n_rows, n_wavelengths)`` matrix.

    pixel_index : ndarray
        ``(n_rows, 3)`` integer array of ``(scan, row, column)``.

    image_shape : tuple of int
        ``(n_y, n_x)`` of every image.

    extent_m : float
        Image extent, used for pixel depths.

    wavelengths : ndarray
        Wavelength of every column in nm.

    n_clamped : int
        Negative values set to zero during assembly.

    """

    def __init__(self, values, pixel_index, image_shape, extent_m,
                 wavelengths, n_clamped=0):
        self.values = values
        self.pixel_index = pixel_index
        self.image_shape = tuple(image_shape)
        self.extent_m = float(extent_m)
        self.wavelengths = np.asarray(wavelengths, dtype=float)
        self.n_clamped = int(n_clamped)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_scans(self):
        return int(self.pixel_index[:, 0].max()) + 1

    def pixel_depths_m(self):
        """Distance of every row's pixel from the transducer-side edge."""
        pixel_size = self.extent_m / self.image_shape[1]
        return self.pixel_index[:, 1] * pixel_size

    def scatter(self, column, scan=0):
        """Render one value per row back onto the image grid of ``scan``."""
        column = np.asarray(column)
        if column.shape != (self.values.shape[0],):
            raise ShapeMismatchError(f'Expected {self.values.shape[0]} '
                                     f'values, got {column.shape}')
        image = np.zeros(self.image_shape)
        rows = self.pixel_index[:, 0] == scan
        image[self.pixel_index[rows, 1], self.pixel_index[rows, 2]] = \
            column[rows]
        return ImageGrid(image, self.extent_m)


def assemble_spectra(stacks):
    """Stack per-pixel spectra of reconstructed images into a matrix.

    Parameters
    ----------
    stacks : `~oadenoise.core.MultispectralStack` or list of them
        Stacks of `~oadenoise.core.ImageGrid` with identical shapes and
        wavelengths. Rows are ordered scan by scan, then row-major.

    Returns
    -------
    spectra : `SpectraMatrix`
        Negative values are clamped to zero and counted; a warning is
        issued if any were found.

    Raises
    ------
    ShapeMismatchError
        Stacks disagree in shape or wavelengths.

    """
    if isinstance(stacks, MultispectralStack):
        stacks = [stacks]
    if not stacks:
        raise ValueError('No stacks to assemble')
    first = stacks[0]
    if not isinstance(first.items[0], ImageGrid):
        raise TypeError('Spectra are assembled from ImageGrid stacks')
    blocks, index = [], []
    for scan, stack in enumerate(stacks):
        if stack.shape != first.shape:
            raise ShapeMismatchError(f'Stack {scan} has shape {stack.shape}, '
                                     f'expected {first.shape}')
        if not np.array_equal(stack.wavelengths, first.wavelengths):
            raise ShapeMismatchError(f'Stack {scan} wavelengths differ')
        cube = np.stack([img.pixels for img in stack.items], axis=-1)
        blocks.append(cube.reshape(-1, len(stack)).astype(np.float64))
        rr, cc = np.indices(first.shape)
        index.append(np.stack([np.full(rr.size, scan), rr.ravel(),
                               cc.ravel()], axis=-1))
    values = np.concatenate(blocks)
    negative = values < 0
    n_clamped = int(negative.sum())
    if n_clamped:
        values[negative] = 0
        warnings.warn(f'Clamped {n_clamped} negative spectral values to zero',
                      OptoacousticWarning)
    return SpectraMatrix(values, np.concatenate(index), first.shape,
                         first.items[0].extent_m, first.wavelengths,
                         n_clamped)


class NmfConfig:
    """Factorization settings.

    Parameters
    ----------
    k : int
        Number of components.

    lambda_l1, lambda_fro : float
        Entrywise L1 and squared Frobenius weights.

    max_iters : int
        Alternating passes per restart.

    rel_tol : float
        Relative objective change that ends a restart.

    seed : int
        Initialization seed.

    n_restarts : int
        Random initializations; the lowest final objective wins.

    eps : float
        Guard added to update denominators.

    Raises
    ------
    ConfigError
        Invalid settings.

    """

    def __init__(self, k=const.nmf_components, lambda_l1=const.nmf_lambda,
                 lambda_fro=const.nmf_lambda, max_iters=500, rel_tol=1e-6,
                 seed=0, n_restarts=5, eps=1e-12):
        self.k = int(k)
        self.lambda_l1 = float(lambda_l1)
        self.lambda_fro = float(lambda_fro)
        self.max_iters = int(max_iters)
        self.rel_tol = float(rel_tol)
        self.seed = int(seed)
        self.n_restarts = int(n_restarts)
        self.eps = float(eps)
        self.validate()

    def validate(self):
        err_msgs = []
        if self.k < 1:
            err_msgs.append(f'k must be >= 1, got {self.k}')
        if self.lambda_l1 < 0 or self.lambda_fro < 0:
            err_msgs.append('regularization weights must be >= 0')
        if self.max_iters < 1:
            err_msgs.append('max_iters must be >= 1')
        if self.n_restarts < 1:
            err_msgs.append('n_restarts must be >= 1')
        if not self.rel_tol > 0 or not self.eps > 0:
            err_msgs.append('rel_tol and eps must be positive')
        if err_msgs:
            raise ConfigError(f'Validation failed:{os.linesep}'
                              f'{os.linesep.join(err_msgs)}')
        return True


class NmfResult:
    """Best factorization over all restarts.

    Attributes
    ----------
    W : ndarray
        Coefficients, ``(n_rows, k)``.

    H : ndarray
        Component spectra, ``(k, n_wavelengths)``.

    trace : list of float
        Objective after every pass of the winning restart.

    relative_error : float
        ``||S - WH||_F^2 / ||S||_F^2``.

    restart : int
        Index of the winning restart.

    """

    def __init__(self, W, H, trace, relative_error, restart):
        self.W = W
        self.H = H
        self.trace = trace
        self.relative_error = relative_error
        self.restart = restart

    @property
    def objective(self):
        return self.trace[-1]


def _values(S):
    return S.values if isinstance(S, SpectraMatrix) else np.asarray(S, float)


def nmf_objective(S, W, H, cfg):
    """Regularized factorization objective.

    Raises
    ------
    ValueError
        ``W`` or ``H`` has negative entries.

    ShapeMismatchError
        Inconsistent shapes.

    """
    S = _values(S)
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    if W.shape[0] != S.shape[0] or H.shape[1] != S.shape[1] or \
            W.shape[1] != H.shape[0]:
        raise ShapeMismatchError(f'Cannot factor {S.shape} as '
                                 f'{W.shape} x {H.shape}')
    if np.any(W < 0) or np.any(H < 0):
        raise ValueError('W and H must be nonnegative')
    return _objective(S, W, H, cfg.lambda_l1, cfg.lambda_fro)


def _objective(S, W, H, lam1, lam_f):
    return float(0.5 * np.sum((S - W @ H)**2) +
                 lam1 * (W.sum() + H.sum()) +
                 0.5 * lam_f * (np.sum(W**2) + np.sum(H**2)))


def _relative_error(S, W, H):
    total = np.sum(S**2)
    residual = np.sum((S - W @ H)**2)
    if total == 0:
        return 0.0 if residual == 0 else np.inf
    return float(residual / total)


def _factorize_once(S, cfg, restart):
    rng = seeded_rng(cfg.seed, f'nmf/restart-{restart}')
    n, m = S.shape
    W = np.abs(rng.standard_normal((n, cfg.k)))
    H = np.abs(rng.standard_normal((cfg.k, m)))
    target = S.mean()
    current = (W @ H).mean()
    if target > 0 and current > 0:
        c = np.sqrt(target / current)
        W *= c
        H *= c
    lam1, lam_f, eps = cfg.lambda_l1, cfg.lambda_fro, cfg.eps
    trace = [_objective(S, W, H, lam1, lam_f)]
    for it in range(cfg.max_iters):
        H *= (W.T @ S) / (W.T @ W @ H + lam1 + lam_f * H + eps)
        W *= (S @ H.T) / (W @ (H @ H.T) + lam1 + lam_f * W + eps)
        obj = _objective(S, W, H, lam1, lam_f)
        if not np.isfinite(obj):
            raise NumericalError(f'Non-finite NMF objective in restart '
                                 f'{restart}, pass {it + 1}', trace)
        prev = trace[-1]
        if obj > prev + 1e-10 * max(1.0, abs(prev)):
            warnings.warn(f'NMF objective increased from {prev!r} to {obj!r} '
                          f'in restart {restart}, pass {it + 1}',
                          OptoacousticWarning)
        trace.append(obj)
        if abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-300):
            break
    log.debug('NMF restart %d: %d passes, objective %.8g', restart,
              len(trace) - 1, trace[-1])
    return W, H, trace


def nmf_factorize(S, cfg, n_jobs=1):
    """Regularized multiplicative-update factorization.

    Each pass updates

    ``H <- H * (W^T S) / (W^T W H + lambda_1 + lambda_F H + eps)`` and
    ``W <- W * (S H^T) / (W H H^T + lambda_1 + lambda_F W + eps)``.

    Initial factors are ``|N(0, 1)|`` scaled so that ``mean(WH)`` equals
    ``mean(S)``, drawn from the stream ``nmf/restart-<r>``.

    Parameters
    ----------
    S : `SpectraMatrix` or ndarray
        Nonnegative data.

    cfg : `NmfConfig`
        Settings.

    n_jobs : int
        Restarts run concurrently on this many threads; the result does not
        depend on it.

    Returns
    -------
    result : `NmfResult`

    Raises
    ------
    ValueError
        ``S`` has negative entries.

    NumericalError
        The objective became non-finite.

    """
    S = _values(S)
    if np.any(S < 0):
        raise ValueError('Spectra must be nonnegative')
    restarts = range(cfg.n_restarts)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            runs = list(pool.map(lambda r: _factorize_once(S, cfg, r),
                                 restarts))
    else:
        runs = [_factorize_once(S, cfg, r) for r in restarts]
    best = int(np.argmin([trace[-1] for _, _, trace in runs]))
    W, H, trace = runs[best]
    result = NmfResult(W, H, trace, _relative_error(S, W, H), best)
    log.info('NMF k=%d: best restart %d, relative error %.4g', cfg.k, best,
             result.relative_error)
    return result


def depth_profiles(result, selected_components, pixel_depth_m, bin_m=None,
                   smooth_halfwidth_m=None, max_depth_m=None):
    """Depth-resolved relative contributions of selected components.

    Pixels are assigned to the nearest depth level ``0, bin_m, ...,
    max_depth_m``. Per level the mean coefficient of each selected
    component is divided by the sum over the selection, and the result is
    smoothed with a moving average of ``+-smooth_halfwidth_m``. Levels
    without pixels (or with zero total) stay undefined (NaN) and are
    skipped by the moving average.

    Parameters
    ----------
    result : `NmfResult`
        Factorization.

    selected_components : sequence of int
        Component indices; nonempty.

    pixel_depth_m : ndarray
        Depth of every row of ``result.W``.

    bin_m, smooth_halfwidth_m, max_depth_m : float
        Level spacing, smoothing half-width and deepest level.

    Returns
    -------
    profiles : `~astropy.table.Table`
        Column ``depth_m`` plus ``component_<i>`` per selected component.

    """
    bin_m = const.depth_step.to_value('m') if bin_m is None else bin_m
    if smooth_halfwidth_m is None:
        smooth_halfwidth_m = const.depth_smooth_halfwidth.to_value('m')
    if max_depth_m is None:
        max_depth_m = const.depth_max.to_value('m')
    selected = [int(c) for c in selected_components]
    if not selected:
        raise ValueError('At least one component must be selected')
    depth = np.asarray(pixel_depth_m, dtype=float)
    if depth.shape != (result.W.shape[0],):
        raise ShapeMismatchError(f'Depth map has {depth.shape}, expected '
                                 f'({result.W.shape[0]},)')

    n_levels = int(round(max_depth_m / bin_m)) + 1
    level = np.round(depth / bin_m).astype(np.int64)
    keep = (level >= 0) & (level < n_levels)
    counts = np.bincount(level[keep], minlength=n_levels).astype(float)
    means = np.full((len(selected), n_levels), np.nan)
    occupied = counts > 0
    for i, c in enumerate(selected):
        sums = np.bincount(level[keep], weights=result.W[keep, c],
                           minlength=n_levels)
        means[i, occupied] = sums[occupied] / counts[occupied]
    total = means.sum(axis=0)
    defined = occupied & (total > 0)
    rel = np.full_like(means, np.nan)
    rel[:, defined] = means[:, defined] / total[defined]

    halfwidth = int(round(smooth_halfwidth_m / bin_m))
    kernel = np.ones(2 * halfwidth + 1)
    finite = np.isfinite(rel[0]).astype(float)
    n_window = ndimage.convolve1d(finite, kernel, mode='constant')
    smoothed = np.full_like(rel, np.nan)
    for i in range(len(selected)):
        window_sum = ndimage.convolve1d(np.nan_to_num(rel[i]), kernel,
                                        mode='constant')
        smoothed[i, defined] = window_sum[defined] / n_window[defined]

    table = Table()
    table['depth_m'] = np.arange(n_levels) * bin_m
    for i, c in enumerate(selected):
        table[f'component_{c}'] = smoothed[i]
    return table


def pearson(a, b):
    """Pearson correlation; NaN if either input is constant."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0:
        return np.nan
    return float(np.sum(a * b) / denom)


def match_components(H, references):
    """Correlate component spectra with reference spectra.

    Parameters
    ----------
    H : ndarray
        ``(k, n_wavelengths)`` component spectra.

    references : dict
        Name to reference spectrum sampled at the same wavelengths.

    Returns
    -------
    matches : `~astropy.table.Table`
        One row per component with the correlation against every reference
        and the best-matching name. Descriptive only.

    """
    names = list(references)
    table = Table()
    table['component'] = np.arange(H.shape[0])
    scores = np.array([[pearson(h, references[name]) for name in names]
                       for h in H])
    for j, name in enumerate(names):
        table[f'r_{name}'] = scores[:, j]
    best = []
    for row in scores:
        valid = np.isfinite(row)
        best.append(names[int(np.argmax(np.where(valid, row, -np.inf)))]
                    if valid.any() else '')
    table['best_match'] = best
    return table


def select_components(matches, names):
    """Component with the highest correlation for each reference name.

    Returns
    -------
    selected : list of int
        Unique component indices in the order of ``names``.

    """
    selected = []
    for name in names:
        scores = np.asarray(matches[f'r_{name}'], dtype=float)
        if not np.isfinite(scores).any():
            continue
        order = np.argsort(-np.where(np.isfinite(scores), scores, -np.inf),
                           kind='stable')
        for c in order:
            if int(c) not in selected:
                selected.append(int(c))
                break
    return selected
