# -*- coding: utf-8 -*-
r"""Acoustic forward model for a circular transducer arc.

The operator maps an initial pressure image ``p0`` to a sinogram. For every
transducer ``d`` and extended sample index ``t`` the circular mean

.. math::

    g[d, t] = \frac{1}{2\pi} \oint p_0(x_d + r_t u(\phi)) \, d\phi,
    \qquad r_t = c (t + t_\mathrm{offset}) / f_s

is evaluated with bilinear interpolation of ``p0`` on midpoint angle
samples, and the sinogram is the centered difference
``s[d, t] = (g[d, t + 1] - g[d, t - 1]) / 2``. Only the part of each circle
that can intersect the image is sampled. The whole map is assembled once
into a sparse matrix, so the adjoint is its exact transpose.

Examples
--------

>>> import numpy as np
>>> from astropy import units as u
>>> from oadenoise.core import ArrayGeometry
>>> from oadenoise.forward import ForwardOperator
>>> geom = ArrayGeometry(8, 4.8 * u.mm, 145 * u.deg, 40 * u.MHz)
>>> op = ForwardOperator(geom, n_samples=256, grid_shape=(16, 16),
...                      extent_m=4.8e-3)
>>> op.matrix.shape
(2048, 256)
>>> op.forward_array(np.zeros((16, 16))).shape
(8, 256)

"""
import hashlib
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import LinearOperator

from oadenoise.core import ImageGrid, Sinogram, seeded_rng
from oadenoise.exceptions import (DataFormatError, OptoacousticWarning,
                                  ShapeMismatchError)
from oadenoise.fileio import read_pgm

__all__ = ['MatrixOperator', 'ForwardOperator', 'apply_forward',
           'apply_adjoint', 'SimulatedCorpus', 'simulate_corpus',
           'prepare_feature_image']

DENSE_LIMIT = 32 * 32

log = logging.getLogger(__name__)


class MatrixOperator:
    """Linear map between images and sinograms given by an explicit matrix.

    This is also the test hook for solvers: ``MatrixOperator.identity``
    turns reconstruction into a pixelwise problem.

    Parameters
    ----------
    matrix : array_like or sparse matrix
        Shape ``(n_transducers * n_samples, n_y * n_x)``; rows are
        transducer-major.

    image_shape : tuple of int
        ``(n_y, n_x)``.

    sinogram_shape : tuple of int
        ``(n_transducers, n_samples)``.

    sample_rate_hz : float
        Sampling rate attached to produced sinograms.

    extent_m : float
        Image extent attached to produced images.

    """

    def __init__(self, matrix, image_shape, sinogram_shape,
                 sample_rate_hz=1.0, extent_m=1.0):
        self.image_shape = tuple(int(v) for v in image_shape)
        self.sinogram_shape = tuple(int(v) for v in sinogram_shape)
        expected = (int(np.prod(self.sinogram_shape)),
                    int(np.prod(self.image_shape)))
        if sparse.issparse(matrix):
            matrix = sparse.csr_matrix(matrix, dtype=np.float64)
        else:
            matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != expected:
            raise ShapeMismatchError(f'Matrix has shape {matrix.shape}, '
                                     f'expected {expected}')
        self.matrix = matrix
        self.sample_rate_hz = float(sample_rate_hz)
        self.extent_m = float(extent_m)

    @classmethod
    def identity(cls, shape, sample_rate_hz=1.0, extent_m=1.0):
        """Operator whose sinogram equals the image."""
        n = int(np.prod(shape))
        return cls(sparse.identity(n, format='csr'), shape, shape,
                   sample_rate_hz, extent_m)

    def _check(self, array, shape, name):
        if array.shape != shape:
            raise ShapeMismatchError(f'{name} has shape {array.shape}, '
                                     f'operator expects {shape}')

    def forward_array(self, p0):
        """Apply the operator to a plain ``(n_y, n_x)`` array."""
        p0 = np.asarray(p0, dtype=np.float64)
        self._check(p0, self.image_shape, 'image')
        return (self.matrix @ p0.ravel()).reshape(self.sinogram_shape)

    def adjoint_array(self, s):
        """Apply the transpose to a plain ``(n_d, n_t)`` array."""
        s = np.asarray(s, dtype=np.float64)
        self._check(s, self.sinogram_shape, 'sinogram')
        return (self.matrix.T @ s.ravel()).reshape(self.image_shape)

    def apply_forward(self, p0):
        """Map an `~oadenoise.core.ImageGrid` to a sinogram."""
        return Sinogram(self.forward_array(p0.pixels), self.sample_rate_hz)

    def apply_adjoint(self, s):
        """Map a `~oadenoise.core.Sinogram` to an image."""
        return ImageGrid(self.adjoint_array(s.data), self.extent_m)

    def as_linear_operator(self):
        """`~scipy.sparse.linalg.LinearOperator` on flattened vectors."""
        return LinearOperator(self.matrix.shape,
                              matvec=lambda v: self.matrix @ v,
                              rmatvec=lambda v: self.matrix.T @ v,
                              dtype=np.float64)

    def to_dense(self):
        """Materialize the matrix; only allowed for small grids."""
        if np.prod(self.image_shape) > DENSE_LIMIT:
            raise ValueError(f'Dense materialization is limited to grids of '
                             f'at most {DENSE_LIMIT} pixels, '
                             f'got {self.image_shape}')
        if sparse.issparse(self.matrix):
            return self.matrix.toarray()
        return np.array(self.matrix)

    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(repr((self.image_shape, self.sinogram_shape)).encode())
        if sparse.issparse(self.matrix):
            for part in (self.matrix.data, self.matrix.indices,
                         self.matrix.indptr):
                digest.update(np.ascontiguousarray(part).tobytes())
        else:
            digest.update(np.ascontiguousarray(self.matrix).tobytes())
        return digest.hexdigest()[:16]


class ForwardOperator(MatrixOperator):
    """Interpolated circular-mean model of an ideal point-detector arc.

    The image is centred on the world origin with row 0 at the top
    (largest ``y``); pixel ``(i, j)`` sits at
    ``x = (j - (n_x - 1) / 2) h``, ``y = ((n_y - 1) / 2 - i) h`` with
    ``h = extent_m / n_x``. Pixels outside the grid count as zero.

    Parameters
    ----------
    geometry : `~oadenoise.core.ArrayGeometry`
        Transducer arc, sampling rate and speed of sound.

    n_samples : int
        Recorded samples per transducer.

    grid_shape : tuple of int
        ``(n_y, n_x)`` of the image.

    extent_m : float
        Side length covered by the ``n_x`` columns.

    t_offset_samples : int
        Index of the first recorded sample relative to the laser pulse.

    oversampling : float
        Angle samples per pixel width along each arc.

    n_jobs : int or `None`
        Threads used to assemble per-transducer blocks. The result does not
        depend on this value.

    """

    def __init__(self, geometry, n_samples, grid_shape, extent_m,
                 t_offset_samples=0, oversampling=2.0, n_jobs=1):
        n_y, n_x = (int(v) for v in grid_shape)
        err_msgs = []
        if n_samples < 1:
            err_msgs.append(f'n_samples must be >= 1, got {n_samples}')
        if n_x < 1 or n_y < 1:
            err_msgs.append(f'grid_shape must be positive, got {grid_shape}')
        if not extent_m > 0:
            err_msgs.append(f'extent_m must be positive, got {extent_m}')
        if not oversampling > 0:
            err_msgs.append(f'oversampling must be positive, '
                            f'got {oversampling}')
        if int(t_offset_samples) != t_offset_samples:
            err_msgs.append('t_offset_samples must be an integer')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')

        self.geometry = geometry
        self.n_samples = int(n_samples)
        self.t_offset_samples = int(t_offset_samples)
        self.oversampling = float(oversampling)
        self.pixel_size_m = float(extent_m) / n_x
        self._n_x = n_x
        self._n_y = n_y
        matrix = self._assemble(n_jobs)
        super().__init__(matrix, (n_y, n_x),
                         (geometry.n_transducers, self.n_samples),
                         geometry.sample_rate_hz, extent_m)

    @property
    def grid(self):
        """Descriptor of the image grid (all zeros)."""
        return ImageGrid(np.zeros(self.image_shape), self.extent_m)

    def grid_coordinates(self):
        """Pixel center coordinates ``(x, y)`` in meters."""
        h = self.pixel_size_m
        x = (np.arange(self._n_x) - (self._n_x - 1) / 2) * h
        y = ((self._n_y - 1) / 2 - np.arange(self._n_y)) * h
        return np.meshgrid(x, y)

    def _assemble(self, n_jobs):
        positions = self.geometry.positions()
        n_t = self.n_samples
        # centered difference over the extended index -1 .. n_t
        diff = sparse.diags([np.full(n_t, -0.5), np.full(n_t, 0.5)], [0, 2],
                            shape=(n_t, n_t + 2), format='csr')
        if n_jobs is None or n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                blocks = list(pool.map(self._circular_means, positions))
        else:
            blocks = [self._circular_means(pos) for pos in positions]
        matrix = sparse.vstack([diff @ block for block in blocks],
                               format='csr')
        log.debug('Assembled forward matrix %s with %d non-zeros',
                  matrix.shape, matrix.nnz)
        return matrix

    def _circular_means(self, pos):
        """Sparse ``(n_samples + 2, n_pix)`` circular-mean block."""
        h = self.pixel_size_m
        n_x, n_y = self._n_x, self._n_y
        ext = np.arange(-1, self.n_samples + 1) + self.t_offset_samples
        radius = ext * self.geometry.meters_per_sample
        grid_radius = 0.5 * h * np.hypot(n_x, n_y) + h
        dist = float(np.hypot(pos[0], pos[1]))

        if dist == 0:
            half_width = np.full(radius.shape, np.pi)
            valid = (radius > 0) & (radius <= grid_radius)
            beta = 0.0
        else:
            beta = float(np.arctan2(-pos[1], -pos[0]))
            pos_r = np.where(radius > 0, radius, 1.0)
            cos_lim = ((dist**2 + pos_r**2 - grid_radius**2) /
                       (2 * dist * pos_r))
            valid = (radius > 0) & (cos_lim <= 1)
            half_width = np.where(cos_lim <= -1, np.pi,
                                  np.arccos(np.clip(cos_lim, -1, 1)))

        rows = np.nonzero(valid)[0]
        counts = np.maximum(
            1, np.ceil(2 * half_width[rows] * radius[rows] * self.oversampling
                       / h)).astype(np.int64)
        t_idx = np.repeat(rows, counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        k = np.arange(t_idx.size) - starts
        dphi = np.repeat(2 * half_width[rows] / counts, counts)
        phi = beta - half_width[t_idx] + (k + 0.5) * dphi
        x = pos[0] + radius[t_idx] * np.cos(phi)
        y = pos[1] + radius[t_idx] * np.sin(phi)
        weight = dphi / (2 * np.pi)

        # zero radius: the circular mean is the point value
        at_zero = np.nonzero(radius == 0)[0]
        if at_zero.size:
            t_idx = np.concatenate([t_idx, at_zero])
            x = np.concatenate([x, np.full(at_zero.size, pos[0])])
            y = np.concatenate([y, np.full(at_zero.size, pos[1])])
            weight = np.concatenate([weight, np.ones(at_zero.size)])

        col = x / h + (n_x - 1) / 2
        row = (n_y - 1) / 2 - y / h
        j0 = np.floor(col).astype(np.int64)
        i0 = np.floor(row).astype(np.int64)
        fx = col - j0
        fy = row - i0
        entries_t, entries_pix, entries_w = [], [], []
        for di, dj, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                          (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ii = i0 + di
            jj = j0 + dj
            inside = (ii >= 0) & (ii < n_y) & (jj >= 0) & (jj < n_x)
            entries_t.append(t_idx[inside])
            entries_pix.append(ii[inside] * n_x + jj[inside])
            entries_w.append((weight * w)[inside])
        block = sparse.coo_matrix(
            (np.concatenate(entries_w),
             (np.concatenate(entries_t), np.concatenate(entries_pix))),
            shape=(ext.size, n_x * n_y))
        return block.tocsr()

    def fingerprint(self):
        """Hash of everything the matrix is derived from."""
        text = (f'{self.geometry.fingerprint()};{self.image_shape};'
                f'{self.extent_m!r};{self.n_samples};'
                f'{self.t_offset_samples};{self.oversampling!r}')
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]

    def __str__(self):
        return os.linesep.join([
            self.__class__.__name__,
            f'geometry = {self.geometry.fingerprint()}',
            f'grid = {self.image_shape} over {self.extent_m:g} m',
            f'n_samples = {self.n_samples}',
            f't_offset_samples = {self.t_offset_samples}',
            f'nnz = {self.matrix.nnz}'])


def apply_forward(op, p0):
    """Sinogram of ``p0``; see :meth:`MatrixOperator.apply_forward`."""
    return op.apply_forward(p0)


def apply_adjoint(op, s):
    """Transpose applied to ``s``; see :meth:`MatrixOperator.apply_adjoint`."""
    return op.apply_adjoint(s)


class SimulatedCorpus:
    """Noise-free sinograms simulated from feature images.

    Attributes
    ----------
    sinograms : list of `~oadenoise.core.Sinogram`

    sources : list of str
        Source of each sinogram, in the same (shuffled) order.

    skipped : list of tuple
        ``(source, reason)`` for every input that could not be decoded.

    """

    def __init__(self, sinograms, sources, skipped):
        self.sinograms = sinograms
        self.sources = sources
        self.skipped = skipped

    def __len__(self):
        return len(self.sinograms)

    def __iter__(self):
        return iter(self.sinograms)

    def manifest(self, op):
        """Manifest fields describing the corpus provenance."""
        fields = {'count': len(self), 'operator': op.fingerprint(),
                  'grid': list(op.image_shape)}
        for i, source in enumerate(self.sources):
            fields[f'source.{i}'] = source
        for i, (source, reason) in enumerate(self.skipped):
            fields[f'skipped.{i}'] = f'{source}: {reason}'
        return fields


def prepare_feature_image(image, shape):
    """Resample a grayscale image to ``shape`` and rescale it to [0, 1].

    A constant image maps to all ones when positive and all zeros otherwise.

    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or not np.all(np.isfinite(image)):
        raise DataFormatError('Feature image must be a finite 2D array')
    if image.shape != tuple(shape):
        zoom = (shape[0] / image.shape[0], shape[1] / image.shape[1])
        image = ndimage.zoom(image, zoom, order=1, mode='nearest')
        pad = [(0, max(0, shape[0] - image.shape[0])),
               (0, max(0, shape[1] - image.shape[1]))]
        image = np.pad(image, pad, mode='edge')[:shape[0], :shape[1]]
    lo, hi = image.min(), image.max()
    if hi > lo:
        return (image - lo) / (hi - lo)
    return np.full(image.shape, 1.0 if hi > 0 else 0.0)


def simulate_corpus(images, op, seed, peak_amplitude=1.0, augment=True):
    """Simulate one noise-free sinogram per feature image.

    Parameters
    ----------
    images : iterable
        PGM file paths or 2D arrays used as initial pressure distributions.

    op : `ForwardOperator`
        Forward model; images are resampled to its grid.

    seed : int
        Controls only shuffling and augmentation (flips and quarter turns).

    peak_amplitude : float or `None`
        Every sinogram is scaled to this peak absolute value; `None` keeps
        the raw operator output.

    augment : bool
        Apply random flips and quarter turns.

    Returns
    -------
    corpus : `SimulatedCorpus`

    """
    images = list(images)
    order = seeded_rng(seed, 'simulate/shuffle').permutation(len(images))
    sinograms, sources, skipped = [], [], []
    square = op.image_shape[0] == op.image_shape[1]
    for idx in order:
        item = images[idx]
        is_path = isinstance(item, (str, os.PathLike))
        source = os.fspath(item) if is_path else f'array[{idx}]'
        try:
            raw = read_pgm(item) if is_path else item
            p0 = prepare_feature_image(raw, op.image_shape)
        except (DataFormatError, OSError) as exc:
            warnings.warn(f'Skipping undecodable image {source}: {exc}',
                          OptoacousticWarning)
            skipped.append((source, str(exc)))
            continue
        if augment:
            rng = seeded_rng(seed, f'simulate/augment/{idx}')
            if square:
                p0 = np.rot90(p0, k=int(rng.integers(4)))
            if rng.random() < 0.5:
                p0 = p0[:, ::-1]
        data = op.forward_array(p0)
        peak = np.abs(data).max()
        if peak_amplitude is not None and peak > 0:
            data = data * (peak_amplitude / peak)
        sinograms.append(Sinogram(data, op.sample_rate_hz))
        sources.append(source)
    log.info('Simulated %d sinograms, skipped %d images', len(sinograms),
             len(skipped))
    return SimulatedCorpus(sinograms, sources, skipped)
