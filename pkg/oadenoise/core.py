# -*- coding: utf-8 -*-
"""Shared domain types and deterministic random streams.

This module contains the containers every other module passes around:
`~oadenoise.core.Sinogram` (time-resolved pressure per transducer),
`~oadenoise.core.ImageGrid` (initial pressure or reconstructed image),
`~oadenoise.core.MultispectralStack` (one of the above per wavelength) and
`~oadenoise.core.ArrayGeometry` (the transducer arc).

Examples
--------

Describe the handheld scanner:

>>> from astropy import units as u
>>> from oadenoise.core import ArrayGeometry
>>> geom = ArrayGeometry(n_transducers=256, radius=6 * u.cm,
...                      coverage=145 * u.deg, sample_rate=40 * u.MHz)
>>> print(f'{geom.radius_m:.3f} m')
0.060 m
>>> geom.positions().shape
(256, 2)

Streams are reproducible per seed and label:

>>> from oadenoise.core import seeded_rng
>>> a = seeded_rng(42, 'thermal').standard_normal(3)
>>> b = seeded_rng(42, 'thermal').standard_normal(3)
>>> bool((a == b).all())
True

"""
import hashlib
import os

import numpy as np
from astropy import units as u

from oadenoise import const
from oadenoise.exceptions import NonFiniteDataError, ShapeMismatchError

__all__ = ['Sinogram', 'ImageGrid', 'MultispectralStack', 'ArrayGeometry',
           'seeded_rng']


def _frozen(data):
    data = np.array(data, copy=True)
    if data.dtype.kind != 'f':
        data = data.astype(np.float64)
    data.flags.writeable = False
    return data


class Sinogram:
    """Time-resolved acoustic signals of one laser pulse.

    Samples are indexed ``[transducer, time]`` so that one transducer's time
    series is contiguous. The array is copied and made read-only.

    Parameters
    ----------
    data : array_like
        2D array of finite samples.

    sample_rate_hz : float
        Sampling frequency in Hz.

    wavelength_nm : float or `None`
        Excitation wavelength, if known.

    Raises
    ------
    ValueError
        Invalid dimensions or metadata.

    NonFiniteDataError
        Samples contain NaN or Inf.

    """

    def __init__(self, data, sample_rate_hz, wavelength_nm=None):
        data = _frozen(data)
        if data.ndim != 2:
            raise ValueError(f'Sinogram must be 2D, got shape {data.shape}')
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f'Sinogram must not be empty, got {data.shape}')
        if not np.all(np.isfinite(data)):
            raise NonFiniteDataError('Sinogram contains NaN or Inf samples')
        if not sample_rate_hz > 0:
            raise ValueError(
                f'sample_rate_hz must be positive, got {sample_rate_hz}')
        if wavelength_nm is not None:
            wavelength_nm = float(wavelength_nm)
            if not wavelength_nm > 0:
                raise ValueError(
                    f'wavelength_nm must be positive, got {wavelength_nm}')
        self._data = data
        self.sample_rate_hz = float(sample_rate_hz)
        self.wavelength_nm = wavelength_nm

    @property
    def data(self):
        """Read-only sample array."""
        return self._data

    @property
    def n_transducers(self):
        return self._data.shape[0]

    @property
    def n_samples(self):
        return self._data.shape[1]

    @property
    def shape(self):
        return self._data.shape

    def with_data(self, data):
        """New sinogram with the same metadata and different samples."""
        return Sinogram(data, self.sample_rate_hz, self.wavelength_nm)

    def check_same_shape(self, other, name='other'):
        """Raise `ShapeMismatchError` unless ``other`` has this shape."""
        if other.shape != self.shape:
            raise ShapeMismatchError(
                f'{name} has shape {other.shape}, expected {self.shape}')

    def __eq__(self, other):
        if not isinstance(other, Sinogram):
            return NotImplemented
        same_wl = (self.wavelength_nm == other.wavelength_nm)
        return (same_wl and self.sample_rate_hz == other.sample_rate_hz and
                self.shape == other.shape and
                np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self):
        return (f'<Sinogram {self.n_transducers}x{self.n_samples} '
                f'fs={self.sample_rate_hz:g} Hz '
                f'wavelength={self.wavelength_nm}>')


class ImageGrid:
    """Image on a square pixel lattice with a physical extent.

    Pixels are indexed ``[row, column]`` with row 0 at the top of the
    image, which is the side facing the transducer arc.

    Parameters
    ----------
    pixels : array_like
        2D array of finite values, shape ``(n_y, n_x)``.

    extent_m : float
        Physical side length covered by the ``n_x`` columns, in meters.

    """

    def __init__(self, pixels, extent_m):
        pixels = _frozen(pixels)
        if pixels.ndim != 2 or min(pixels.shape) < 1:
            raise ValueError(
                f'ImageGrid must be a non-empty 2D array, got {pixels.shape}')
        if not np.all(np.isfinite(pixels)):
            raise NonFiniteDataError('ImageGrid contains NaN or Inf pixels')
        if not extent_m > 0:
            raise ValueError(f'extent_m must be positive, got {extent_m}')
        self._pixels = pixels
        self.extent_m = float(extent_m)

    @classmethod
    def zeros(cls, n_x, n_y=None, extent_m=1.0):
        """Blank grid, mostly used as a shape descriptor."""
        n_y = n_x if n_y is None else n_y
        return cls(np.zeros((n_y, n_x)), extent_m)

    @property
    def pixels(self):
        """Read-only pixel array."""
        return self._pixels

    @property
    def n_x(self):
        return self._pixels.shape[1]

    @property
    def n_y(self):
        return self._pixels.shape[0]

    @property
    def shape(self):
        return self._pixels.shape

    @property
    def pixel_size_m(self):
        return self.extent_m / self.n_x

    def with_pixels(self, pixels):
        """New grid with the same extent and different pixels."""
        return ImageGrid(pixels, self.extent_m)

    def is_nonnegative(self):
        """`True` if the grid can represent an initial pressure."""
        return bool(np.all(self._pixels >= 0))

    def depths_m(self):
        """Distance of each row from the top row, in meters."""
        return np.arange(self.n_y) * self.pixel_size_m

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return (self.extent_m == other.extent_m and
                self.shape == other.shape and
                np.array_equal(self._pixels, other._pixels))

    __hash__ = None

    def __repr__(self):
        return f'<ImageGrid {self.n_y}x{self.n_x} extent={self.extent_m:g} m>'


class MultispectralStack:
    """Ordered wavelength series of sinograms or images.

    Parameters
    ----------
    entries : iterable of tuple
        ``(wavelength_nm, item)`` pairs with strictly increasing
        wavelengths. All items must be of one type and share one shape.

    """

    def __init__(self, entries):
        entries = [(float(wl), item) for wl, item in entries]
        if len(entries) == 0:
            raise ValueError('MultispectralStack needs at least one entry')
        err_msgs = []
        wls = np.array([wl for wl, _ in entries])
        if np.any(np.diff(wls) <= 0):
            err_msgs.append(f'wavelengths not strictly increasing: {wls}')
        kinds = {type(item) for _, item in entries}
        if len(kinds) != 1 or not kinds <= {Sinogram, ImageGrid}:
            err_msgs.append(f'entries must all be Sinogram or all ImageGrid, '
                            f'got {sorted(k.__name__ for k in kinds)}')
        shapes = {item.shape for _, item in entries}
        if len(shapes) != 1:
            err_msgs.append(f'entries have different shapes: {shapes}')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        self._entries = tuple(entries)

    @property
    def wavelengths(self):
        return np.array([wl for wl, _ in self._entries])

    @property
    def items(self):
        return [item for _, item in self._entries]

    @property
    def shape(self):
        return self._entries[0][1].shape

    def check_wavelengths(self, expected):
        """Raise `ValueError` unless the stack matches a configured grid."""
        expected = np.asarray(expected, dtype=float)
        if (expected.shape != self.wavelengths.shape or
                not np.allclose(expected, self.wavelengths)):
            raise ValueError(f'Stack wavelengths {self.wavelengths} do not '
                             f'match configured grid {expected}')

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, index):
        return self._entries[index]


class ArrayGeometry:
    """Transducers placed equidistantly on a circular arc.

    Physical parameters must be `~astropy.units.Quantity` so that a radius
    given in centimeters is never treated as meters. They are stored in SI
    units as plain floats (``radius_m`` etc.).

    The arc is centred on ``orientation``, measured counter-clockwise from
    the +x axis; the default of 90 degrees puts the array above the image,
    matching the handheld geometry where depth grows downward.

    Parameters
    ----------
    n_transducers : int
        Number of elements.

    radius, coverage, sample_rate : `~astropy.units.Quantity`
        Arc radius, angular coverage in (0, 360] deg, and sampling rate.

    speed_of_sound : `~astropy.units.Quantity`
        Homogeneous speed of sound.

    center : `~astropy.units.Quantity`
        2-element arc center.

    orientation : `~astropy.units.Quantity`
        Direction of the arc midpoint as seen from the center.

    Raises
    ------
    TypeError
        A physical parameter has no unit.

    ValueError
        A parameter is out of range.

    """
    required_quantities = ('radius', 'coverage', 'sample_rate',
                           'speed_of_sound', 'center', 'orientation')

    def __init__(self, n_transducers, radius, coverage, sample_rate,
                 speed_of_sound=const.speed_of_sound, center=[0, 0] * u.m,
                 orientation=90 * u.deg):
        values = dict(radius=radius, coverage=coverage,
                      sample_rate=sample_rate, speed_of_sound=speed_of_sound,
                      center=center, orientation=orientation)
        for key in self.required_quantities:
            if not isinstance(values[key], u.Quantity):
                raise TypeError(f'Special param {key} must be an astropy '
                                'Quantity')

        self.n_transducers = int(n_transducers)
        self.radius_m = float(radius.to_value(u.m))
        self.coverage_deg = float(coverage.to_value(u.deg))
        self.sample_rate_hz = float(sample_rate.to_value(u.Hz))
        self.speed_of_sound_m_s = float(speed_of_sound.to_value(u.m / u.s))
        self.center = tuple(float(v) for v in center.to_value(u.m))
        self.orientation_deg = float(orientation.to_value(u.deg))
        self.validate()

    @classmethod
    def msot(cls):
        """Full-scale handheld scanner."""
        return cls(const.msot_n_transducers, const.msot_radius,
                   const.msot_coverage, const.msot_sample_rate)

    @classmethod
    def desk(cls):
        """Desk-scale array used by the default pipeline profile."""
        return cls(64, const.desk_radius, const.msot_coverage,
                   const.msot_sample_rate)

    def validate(self):
        """Check parameter ranges.

        Returns
        -------
        status : bool
            `True` if validation passes.

        Raises
        ------
        ValueError
            Some parameters are out of range.

        """
        err_msgs = []
        if self.n_transducers < 1:
            err_msgs.append(f'n_transducers must be >= 1, '
                            f'got {self.n_transducers}')
        if not self.radius_m > 0:
            err_msgs.append(f'radius must be positive, got {self.radius_m} m')
        if not 0 < self.coverage_deg <= 360:
            err_msgs.append(f'coverage must be in (0, 360] deg, '
                            f'got {self.coverage_deg}')
        if not self.sample_rate_hz > 0:
            err_msgs.append('sample_rate must be positive')
        if not self.speed_of_sound_m_s > 0:
            err_msgs.append('speed_of_sound must be positive')
        if len(self.center) != 2:
            err_msgs.append(f'center must have 2 elements, got {self.center}')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True

    @property
    def meters_per_sample(self):
        """Acoustic path length covered by one sampling interval."""
        return self.speed_of_sound_m_s / self.sample_rate_hz

    def angles(self):
        """Angular position of every transducer in radians."""
        mid = np.deg2rad(self.orientation_deg)
        cov = np.deg2rad(self.coverage_deg)
        if self.coverage_deg == 360:
            return mid + np.linspace(0, cov, self.n_transducers,
                                     endpoint=False)
        if self.n_transducers == 1:
            return np.array([mid])
        return mid + np.linspace(-cov / 2, cov / 2, self.n_transducers)

    def positions(self):
        """Transducer coordinates in meters, shape ``(n_transducers, 2)``."""
        th = self.angles()
        return np.stack([self.center[0] + self.radius_m * np.cos(th),
                         self.center[1] + self.radius_m * np.sin(th)],
                        axis=-1)

    def to_dict(self):
        """Manifest-friendly mapping of field names to strings with units."""
        return {'n_transducers': str(self.n_transducers),
                'radius': f'{self.radius_m!r} m',
                'coverage': f'{self.coverage_deg!r} deg',
                'sample_rate': f'{self.sample_rate_hz!r} Hz',
                'speed_of_sound': f'{self.speed_of_sound_m_s!r} m / s',
                'center': f'{self.center[0]!r}, {self.center[1]!r}',
                'orientation': f'{self.orientation_deg!r} deg'}

    @classmethod
    def from_dict(cls, fields):
        """Inverse of :meth:`to_dict`."""
        center = [float(v) for v in fields.get('center', '0, 0').split(',')]
        return cls(int(fields['n_transducers']),
                   u.Quantity(fields['radius']),
                   u.Quantity(fields['coverage']),
                   u.Quantity(fields['sample_rate']),
                   u.Quantity(fields.get('speed_of_sound',
                                         str(const.speed_of_sound))),
                   center=center * u.m,
                   orientation=u.Quantity(fields.get('orientation',
                                                     '90 deg')))

    def fingerprint(self):
        """Short hash identifying the geometry in manifests."""
        text = ';'.join(f'{k}={v}' for k, v in sorted(self.to_dict().items()))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def __str__(self):
        return os.linesep.join(
            [self.__class__.__name__] +
            [f'{k} = {v}' for k, v in self.to_dict().items()])


def seeded_rng(seed, stream_label):
    """Independent deterministic random stream for a (seed, label) pair.

    The generator is NumPy's PCG64 seeded through a
    `~numpy.random.SeedSequence` whose entropy is ``[seed, key]``, where
    ``key`` is the little-endian integer of the 8-byte BLAKE2b digest of
    the UTF-8 label. Parallel workers derive child streams by extending the
    label, e.g. ``'train/noise/17'``.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed.

    stream_label : str
        Name of the stream.

    Returns
    -------
    rng : `numpy.random.Generator`

    Raises
    ------
    ValueError
        Seed out of the unsigned 64-bit range.

    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f'seed must be an unsigned 64-bit integer, '
                         f'got {seed}')
    digest = hashlib.blake2b(str(stream_label).encode('utf-8'),
                             digest_size=8).digest()
    key = int.from_bytes(digest, 'little')
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, key])))
