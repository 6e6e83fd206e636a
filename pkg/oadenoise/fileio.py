# -*- coding: utf-8 -*-
"""Binary formats, previews and manifests.

All binary formats are little-endian with a 4-byte magic and a ``u16``
version:

* ``OASG`` sinograms: ``u32 n_transducers, u32 n_samples,
  f64 sample_rate_hz, f32 wavelength_nm`` (NaN if unknown), then the
  transducer-major ``f32`` samples.
  The wavelength is read back as the shortest decimal with the stored
  ``f32`` value, so wavelengths of up to 7 significant digits survive
  exactly.
* ``OAIM`` images: ``u32 n_x, u32 n_y, f64 extent_m``, then row-major
  ``f32`` pixels.

Previews are 16-bit binary PGM (P5) files with the min-max normalization
written to a ``.txt`` sidecar. Manifests are plain ``key = value`` text.

"""
import hashlib
import logging
import os
import struct

import numpy as np

from oadenoise.core import ImageGrid, MultispectralStack, Sinogram
from oadenoise.exceptions import (BadMagicError, DataFormatError,
                                  NonFiniteDataError, TruncatedFileError)

__all__ = ['SINOGRAM_MAGIC', 'IMAGE_MAGIC', 'FORMAT_VERSION',
           'write_sinogram', 'read_sinogram', 'write_image', 'read_image',
           'read_pgm', 'write_pgm', 'write_manifest', 'read_manifest',
           'write_stack', 'read_stack', 'sha256_file']

SINOGRAM_MAGIC = b'OASG'
IMAGE_MAGIC = b'OAIM'
FORMAT_VERSION = 1

_SINOGRAM_HEADER = struct.Struct('<4sHIIdf')
_IMAGE_HEADER = struct.Struct('<4sHIId')
_MANIFEST_NAME = 'manifest.txt'

log = logging.getLogger(__name__)


def _write_bytes(path, blob, what):
    try:
        with open(path, 'wb') as fout:
            fout.write(blob)
    except OSError as exc:
        raise OSError(exc.errno, f'{exc.strerror} while writing {what}',
                      os.fspath(path)) from exc


def _read_bytes(path, what):
    try:
        with open(path, 'rb') as fin:
            return fin.read()
    except OSError as exc:
        raise OSError(exc.errno, f'{exc.strerror} while reading {what}',
                      os.fspath(path)) from exc


def _check_header(blob, header, magic, path):
    if len(blob) < len(magic) or blob[:len(magic)] != magic:
        raise BadMagicError(f'{path}: expected magic {magic!r}, '
                            f'got {blob[:len(magic)]!r}')
    if len(blob) < header.size:
        raise TruncatedFileError(f'{path}: header needs {header.size} bytes, '
                                 f'file has {len(blob)}')
    fields = header.unpack_from(blob)
    if fields[1] != FORMAT_VERSION:
        raise DataFormatError(f'{path}: unsupported version {fields[1]}')
    return fields


def _payload(blob, offset, count, path):
    expected = offset + 4 * count
    if len(blob) != expected:
        raise TruncatedFileError(f'{path}: expected {expected} bytes, '
                                 f'got {len(blob)}')
    data = np.frombuffer(blob, dtype='<f4', count=count, offset=offset)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f'{path}: payload contains NaN or Inf')
    return data.astype(np.float32)


def _shortest_decimal(value):
    """Shortest decimal that rounds to the same ``f32`` as ``value``."""
    return float(np.format_float_positional(np.float32(value), unique=True,
                                            trim='-'))


def write_sinogram(s, path):
    """Write a sinogram in OASG format.

    Parameters
    ----------
    s : `~oadenoise.core.Sinogram`
        Sinogram to store. Samples are stored as ``f32``.

    path : str or path-like
        Output file.

    Raises
    ------
    OSError
        The file cannot be written; the message names the path.

    """
    wl = np.nan if s.wavelength_nm is None else s.wavelength_nm
    header = _SINOGRAM_HEADER.pack(SINOGRAM_MAGIC, FORMAT_VERSION,
                                   s.n_transducers, s.n_samples,
                                   s.sample_rate_hz, wl)
    payload = np.ascontiguousarray(s.data, dtype='<f4').tobytes()
    _write_bytes(path, header + payload, 'sinogram')


def read_sinogram(path):
    """Read an OASG file.

    Parameters
    ----------
    path : str or path-like
        Input file.

    Returns
    -------
    s : `~oadenoise.core.Sinogram`
        Sinogram with ``float32`` samples exactly as stored.

    Raises
    ------
    BadMagicError, TruncatedFileError, NonFiniteDataError
        The file does not conform to the format.

    """
    blob = _read_bytes(path, 'sinogram')
    _, _, n_d, n_t, fs, wl = _check_header(blob, _SINOGRAM_HEADER,
                                           SINOGRAM_MAGIC, path)
    data = _payload(blob, _SINOGRAM_HEADER.size, n_d * n_t, path)
    wl = None if np.isnan(wl) else _shortest_decimal(wl)
    return Sinogram(data.reshape(n_d, n_t), fs, wl)


def write_image(img, path):
    """Write an `~oadenoise.core.ImageGrid` in OAIM format."""
    header = _IMAGE_HEADER.pack(IMAGE_MAGIC, FORMAT_VERSION, img.n_x,
                                img.n_y, img.extent_m)
    payload = np.ascontiguousarray(img.pixels, dtype='<f4').tobytes()
    _write_bytes(path, header + payload, 'image')


def read_image(path):
    """Read an OAIM file into an `~oadenoise.core.ImageGrid`."""
    blob = _read_bytes(path, 'image')
    _, _, n_x, n_y, extent = _check_header(blob, _IMAGE_HEADER, IMAGE_MAGIC,
                                           path)
    data = _payload(blob, _IMAGE_HEADER.size, n_x * n_y, path)
    return ImageGrid(data.reshape(n_y, n_x), extent)


def _pgm_tokens(blob, count, path):
    """Parse ``count`` whitespace separated header tokens after ``P5``."""
    pos = 2
    tokens = []
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b'#':
            while pos < len(blob) and blob[pos:pos + 1] not in b'\r\n':
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError(f'{path}: truncated PGM header')
        try:
            tokens.append(int(blob[start:pos]))
        except ValueError:
            raise DataFormatError(f'{path}: bad PGM header token '
                                  f'{blob[start:pos]!r}') from None
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) PGM file.

    Parameters
    ----------
    path : str or path-like
        8-bit or 16-bit grayscale image.

    Returns
    -------
    pixels : ndarray
        ``float64`` array of raw gray levels, shape ``(height, width)``.

    Raises
    ------
    DataFormatError
        Not a decodable P5 file.

    """
    blob = _read_bytes(path, 'PGM image')
    if blob[:2] != b'P5':
        raise BadMagicError(f'{path}: not a binary PGM (P5) file')
    (width, height, maxval), offset = _pgm_tokens(blob, 3, path)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DataFormatError(f'{path}: invalid PGM header '
                              f'{width}x{height} maxval={maxval}')
    dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
    expected = offset + width * height * dtype.itemsize
    if len(blob) < expected:
        raise TruncatedFileError(f'{path}: expected {expected} bytes, '
                                 f'got {len(blob)}')
    pixels = np.frombuffer(blob, dtype=dtype, count=width * height,
                           offset=offset)
    return pixels.reshape(height, width).astype(np.float64)


def write_pgm(pixels, path, transform=None):
    """Write a 16-bit min-max normalized PGM preview.

    The normalization (and any display transform) is recorded in a sidecar
    ``<path>.txt`` so that gray levels can be mapped back to values.

    Parameters
    ----------
    pixels : array_like
        2D image.

    path : str or path-like
        Output file.

    transform : {`None`, 'sqrt'}
        Display transform applied before normalization. ``'sqrt'`` clips
        negative values to zero first.

    Returns
    -------
    sidecar : str
        Path of the normalization sidecar.

    """
    values = np.asarray(pixels, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f'PGM preview needs a 2D array, got {values.shape}')
    if transform == 'sqrt':
        values = np.sqrt(np.clip(values, 0, None))
    elif transform is not None:
        raise ValueError(f'Unknown display transform {transform!r}')
    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin
    if span > 0:
        levels = np.round((values - vmin) / span * 65535)
    else:
        levels = np.zeros_like(values)
    height, width = values.shape
    header = f'P5\n{width} {height}\n65535\n'.encode('ascii')
    _write_bytes(path, header + levels.astype('>u2').tobytes(), 'PGM preview')
    sidecar = os.fspath(path) + '.txt'
    write_manifest(sidecar, {'min': repr(vmin), 'max': repr(vmax),
                             'maxval': 65535,
                             'transform': transform or 'none'})
    return sidecar


def _format_value(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return ', '.join(_format_value(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_manifest(path, fields):
    """Write a ``key = value`` manifest in insertion order.

    Lists are comma separated; floats use their shortest round-trip form.

    """
    lines = []
    for key, value in fields.items():
        text = _format_value(value)
        if '\n' in text or '=' in str(key):
            raise ValueError(f'Cannot store {key!r} in a manifest')
        lines.append(f'{key} = {text}')
    blob = (os.linesep.join(lines) + os.linesep).encode('utf-8')
    _write_bytes(path, blob, 'manifest')


def read_manifest(path):
    """Read a ``key = value`` manifest into a dict of strings."""
    fields = {}
    text = _read_bytes(path, 'manifest').decode('utf-8')
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise DataFormatError(f'{path}:{lineno}: expected key = value')
        fields[key.strip()] = value.strip()
    return fields


def _entry_name(kind, wavelength):
    ext = 'oasg' if kind == 'sinogram' else 'oaim'
    return f'wl{wavelength:07.2f}.{ext}'


def write_stack(stack, directory, geometry=None, extra=None):
    """Store a multispectral stack as one file per wavelength plus manifest.

    Parameters
    ----------
    stack : `~oadenoise.core.MultispectralStack`
        Sinograms or images.

    directory : str or path-like
        Created if needed.

    geometry : `~oadenoise.core.ArrayGeometry` or `None`
        Recorded in the manifest when given.

    extra : dict or `None`
        Additional manifest fields.

    """
    os.makedirs(directory, exist_ok=True)
    kind = 'sinogram' if isinstance(stack.items[0], Sinogram) else 'image'
    names = []
    for wl, item in stack:
        name = _entry_name(kind, wl)
        target = os.path.join(directory, name)
        if kind == 'sinogram':
            write_sinogram(item, target)
        else:
            write_image(item, target)
        names.append(name)
    fields = {'kind': kind, 'count': len(stack),
              'wavelengths_nm': list(stack.wavelengths), 'files': names}
    if geometry is not None:
        fields.update({f'geometry.{k}': v
                       for k, v in geometry.to_dict().items()})
    if extra:
        fields.update(extra)
    write_manifest(os.path.join(directory, _MANIFEST_NAME), fields)
    log.debug('Wrote %d-entry %s stack to %s', len(stack), kind, directory)


def read_stack(directory):
    """Inverse of :func:`write_stack`.

    Returns
    -------
    stack : `~oadenoise.core.MultispectralStack`

    manifest : dict
        Raw manifest fields.

    """
    manifest = read_manifest(os.path.join(directory, _MANIFEST_NAME))
    wavelengths = [float(v) for v in manifest['wavelengths_nm'].split(',')]
    names = [v.strip() for v in manifest['files'].split(',')]
    if len(names) != len(wavelengths) or len(names) != int(manifest['count']):
        raise DataFormatError(f'{directory}: manifest count, files and '
                              'wavelengths disagree')
    reader = read_sinogram if manifest['kind'] == 'sinogram' else read_image
    entries = [(wl, reader(os.path.join(directory, name)))
               for wl, name in zip(wavelengths, names)]
    return MultispectralStack(entries), manifest


def sha256_file(path, blocksize=1 << 20):
    """Hex SHA-256 digest of a file."""
    digest = hashlib.sha256()
    with open(path, 'rb') as fin:
        for block in iter(lambda: fin.read(blocksize), b''):
            digest.update(block)
    return digest.hexdigest()
