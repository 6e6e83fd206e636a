"""Test binary formats, previews and manifests."""
import numpy as np
import pytest
from astropy import units as u
from numpy.testing import assert_allclose, assert_array_equal

from oadenoise.core import (ArrayGeometry, ImageGrid, MultispectralStack,
                            Sinogram)
from oadenoise.exceptions import (BadMagicError, DataFormatError,
                                  NonFiniteDataError, TruncatedFileError)
from oadenoise.fileio import (read_image, read_manifest, read_pgm,
                              read_sinogram, read_stack, sha256_file,
                              write_image, write_manifest, write_pgm,
                              write_sinogram, write_stack)


@pytest.fixture
def sinogram():
    rng = np.random.default_rng(3)
    return Sinogram(rng.standard_normal((5, 7)).astype(np.float32), 4e7,
                    wavelength_nm=760)


def test_sinogram_file(tmp_path, sinogram):
    path = tmp_path / 'a.oasg'
    write_sinogram(sinogram, path)
    again = read_sinogram(path)
    assert again == sinogram
    assert path.stat().st_size == 4 + 2 + 4 + 4 + 8 + 4 + 5 * 7 * 4


def test_sinogram_unknown_wavelength(tmp_path):
    s = Sinogram(np.zeros((2, 2), dtype=np.float32), 4e7)
    write_sinogram(s, tmp_path / 'b.oasg')
    assert read_sinogram(tmp_path / 'b.oasg').wavelength_nm is None


@pytest.mark.parametrize('wavelength', [750.3, 700.0, 812.75, 1064.1])
def test_sinogram_wavelength_roundtrip(tmp_path, wavelength):
    s = Sinogram(np.ones((2, 3), dtype=np.float32), 4e7,
                 wavelength_nm=wavelength)
    write_sinogram(s, tmp_path / 'w.oasg')
    again = read_sinogram(tmp_path / 'w.oasg')
    assert again.wavelength_nm == wavelength
    assert again == s


def test_sinogram_is_rewritten_identically(tmp_path, sinogram):
    write_sinogram(sinogram, tmp_path / 'a.oasg')
    write_sinogram(read_sinogram(tmp_path / 'a.oasg'), tmp_path / 'b.oasg')
    assert sha256_file(tmp_path / 'a.oasg') == sha256_file(tmp_path / 'b.oasg')


def test_bad_magic(tmp_path, sinogram):
    path = tmp_path / 'a.oasg'
    write_sinogram(sinogram, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b'XXXX'
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_sinogram(path)
    with pytest.raises(BadMagicError):
        read_image(path)


def test_truncated(tmp_path, sinogram):
    path = tmp_path / 'a.oasg'
    write_sinogram(sinogram, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TruncatedFileError):
        read_sinogram(path)
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(TruncatedFileError):
        read_sinogram(path)


def test_nonfinite_payload(tmp_path, sinogram):
    path = tmp_path / 'a.oasg'
    write_sinogram(sinogram, path)
    blob = bytearray(path.read_bytes())
    blob[-4:] = np.array([np.nan], dtype='<f4').tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(NonFiniteDataError):
        read_sinogram(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(OSError, match='while reading sinogram'):
        read_sinogram(tmp_path / 'nope.oasg')


def test_image_file(tmp_path):
    img = ImageGrid(np.arange(12, dtype=np.float32).reshape(3, 4), 0.02)
    write_image(img, tmp_path / 'i.oaim')
    again = read_image(tmp_path / 'i.oaim')
    assert again == img
    assert again.shape == (3, 4)


def test_pgm_preview(tmp_path):
    pixels = np.array([[0., 1.], [2., 4.]])
    sidecar = write_pgm(pixels, tmp_path / 'p.pgm')
    levels = read_pgm(tmp_path / 'p.pgm')
    assert_array_equal(levels, [[0, 16384], [32768, 65535]])
    meta = read_manifest(sidecar)
    assert float(meta['min']) == 0 and float(meta['max']) == 4
    assert meta['transform'] == 'none'


def test_pgm_sqrt(tmp_path):
    sidecar = write_pgm(np.array([[-1., 0.], [1., 4.]]), tmp_path / 'p.pgm',
                        transform='sqrt')
    assert read_manifest(sidecar)['transform'] == 'sqrt'
    assert_array_equal(read_pgm(tmp_path / 'p.pgm'),
                       [[0, 0], [32768, 65535]])


def test_pgm_constant(tmp_path):
    write_pgm(np.full((2, 3), 7.0), tmp_path / 'c.pgm')
    assert_array_equal(read_pgm(tmp_path / 'c.pgm'), np.zeros((2, 3)))


def test_pgm_8bit_with_comment(tmp_path):
    path = tmp_path / 'e.pgm'
    path.write_bytes(b'P5\n# comment\n3 2\n255\n' + bytes(range(6)))
    assert_array_equal(read_pgm(path), [[0, 1, 2], [3, 4, 5]])


def test_pgm_errors(tmp_path):
    path = tmp_path / 'e.pgm'
    path.write_bytes(b'P2\n1 1\n255\n0')
    with pytest.raises(BadMagicError):
        read_pgm(path)
    path.write_bytes(b'P5\n3 2\n255\n' + bytes(3))
    with pytest.raises(TruncatedFileError):
        read_pgm(path)
    path.write_bytes(b'P5\n3 x\n255\n')
    with pytest.raises(DataFormatError, match='header token'):
        read_pgm(path)
    with pytest.raises(ValueError, match='display transform'):
        write_pgm(np.zeros((2, 2)), tmp_path / 'x.pgm', transform='log')


def test_manifest(tmp_path):
    path = tmp_path / 'manifest.txt'
    write_manifest(path, {'a': 1, 'b': 0.1, 'c': [1.5, 2.0], 'd': 'x y'})
    fields = read_manifest(path)
    assert fields == {'a': '1', 'b': '0.1', 'c': '1.5, 2.0', 'd': 'x y'}
    with pytest.raises(ValueError, match='Cannot store'):
        write_manifest(path, {'a=b': 1})
    path.write_text('no separator\n')
    with pytest.raises(DataFormatError, match='key = value'):
        read_manifest(path)


def test_stack(tmp_path):
    geom = ArrayGeometry(4, 4.8 * u.mm, 145 * u.deg, 40 * u.MHz)
    items = [(wl, Sinogram(np.full((4, 6), wl, dtype=np.float32), 4e7, wl))
             for wl in (700.0, 730.0)]
    write_stack(MultispectralStack(items), tmp_path / 'stack', geometry=geom,
                extra={'source': 'test'})
    stack, manifest = read_stack(tmp_path / 'stack')
    assert_allclose(stack.wavelengths, [700, 730])
    assert stack.items[1] == items[1][1]
    assert manifest['source'] == 'test'
    assert manifest['kind'] == 'sinogram'
    fields = {k.split('.', 1)[1]: v for k, v in manifest.items()
              if k.startswith('geometry.')}
    assert ArrayGeometry.from_dict(fields) == geom


def test_image_stack(tmp_path):
    items = [(wl, ImageGrid(np.ones((3, 3)) * i, 0.01))
             for i, wl in enumerate((700.0, 800.0))]
    write_stack(MultispectralStack(items), tmp_path / 'img')
    stack, manifest = read_stack(tmp_path / 'img')
    assert manifest['kind'] == 'image'
    assert stack.items[1] == items[1][1]
