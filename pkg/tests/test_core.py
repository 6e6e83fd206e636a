"""Test shared domain types."""
import numpy as np
import pytest
from astropy import units as u
from numpy.testing import assert_allclose, assert_array_equal

from oadenoise import const
from oadenoise.core import (ArrayGeometry, ImageGrid, MultispectralStack,
                            Sinogram, seeded_rng)
from oadenoise.exceptions import NonFiniteDataError, ShapeMismatchError


class TestSinogram:
    def test_copy_and_readonly(self):
        data = np.ones((4, 8))
        s = Sinogram(data, 4e7, wavelength_nm=800)
        data[0, 0] = 5
        assert s.data[0, 0] == 1
        assert s.shape == (4, 8)
        assert s.n_transducers == 4 and s.n_samples == 8
        with pytest.raises(ValueError):
            s.data[0, 0] = 2

    def test_integer_data_promoted(self):
        s = Sinogram(np.ones((2, 3), dtype=int), 4e7)
        assert s.data.dtype == np.float64

    def test_float32_kept(self):
        s = Sinogram(np.ones((2, 3), dtype=np.float32), 4e7)
        assert s.data.dtype == np.float32

    @pytest.mark.parametrize('value', [np.nan, np.inf])
    def test_nonfinite(self, value):
        data = np.zeros((2, 3))
        data[1, 1] = value
        with pytest.raises(NonFiniteDataError):
            Sinogram(data, 4e7)

    def test_invalid(self):
        with pytest.raises(ValueError, match='2D'):
            Sinogram(np.zeros(5), 4e7)
        with pytest.raises(ValueError, match='sample_rate_hz'):
            Sinogram(np.zeros((2, 2)), 0)
        with pytest.raises(ValueError, match='wavelength_nm'):
            Sinogram(np.zeros((2, 2)), 4e7, wavelength_nm=-1)

    def test_shape_check(self):
        a = Sinogram(np.zeros((2, 4)), 4e7)
        b = Sinogram(np.zeros((2, 5)), 4e7)
        with pytest.raises(ShapeMismatchError, match='expected'):
            a.check_same_shape(b)

    def test_with_data_and_eq(self):
        a = Sinogram(np.zeros((2, 4)), 4e7, 750)
        b = a.with_data(np.zeros((2, 4)))
        assert a == b
        assert b.wavelength_nm == 750
        assert a != a.with_data(np.ones((2, 4)))


class TestImageGrid:
    def test_basic(self):
        img = ImageGrid(np.ones((4, 8)), 0.01)
        assert img.n_x == 8 and img.n_y == 4
        assert_allclose(img.pixel_size_m, 0.01 / 8)
        assert_allclose(img.depths_m(), np.arange(4) * 0.01 / 8)
        assert img.is_nonnegative()
        assert not img.with_pixels(-np.ones((4, 8))).is_nonnegative()

    def test_zeros(self):
        img = ImageGrid.zeros(5, extent_m=2.0)
        assert img.shape == (5, 5)

    def test_invalid(self):
        with pytest.raises(ValueError, match='extent_m'):
            ImageGrid(np.ones((2, 2)), 0)
        with pytest.raises(NonFiniteDataError):
            ImageGrid(np.full((2, 2), np.nan), 1.0)


class TestMultispectralStack:
    def test_ordered(self):
        items = [Sinogram(np.full((2, 2), i), 4e7, wl)
                 for i, wl in enumerate((700, 730, 760))]
        stack = MultispectralStack(zip((700, 730, 760), items))
        assert len(stack) == 3
        assert_array_equal(stack.wavelengths, [700, 730, 760])
        assert stack.shape == (2, 2)
        assert stack[1][1] is items[1]
        stack.check_wavelengths([700, 730, 760])
        with pytest.raises(ValueError, match='configured grid'):
            stack.check_wavelengths([700, 730])

    def test_validation_collects_errors(self):
        entries = [(760, ImageGrid(np.ones((2, 2)), 1.0)),
                   (700, Sinogram(np.ones((2, 3)), 4e7))]
        with pytest.raises(ValueError, match='Validation failed') as exc:
            MultispectralStack(entries)
        msg = str(exc.value)
        assert 'strictly increasing' in msg
        assert 'all Sinogram or all ImageGrid' in msg
        assert 'different shapes' in msg

    def test_empty(self):
        with pytest.raises(ValueError):
            MultispectralStack([])


class TestArrayGeometry:
    def test_msot(self):
        geom = ArrayGeometry.msot()
        assert geom.n_transducers == 256
        assert_allclose(geom.radius_m, 0.06)
        assert_allclose(geom.sample_rate_hz, 4e7)
        pos = geom.positions()
        assert_allclose(np.hypot(pos[:, 0], pos[:, 1]), 0.06)
        # Arc is symmetric about the +y axis.
        assert_allclose(pos[:, 0], -pos[::-1, 0], atol=1e-15)
        span = np.rad2deg(geom.angles()[-1] - geom.angles()[0])
        assert_allclose(span, 145)

    def test_full_ring(self):
        geom = ArrayGeometry(8, 1 * u.cm, 360 * u.deg, 40 * u.MHz)
        th = geom.angles()
        assert_allclose(np.diff(th), np.pi / 4)

    def test_units_required(self):
        with pytest.raises(TypeError, match='radius'):
            ArrayGeometry(8, 0.06, 145 * u.deg, 40 * u.MHz)

    def test_unit_conversion(self):
        geom = ArrayGeometry(8, 6 * u.cm, 145 * u.deg, 40 * u.MHz,
                             speed_of_sound=1.5 * u.mm / u.us)
        assert_allclose(geom.radius_m, 0.06)
        assert_allclose(geom.speed_of_sound_m_s, 1500)
        assert_allclose(geom.meters_per_sample, 1500 / 4e7)

    def test_validate(self):
        with pytest.raises(ValueError, match='coverage') as exc:
            ArrayGeometry(0, 1 * u.cm, 400 * u.deg, 40 * u.MHz)
        assert 'n_transducers' in str(exc.value)

    def test_dict_roundtrip(self):
        geom = ArrayGeometry(16, 4.8 * u.mm, 145 * u.deg, 40 * u.MHz,
                             center=[1, 2] * u.mm, orientation=45 * u.deg)
        again = ArrayGeometry.from_dict(geom.to_dict())
        assert again == geom
        assert again.fingerprint() == geom.fingerprint()
        assert ArrayGeometry.desk().fingerprint() != geom.fingerprint()
        assert 'radius' in str(geom)

    def test_desk(self):
        geom = ArrayGeometry.desk()
        assert geom.n_transducers == 64
        assert_allclose(geom.radius_m, const.desk_radius.to_value(u.m))


class TestSeededRng:
    def test_reproducible(self):
        a = seeded_rng(7, 'a').standard_normal(10)
        assert_array_equal(a, seeded_rng(7, 'a').standard_normal(10))

    def test_independent_labels(self):
        a = seeded_rng(7, 'a').standard_normal(10)
        assert not np.array_equal(a, seeded_rng(7, 'b').standard_normal(10))
        assert not np.array_equal(a, seeded_rng(8, 'a').standard_normal(10))

    def test_seed_range(self):
        seeded_rng(2**64 - 1, 'x')
        with pytest.raises(ValueError, match='unsigned'):
            seeded_rng(-1, 'x')
