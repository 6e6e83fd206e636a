"""Test noise generators and loaders."""
import os

import numpy as np
import pytest
from astropy.table import Table
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from oadenoise.core import Sinogram, seeded_rng
from oadenoise.exceptions import (NonFiniteDataError, OptoacousticWarning,
                                  ShapeMismatchError)
from oadenoise.fileio import write_sinogram
from oadenoise.noise import (CorpusNoiseSource, GaussianSweepNoiseSource,
                             ParasiticNoiseSpec, SyntheticNoiseSource,
                             ThermalNoiseSpec, compose_noisy, gen_parasitic,
                             gen_thermal, load_noise_corpus)

FS = 4e7
DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')


class TestThermal:
    def test_statistics(self):
        n = gen_thermal(ThermalNoiseSpec(0.25), (256, 1808), seed=1,
                        sample_rate_hz=FS)
        assert 0.2475 <= n.data.std() <= 0.2525
        assert abs(n.data.mean()) < 0.01
        sample = n.data.ravel()[:100000] / 0.25
        assert stats.kstest(sample, 'norm').pvalue > 0.01

    def test_power_per_seed(self):
        """Mean square of every pinned draw against sigma**2."""
        golden = Table.read(os.path.join(DATA_DIR, 'thermal_power.csv'),
                            format='ascii.csv')
        for row in golden:
            shape = (int(row['n_transducers']), int(row['n_samples']))
            spec = ThermalNoiseSpec(float(row['sigma']))
            n = gen_thermal(spec, shape, int(row['seed']), FS)
            power = np.mean(np.asarray(n.data, dtype=np.float64)**2)
            assert_allclose(power, row['power'], rtol=row['rtol'])
            again = gen_thermal(spec, shape, int(row['seed']), FS)
            assert np.mean(np.asarray(again.data, dtype=np.float64)**2) == \
                power

    def test_reproducible_and_labelled(self):
        spec = ThermalNoiseSpec(1.0)
        a = gen_thermal(spec, (4, 16), 3, FS, label='a')
        assert a == gen_thermal(spec, (4, 16), 3, FS, label='a')
        assert a != gen_thermal(spec, (4, 16), 3, FS, label='b')

    def test_zero_sigma(self):
        n = gen_thermal(ThermalNoiseSpec(0.0), (2, 8), 0, FS)
        assert_array_equal(n.data, 0)

    def test_invalid(self):
        with pytest.raises(ValueError, match='sigma'):
            ThermalNoiseSpec(-1)
        with pytest.raises(ValueError, match='shape'):
            gen_thermal(ThermalNoiseSpec(), (0, 8), 0, FS)


class TestParasitic:
    def test_no_bursts(self):
        spec = ParasiticNoiseSpec(burst_rate=0, burst_distribution='fixed')
        assert_array_equal(gen_parasitic(spec, (8, 64), 0, FS).data, 0)

    def test_block_is_correlated(self):
        spec = ParasiticNoiseSpec(burst_rate=1, burst_distribution='fixed',
                                  block_size_range=(8, 8),
                                  delay_range_samples=(0, 0))
        n = gen_parasitic(spec, (32, 512), seed=4, sample_rate_hz=FS).data
        active = np.nonzero(np.any(n != 0, axis=1))[0]
        assert active.size == 8
        assert_array_equal(np.diff(active), 1)
        block = n[active]
        corr = np.corrcoef(block)
        assert np.all(corr[np.triu_indices(8, 1)] > 0.99)

    def test_delayed_onsets(self):
        spec = ParasiticNoiseSpec(burst_rate=1, burst_distribution='fixed',
                                  block_size_range=(4, 4),
                                  delay_range_samples=(3, 3))
        n = gen_parasitic(spec, (4, 4096), seed=2, sample_rate_hz=FS).data
        onsets = [np.nonzero(row)[0][0] for row in n if np.any(row)]
        if len(onsets) == 4:
            assert_array_equal(np.diff(onsets), 3)
        else:
            # burst started close enough to the end to miss late channels
            assert onsets[0] > 4096 - 12

    def test_amplitude_bounded(self):
        spec = ParasiticNoiseSpec(burst_rate=1, burst_distribution='fixed',
                                  amplitude_range=(1, 1),
                                  channel_gain_range=(1, 1))
        n = gen_parasitic(spec, (16, 256), seed=9, sample_rate_hz=FS)
        assert np.abs(n.data).max() <= 1 + 1e-12

    def test_validation(self):
        with pytest.raises(ValueError, match='Validation failed') as exc:
            ParasiticNoiseSpec(burst_distribution='uniform',
                               block_size_range=(5, 2))
        assert 'burst_distribution' in str(exc.value)
        assert 'block_size_range' in str(exc.value)
        spec = ParasiticNoiseSpec(carrier_freq_range_hz=(1e6, 30e6))
        with pytest.raises(ValueError, match='Nyquist'):
            gen_parasitic(spec, (4, 16), 0, FS)


class TestCompose:
    def test_exact_difference(self):
        rng = np.random.default_rng(0)
        oa = Sinogram(rng.integers(-64, 64, (4, 16)) / 16.0, FS, 800)
        th = Sinogram(rng.integers(-64, 64, (4, 16)) / 32.0, FS)
        par = Sinogram(rng.integers(-64, 64, (4, 16)) / 8.0, FS)
        noisy, noise = compose_noisy(oa, th, par)
        assert_array_equal(noisy.data - noise.data, oa.data)
        assert_array_equal(noise.data, th.data + par.data)
        assert noisy.wavelength_nm == 800

    def test_float_difference(self):
        rng = np.random.default_rng(1)
        oa, th, par = (Sinogram(rng.standard_normal((4, 16)), FS)
                       for _ in range(3))
        noisy, noise = compose_noisy(oa, th, par)
        assert_allclose(noisy.data - noise.data,
                        oa.data.astype(np.float32), atol=1e-12)

    def test_shape_mismatch(self):
        a = Sinogram(np.zeros((2, 4)), FS)
        b = Sinogram(np.zeros((2, 5)), FS)
        with pytest.raises(ShapeMismatchError, match='thermal noise'):
            compose_noisy(a, b, a)


class TestCorpus:
    def test_load(self, tmp_path):
        for i in range(3):
            write_sinogram(Sinogram(np.full((2, 8), i, dtype=np.float32), FS),
                           tmp_path / f'n{i}.oasg')
        corpus = load_noise_corpus(tmp_path)
        assert [float(s.data[0, 0]) for s in corpus] == [0, 1, 2]

    def test_empty(self, tmp_path):
        with pytest.warns(OptoacousticWarning, match='No noise'):
            assert load_noise_corpus(tmp_path) == []

    def test_mismatch_lists_offenders(self, tmp_path):
        for i, n_t in enumerate((8, 8, 9)):
            write_sinogram(Sinogram(np.zeros((2, n_t)), FS),
                           tmp_path / f'n{i}.oasg')
        with pytest.raises(ShapeMismatchError, match='n2.oasg'):
            load_noise_corpus(tmp_path)

    def test_nonfinite_names_file(self, tmp_path):
        path = tmp_path / 'n0.oasg'
        write_sinogram(Sinogram(np.zeros((2, 4)), FS), path)
        blob = bytearray(path.read_bytes())
        blob[-4:] = np.array([np.inf], dtype='<f4').tobytes()
        path.write_bytes(bytes(blob))
        with pytest.raises(NonFiniteDataError, match='n0.oasg'):
            load_noise_corpus(tmp_path)


class TestSources:
    def test_synthetic(self):
        source = SyntheticNoiseSource(ThermalNoiseSpec(0.1),
                                      ParasiticNoiseSpec(burst_rate=2), FS)
        a = source.draw(seeded_rng(0, 'x'), (8, 64))
        b = source.draw(seeded_rng(0, 'x'), (8, 64))
        assert a.shape == (8, 64)
        assert_array_equal(a, b)

    def test_sweep(self):
        source = GaussianSweepNoiseSource(0.5)
        rng = seeded_rng(0, 'sweep')
        stds = [source.draw(rng, (16, 256)).std() for _ in range(20)]
        assert max(stds) < 0.5 * 1.05
        assert min(stds) > 0
        with pytest.raises(ValueError):
            GaussianSweepNoiseSource(0)

    def test_corpus(self):
        items = [Sinogram(np.full((2, 4), i), FS) for i in range(3)]
        source = CorpusNoiseSource(items)
        draw = source.draw(seeded_rng(0, 'c'), (2, 4))
        assert draw[0, 0] in (0, 1, 2)
        with pytest.raises(ShapeMismatchError, match='requested'):
            source.draw(seeded_rng(0, 'c'), (2, 5))
        with pytest.raises(ValueError, match='empty'):
            CorpusNoiseSource([])
