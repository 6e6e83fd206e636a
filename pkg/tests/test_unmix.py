"""Test spectral unmixing."""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oadenoise.core import ImageGrid, MultispectralStack
from oadenoise.exceptions import (ConfigError, OptoacousticWarning,
                                  ShapeMismatchError)
from oadenoise.unmix import (NmfConfig, NmfResult, assemble_spectra,
                             depth_profiles, match_components, nmf_factorize,
                             nmf_objective, pearson, select_components)


def _stack(values, wavelengths=(700, 800), extent_m=3e-3):
    return MultispectralStack(
        (wl, ImageGrid(v, extent_m)) for wl, v in zip(wavelengths, values))


class TestAssemble:
    def setup_class(self):
        first = [np.arange(6.).reshape(2, 3), np.ones((2, 3))]
        second = [np.full((2, 3), 2.), -np.arange(6.).reshape(2, 3)]
        with pytest.warns(OptoacousticWarning, match='Clamped 5'):
            self.spectra = assemble_spectra([_stack(first), _stack(second)])
        self.first, self.second = first, second

    def test_layout(self):
        assert self.spectra.shape == (12, 2)
        assert self.spectra.n_scans == 2
        assert self.spectra.n_clamped == 5
        assert_array_equal(self.spectra.pixel_index[7], [1, 0, 1])
        assert_array_equal(self.spectra.values[:6, 0], np.arange(6.))
        assert_array_equal(self.spectra.values[6:, 1], 0)
        assert_array_equal(self.spectra.wavelengths, [700, 800])

    def test_scatter(self):
        image = self.spectra.scatter(self.spectra.values[:, 0], scan=1)
        assert_array_equal(image.pixels, self.second[0])
        with pytest.raises(ShapeMismatchError):
            self.spectra.scatter(np.zeros(3))

    def test_depths(self):
        assert_allclose(self.spectra.pixel_depths_m()[:6],
                        [0, 0, 0, 1e-3, 1e-3, 1e-3])

    def test_single_stack(self):
        spectra = assemble_spectra(_stack([np.ones((2, 2))] * 2))
        assert spectra.n_clamped == 0
        assert spectra.shape == (4, 2)

    def test_mismatch(self):
        a = _stack([np.ones((2, 2))] * 2)
        b = _stack([np.ones((2, 2))] * 2, wavelengths=(700, 850))
        with pytest.raises(ShapeMismatchError, match='wavelengths'):
            assemble_spectra([a, b])
        with pytest.raises(ValueError, match='No stacks'):
            assemble_spectra([])


class TestConfig:
    def test_defaults(self):
        cfg = NmfConfig()
        assert cfg.k == 10
        assert cfg.lambda_l1 == cfg.lambda_fro == 50.1

    def test_invalid(self):
        with pytest.raises(ConfigError, match='Validation failed') as exc:
            NmfConfig(k=0, lambda_l1=-1)
        assert 'k must be' in str(exc.value)
        assert 'regularization' in str(exc.value)


class TestFactorize:
    def test_rank_one_recovery(self):
        rng = np.random.default_rng(0)
        w = rng.random(50) + 0.1
        h = rng.random(6) + 0.1
        S = np.outer(w, h)
        cfg = NmfConfig(k=1, lambda_l1=0, lambda_fro=0, max_iters=2000,
                        rel_tol=1e-12, n_restarts=2)
        result = nmf_factorize(S, cfg)
        assert result.relative_error < 1e-3
        cosine = result.H[0] @ h / np.linalg.norm(result.H[0]) / \
            np.linalg.norm(h)
        assert cosine > 0.999

    def test_objective_non_increasing(self):
        S = np.random.default_rng(1).random((40, 8))
        cfg = NmfConfig(k=3, lambda_l1=0.1, lambda_fro=0.1, max_iters=300,
                        rel_tol=1e-9, n_restarts=3)
        result = nmf_factorize(S, cfg)
        trace = np.asarray(result.trace)
        assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1, trace[:-1]))
        assert np.all(result.W >= 0) and np.all(result.H >= 0)
        assert_allclose(result.objective,
                        nmf_objective(S, result.W, result.H, cfg))

    def test_relative_error(self):
        S = np.random.default_rng(2).random((30, 5))
        cfg = NmfConfig(k=2, lambda_l1=0, lambda_fro=0, max_iters=50,
                        n_restarts=1)
        result = nmf_factorize(S, cfg)
        expected = (np.sum((S - result.W @ result.H)**2) / np.sum(S**2))
        assert_allclose(result.relative_error, expected)
        assert 0 < result.relative_error < 1

    def test_best_restart_and_threads(self):
        S = np.random.default_rng(3).random((30, 6))
        cfg = NmfConfig(k=2, lambda_l1=0.01, lambda_fro=0.01, max_iters=100,
                        n_restarts=4, seed=7)
        serial = nmf_factorize(S, cfg)
        threaded = nmf_factorize(S, cfg, n_jobs=3)
        assert serial.restart == threaded.restart
        assert_array_equal(serial.W, threaded.W)
        assert_array_equal(serial.H, threaded.H)

    def test_zero_data(self):
        cfg = NmfConfig(k=2, lambda_l1=0.1, lambda_fro=0.1, max_iters=20,
                        n_restarts=1)
        result = nmf_factorize(np.zeros((10, 4)), cfg)
        assert result.relative_error == 0.0
        assert result.objective == 0.0

    def test_objective_by_hand(self):
        cfg = NmfConfig(k=1, lambda_l1=1, lambda_fro=2)
        value = nmf_objective([[2.0]], [[1.0]], [[1.0]], cfg)
        # 0.5 * (2 - 1)**2 + 1 * (1 + 1) + 0.5 * 2 * (1 + 1)
        assert value == pytest.approx(4.5, abs=1e-12)

    def test_errors(self):
        cfg = NmfConfig(k=1, n_restarts=1)
        with pytest.raises(ValueError, match='nonnegative'):
            nmf_factorize(-np.ones((4, 3)), cfg)
        with pytest.raises(ValueError, match='nonnegative'):
            nmf_objective(np.ones((4, 3)), -np.ones((4, 1)), np.ones((1, 3)),
                          cfg)
        with pytest.raises(ShapeMismatchError, match='Cannot factor'):
            nmf_objective(np.ones((4, 3)), np.ones((4, 2)), np.ones((1, 3)),
                          cfg)


class TestDepthProfiles:
    def setup_class(self):
        rng = np.random.default_rng(4)
        self.W = rng.random((200, 3))
        self.depth = rng.uniform(0, 2e-3, 200)
        self.result = NmfResult(self.W, np.ones((3, 4)), [0.0], 0.0, 0)

    def test_sums_to_one(self):
        table = depth_profiles(self.result, [0, 2], self.depth, bin_m=1e-4,
                               smooth_halfwidth_m=3e-4, max_depth_m=3e-3)
        assert table.colnames == ['depth_m', 'component_0', 'component_2']
        assert len(table) == 31
        total = table['component_0'] + table['component_2']
        defined = np.isfinite(total)
        assert defined[1:19].all()
        assert not defined[25:].any()
        assert_allclose(total[defined], 1)

    def test_unsmoothed_level(self):
        depth = np.array([0.0, 0.0, 1e-4])
        W = np.array([[1.0, 3.0], [3.0, 1.0], [0.0, 0.0]])
        result = NmfResult(W, np.ones((2, 2)), [0.0], 0.0, 0)
        table = depth_profiles(result, [0, 1], depth, bin_m=1e-4,
                               smooth_halfwidth_m=0, max_depth_m=2e-4)
        assert_allclose(table['component_0'][0], 0.5)
        # zero total and empty levels are undefined
        assert np.isnan(table['component_0'][1])
        assert np.isnan(table['component_1'][2])

    def test_single_component(self):
        table = depth_profiles(self.result, [1], self.depth, bin_m=1e-4,
                               smooth_halfwidth_m=3e-4, max_depth_m=2e-3)
        values = np.asarray(table['component_1'])
        assert np.isfinite(values[1:20]).all()
        assert_array_equal(values[np.isfinite(values)], 1.0)

    def test_decaying_component(self):
        level = np.repeat(np.arange(21), 10)
        depth = level * 1e-4
        # A decays linearly from 2 to 1, B is constant
        W = np.column_stack([2 - level / 20, np.ones(level.size)])
        result = NmfResult(W, np.ones((2, 3)), [0.0], 0.0, 0)
        table = depth_profiles(result, [0, 1], depth, bin_m=1e-4,
                               smooth_halfwidth_m=3e-4, max_depth_m=2e-3)
        share = np.asarray(table['component_0'])
        assert np.isfinite(share).all()
        assert np.all(np.diff(share[3:18]) < 0)
        assert share[3] < 2 / 3 and share[17] > 0.5

    def test_errors(self):
        with pytest.raises(ValueError, match='At least one'):
            depth_profiles(self.result, [], self.depth)
        with pytest.raises(ShapeMismatchError):
            depth_profiles(self.result, [0], self.depth[:10])


class TestMatching:
    def test_pearson(self):
        assert_allclose(pearson([1, 2, 3], [2, 4, 6]), 1)
        assert_allclose(pearson([1, 2, 3], [3, 2, 1]), -1)
        assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))

    def test_match_and_select(self):
        refs = {'HbO2': np.array([1.0, 2.0, 3.0, 4.0]),
                'Hb': np.array([4.0, 3.0, 1.0, 0.5])}
        H = np.array([[0.1, 0.2, 0.2, 0.1],
                      [8.0, 6.0, 2.0, 1.0],
                      [2.0, 4.1, 6.0, 8.2]])
        matches = match_components(H, refs)
        assert list(matches['component']) == [0, 1, 2]
        assert list(matches['best_match'])[1:] == ['Hb', 'HbO2']
        assert matches['r_HbO2'][2] > 0.99
        assert select_components(matches, ['HbO2', 'Hb']) == [2, 1]

    def test_constant_component(self):
        matches = match_components(np.ones((1, 3)),
                                   {'lipid': np.array([1.0, 2.0, 3.0])})
        assert matches['best_match'][0] == ''
        assert select_components(matches, ['lipid']) == []
