"""Test the regularized nonnegative reconstruction."""
from types import SimpleNamespace

import numpy as np
import pytest
from astropy import units as u
from numpy.testing import assert_allclose

from oadenoise.core import ArrayGeometry, ImageGrid, Sinogram
from oadenoise.exceptions import NumericalError
from oadenoise.forward import ForwardOperator, MatrixOperator
from oadenoise.recon import (ReconConfig, gradient, laplacian_apply,
                             objective, power_iteration, reconstruct,
                             resolve_lambdas)


def _random_problem(seed=0):
    rng = np.random.default_rng(seed)
    op = MatrixOperator(rng.standard_normal((300, 256)), (16, 16), (3, 100))
    truth = rng.random((16, 16))
    truth[truth < 0.5] = 0
    data = op.forward_array(truth) + 0.5 * rng.standard_normal((3, 100))
    return op, Sinogram(data, 1.0)


class TestLaplacian:
    def test_self_adjoint(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 12, 9))
        assert_allclose(np.vdot(laplacian_apply(a), b),
                        np.vdot(a, laplacian_apply(b)), atol=1e-10)

    def test_constant_is_null(self):
        assert_allclose(laplacian_apply(np.full((5, 7), 3.0)), 0)

    def test_stencil(self):
        p = np.zeros((5, 5))
        p[2, 2] = 1
        lap = laplacian_apply(ImageGrid(p, 1e-3))
        assert isinstance(lap, ImageGrid)
        assert lap.pixels[2, 2] == -4
        assert lap.pixels[1, 2] == lap.pixels[2, 3] == 1
        assert lap.pixels.sum() == 0


def test_power_iteration():
    diag = np.array([1.0, 3.0, 7.5])
    assert_allclose(power_iteration(lambda v: diag * v, (3,), 500), 7.5,
                    rtol=1e-6)
    assert power_iteration(lambda v: 0 * v, (3,)) == 0


class TestConfig:
    def test_data_scaled_weights(self):
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        op = MatrixOperator(M, (1, 2), (1, 2))
        s = Sinogram([[1.0, 2.0]], 1.0)
        # M^T s = [7, 10]
        assert_allclose(resolve_lambdas(op, ReconConfig(), s), (0.1, 0.1),
                        rtol=1e-12)
        cfg = ReconConfig(tikhonov_factor=0.5, laplacian_factor=0.25)
        assert_allclose(resolve_lambdas(op, cfg, s), (5.0, 2.5), rtol=1e-12)
        negated = Sinogram([[-1.0, -2.0]], 1.0)
        assert_allclose(resolve_lambdas(op, ReconConfig(), negated),
                        (0.1, 0.1), rtol=1e-12)

    def test_data_scaled_weights_need_sinogram(self):
        op = MatrixOperator.identity((4, 4))
        with pytest.raises(ValueError, match='need the sinogram'):
            resolve_lambdas(op, ReconConfig())

    def test_operator_scaled_weights(self):
        op = MatrixOperator.identity((4, 4))
        cfg = ReconConfig(tikhonov_factor=0.5, laplacian_factor=0.25,
                          lambda_scale='operator')
        lam1, lam2 = resolve_lambdas(op, cfg)
        assert_allclose((lam1, lam2), (0.5, 0.25), rtol=1e-6)

    def test_mixed_weights(self):
        op = MatrixOperator.identity((2, 2))
        s = Sinogram([[0.5, -3.0], [1.0, 2.0]], 1.0)
        cfg = ReconConfig(lambda_tikhonov=2)
        assert_allclose(resolve_lambdas(op, cfg, s), (2.0, 0.03))

    def test_absolute_weights(self):
        op = MatrixOperator.identity((4, 4))
        cfg = ReconConfig(lambda_tikhonov=2, lambda_laplacian=0)
        assert resolve_lambdas(op, cfg) == (2.0, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError, match='Validation failed') as exc:
            ReconConfig(lambda_tikhonov=-1, max_iters=0)
        assert 'lambda_tikhonov' in str(exc.value)
        assert 'max_iters' in str(exc.value)
        with pytest.raises(ValueError, match='lambda_scale'):
            ReconConfig(lambda_scale='image')


class TestObjective:
    def setup_class(self):
        rng = np.random.default_rng(7)
        self.op = MatrixOperator(rng.standard_normal((16, 16)), (4, 4),
                                 (4, 4))
        self.p = rng.random((4, 4))
        self.s = Sinogram(rng.standard_normal((4, 4)), 1.0)

    def test_zero_image(self):
        cfg = ReconConfig(lambda_tikhonov=3, lambda_laplacian=5)
        value = objective(np.zeros((4, 4)), self.s, self.op, cfg)
        assert_allclose(value, np.sum(self.s.data**2), rtol=1e-12)

    def test_exact_preimage(self):
        s = Sinogram(self.op.forward_array(self.p), 1.0)
        cfg = ReconConfig(lambda_tikhonov=0, lambda_laplacian=0)
        assert objective(self.p, s, self.op, cfg) <= 1e-20

    def test_quadratic_scaling(self):
        cfg = ReconConfig(lambda_tikhonov=0.3, lambda_laplacian=0.2)
        value = objective(self.p, self.s, self.op, cfg)
        doubled = objective(2 * self.p, Sinogram(2 * self.s.data, 1.0),
                            self.op, cfg)
        assert_allclose(doubled, 4 * value, rtol=1e-12)
        assert_allclose(objective(np.zeros((4, 4)),
                                  Sinogram(2 * self.s.data, 1.0), self.op,
                                  cfg),
                        4 * np.sum(self.s.data**2), rtol=1e-12)

    def test_regularizers(self):
        cfg = ReconConfig(lambda_tikhonov=0.3, lambda_laplacian=0.2)
        residual = self.op.forward_array(self.p) - self.s.data
        expected = (np.sum(residual**2) + 0.3 * np.sum(self.p**2) +
                    0.2 * np.sum(laplacian_apply(self.p)**2))
        assert_allclose(objective(self.p, self.s, self.op, cfg), expected,
                        rtol=1e-12)


class TestReconstruct:
    def setup_class(self):
        self.op, self.s = _random_problem()
        self.cfg = ReconConfig(max_iters=3000, rel_tol=1e-15)
        self.result = reconstruct(self.s, self.op, self.cfg)

    def test_nonnegative(self):
        assert self.result.image.pixels.min() >= 0
        assert self.result.image.shape == (16, 16)

    def test_monotone_trace(self):
        trace = np.asarray(self.result.trace)
        assert trace[0] == pytest.approx(np.sum(self.s.data**2))
        assert np.all(np.diff(trace) <= 1e-10 * np.abs(trace[:-1]))

    def test_objective_matches_trace(self):
        value = objective(self.result.image, self.s, self.op, self.cfg)
        assert_allclose(value, self.result.trace[-1], rtol=1e-10)

    def test_kkt(self):
        p = self.result.image.pixels
        g = gradient(p, self.s, self.op, self.result.lambda_tikhonov,
                     self.result.lambda_laplacian)
        scale = np.abs(gradient(np.zeros_like(p), self.s, self.op,
                                self.result.lambda_tikhonov,
                                self.result.lambda_laplacian)).max()
        active = p == 0
        assert active.any() and (~active).any()
        assert np.abs(g[~active]).max() <= 1e-4 * scale
        assert g[active].min() >= -1e-4 * scale

    def test_str(self):
        assert 'converged' in str(self.result)


class TestIdentityOperator:
    cfg = ReconConfig(lambda_tikhonov=0, lambda_laplacian=0, max_iters=500,
                      rel_tol=1e-14)

    def test_nonnegative_data_is_returned(self):
        data = np.random.default_rng(5).random((8, 8)) + 0.1
        op = MatrixOperator.identity((8, 8))
        result = reconstruct(Sinogram(data, 1.0), op, self.cfg)
        assert_allclose(result.image.pixels, data, atol=1e-8)

    def test_negative_data_is_clipped(self):
        data = np.random.default_rng(6).standard_normal((8, 8))
        assert (data < 0).any()
        op = MatrixOperator.identity((8, 8))
        result = reconstruct(Sinogram(data, 1.0), op, self.cfg)
        assert_allclose(result.image.pixels, np.maximum(data, 0), atol=1e-8)

    def test_tikhonov_shrinkage(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((8, 8))
        op = MatrixOperator.identity((8, 8))
        cfg = ReconConfig(lambda_tikhonov=0.5, lambda_laplacian=0,
                          max_iters=500, rel_tol=1e-14)
        result = reconstruct(Sinogram(data, 1.0), op, cfg)
        assert_allclose(result.image.pixels, np.maximum(data, 0) / 1.5,
                        atol=1e-6)


def test_zero_sinogram():
    op = MatrixOperator.identity((4, 4))
    result = reconstruct(Sinogram(np.zeros((4, 4)), 1.0), op, ReconConfig())
    assert np.all(result.image.pixels == 0)
    assert result.trace[0] == 0


def test_non_finite_data():
    op = MatrixOperator.identity((4, 4))
    data = np.zeros((4, 4))
    data[1, 1] = np.inf
    with np.errstate(all='ignore'), \
            pytest.raises(NumericalError, match='Non-finite') as exc:
        reconstruct(SimpleNamespace(data=data), op,
                    ReconConfig(lambda_tikhonov=1, lambda_laplacian=0))
    assert exc.value.trace is not None


def test_point_target_centroid():
    geom = ArrayGeometry(64, 4.8 * u.mm, 360 * u.deg, 40 * u.MHz)
    op = ForwardOperator(geom, n_samples=256, grid_shape=(32, 32),
                         extent_m=4.8e-3)
    p0 = np.zeros((32, 32))
    p0[10, 20] = 1
    s = Sinogram(op.forward_array(p0), 4e7)
    image = reconstruct(s, op, ReconConfig(max_iters=100)).image.pixels
    weights = np.where(image >= 0.5 * image.max(), image, 0)
    rows, cols = np.indices(image.shape)
    centroid = (np.sum(rows * weights) / weights.sum(),
                np.sum(cols * weights) / weights.sum())
    assert_allclose(centroid, (10, 20), atol=1)
