# -*- coding: utf-8 -*-
r"""Model-based reconstruction with nonnegativity and two regularizers.

The image is the minimizer over ``p >= 0`` of

.. math::

    f(p) = \|M p - s\|^2 + \lambda_1 \|p\|^2 + \lambda_2 \|\Delta p\|^2

where ``M`` is the forward operator and ``Delta`` the 5-point Laplacian
with reflective boundaries. The Tikhonov term tempers limited-view
artifacts, the Laplacian term sub-resolution noise.

The solver is a monotone accelerated projected gradient method: an
accelerated step is kept only if it does not increase ``f``; otherwise a
plain projected-gradient step is taken from the current iterate and the
momentum is reset.

"""
import logging
import os

import numpy as np

from oadenoise.core import ImageGrid, seeded_rng
from oadenoise.exceptions import NumericalError

__all__ = ['LAMBDA_SCALES', 'laplacian_apply', 'ReconConfig', 'ReconResult',
           'power_iteration', 'resolve_lambdas', 'objective', 'gradient',
           'reconstruct']

log = logging.getLogger(__name__)

LAMBDA_SCALES = ('data', 'operator')


def _laplacian(p):
    padded = np.pad(p, 1, mode='edge')
    return (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] +
            padded[1:-1, 2:] - 4 * p)


def laplacian_apply(p):
    """5-point Laplacian with reflective (zero-flux) boundaries.

    Parameters
    ----------
    p : `~oadenoise.core.ImageGrid` or ndarray
        Image.

    Returns
    -------
    lap : same type as ``p``
        ``-4`` times each pixel plus its four neighbours; outside pixels
        mirror the edge, which makes the operator symmetric.

    """
    if isinstance(p, ImageGrid):
        return p.with_pixels(_laplacian(p.pixels))
    return _laplacian(np.asarray(p, dtype=np.float64))


class ReconConfig:
    """Regularization weights and stopping rule.

    The weights are either given absolutely or, when left as `None`,
    derived as ``factor * scale``. With ``lambda_scale='data'`` the scale
    is ``max |M^T s|`` of the sinogram being reconstructed; with
    ``'operator'`` it is ``lambda_max(M^T M)``, which does not depend on
    the data.

    Parameters
    ----------
    lambda_tikhonov, lambda_laplacian : float or `None`
        Absolute weights.

    tikhonov_factor, laplacian_factor : float
        Relative weights used when the absolute ones are `None`.

    lambda_scale : {'data', 'operator'}
        What the relative weights multiply.

    max_iters : int
        Iteration cap.

    rel_tol : float
        Stop once the relative objective change falls to this value.

    power_iters : int
        Power iterations for the step size and the relative weights.

    """

    def __init__(self, lambda_tikhonov=None, lambda_laplacian=None,
                 tikhonov_factor=1e-2, laplacian_factor=1e-2,
                 lambda_scale='data', max_iters=200, rel_tol=1e-6,
                 power_iters=100):
        self.lambda_tikhonov = (None if lambda_tikhonov is None
                                else float(lambda_tikhonov))
        self.lambda_laplacian = (None if lambda_laplacian is None
                                 else float(lambda_laplacian))
        self.tikhonov_factor = float(tikhonov_factor)
        self.laplacian_factor = float(laplacian_factor)
        self.lambda_scale = lambda_scale
        self.max_iters = int(max_iters)
        self.rel_tol = float(rel_tol)
        self.power_iters = int(power_iters)
        self.validate()

    def validate(self):
        err_msgs = []
        for name in ('lambda_tikhonov', 'lambda_laplacian', 'tikhonov_factor',
                     'laplacian_factor'):
            value = getattr(self, name)
            if value is not None and value < 0:
                err_msgs.append(f'{name} must be >= 0, got {value}')
        if self.lambda_scale not in LAMBDA_SCALES:
            err_msgs.append(f'lambda_scale must be one of {LAMBDA_SCALES}, '
                            f'got {self.lambda_scale!r}')
        if self.max_iters < 1:
            err_msgs.append(f'max_iters must be >= 1, got {self.max_iters}')
        if not self.rel_tol > 0:
            err_msgs.append(f'rel_tol must be positive, got {self.rel_tol}')
        if self.power_iters < 1:
            err_msgs.append('power_iters must be >= 1')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True


class ReconResult:
    """Reconstruction output.

    Attributes
    ----------
    image : `~oadenoise.core.ImageGrid`
        Nonnegative reconstruction.

    trace : list of float
        Objective of every accepted iterate, starting with the zero image.

    n_iter : int
        Iterations performed.

    converged : bool
        Whether the relative tolerance was reached.

    lambda_tikhonov, lambda_laplacian : float
        Weights actually used.

    step_size : float
        Gradient step ``1 / L``.

    """

    def __init__(self, image, trace, n_iter, converged, lambda_tikhonov,
                 lambda_laplacian, step_size):
        self.image = image
        self.trace = trace
        self.n_iter = n_iter
        self.converged = converged
        self.lambda_tikhonov = lambda_tikhonov
        self.lambda_laplacian = lambda_laplacian
        self.step_size = step_size

    def __str__(self):
        return os.linesep.join([
            self.__class__.__name__,
            f'n_iter = {self.n_iter}', f'converged = {self.converged}',
            f'objective = {self.trace[-1]:.6g}',
            f'lambda_tikhonov = {self.lambda_tikhonov:.6g}',
            f'lambda_laplacian = {self.lambda_laplacian:.6g}'])


def power_iteration(apply, shape, n_iter=100, rtol=1e-8):
    """Largest eigenvalue of a symmetric positive semidefinite map.

    The start vector comes from a fixed random stream, so the estimate is
    deterministic.

    """
    v = seeded_rng(0, 'recon/power-iteration').random(shape) + 0.5
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(n_iter):
        w = apply(v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        new = float(np.vdot(v, w))
        v = w / norm
        if abs(new - estimate) <= rtol * abs(new):
            return new
        estimate = new
    return estimate


def _normal_map(op):
    return lambda v: op.adjoint_array(op.forward_array(v))


def resolve_lambdas(op, cfg, s=None):
    """Absolute ``(lambda_tikhonov, lambda_laplacian)``.

    Parameters
    ----------
    op : `~oadenoise.forward.MatrixOperator`
        Forward operator.

    cfg : `ReconConfig`
        Weights.

    s : `~oadenoise.core.Sinogram` or `None`
        Sinogram to reconstruct; needed for data-scaled relative weights.

    Raises
    ------
    ValueError
        Data-scaled weights are requested without a sinogram.

    """
    if cfg.lambda_tikhonov is not None and cfg.lambda_laplacian is not None:
        return cfg.lambda_tikhonov, cfg.lambda_laplacian
    if cfg.lambda_scale == 'data':
        if s is None:
            raise ValueError('Data-scaled weights need the sinogram')
        scale = float(np.abs(op.adjoint_array(
            np.asarray(s.data, dtype=np.float64))).max())
    else:
        scale = power_iteration(_normal_map(op), op.image_shape,
                                cfg.power_iters)
    lam1 = (cfg.lambda_tikhonov if cfg.lambda_tikhonov is not None
            else cfg.tikhonov_factor * scale)
    lam2 = (cfg.lambda_laplacian if cfg.lambda_laplacian is not None
            else cfg.laplacian_factor * scale)
    return lam1, lam2


def _pixels(p):
    return p.pixels if isinstance(p, ImageGrid) else np.asarray(p, float)


def _value(p, residual, lam1, lam2):
    return float(np.sum(residual**2) + lam1 * np.sum(p**2) +
                 lam2 * np.sum(_laplacian(p)**2))


def objective(p, s, op, cfg, lambdas=None):
    """Exact value of the regularized least-squares objective.

    Parameters
    ----------
    p : `~oadenoise.core.ImageGrid` or ndarray
        Image.

    s : `~oadenoise.core.Sinogram`
        Measured sinogram.

    op : `~oadenoise.forward.MatrixOperator`
        Forward operator.

    cfg : `ReconConfig`
        Regularization weights.

    lambdas : tuple or `None`
        Precomputed result of :func:`resolve_lambdas`.

    Raises
    ------
    ShapeMismatchError
        Inconsistent shapes.

    """
    lam1, lam2 = lambdas or resolve_lambdas(op, cfg, s)
    p = _pixels(p)
    residual = op.forward_array(p) - np.asarray(s.data, dtype=np.float64)
    return _value(p, residual, lam1, lam2)


def gradient(p, s, op, lam1, lam2):
    """Gradient of the objective at ``p`` (unconstrained)."""
    p = _pixels(p)
    residual = op.forward_array(p) - np.asarray(s.data, dtype=np.float64)
    return 2 * (op.adjoint_array(residual) + lam1 * p +
                lam2 * _laplacian(_laplacian(p)))


def reconstruct(s, op, cfg):
    """Nonnegative regularized reconstruction of a sinogram.

    Parameters
    ----------
    s : `~oadenoise.core.Sinogram`
        Sinogram, matching the operator.

    op : `~oadenoise.forward.MatrixOperator`
        Forward operator.

    cfg : `ReconConfig`
        Weights and stopping rule.

    Returns
    -------
    result : `ReconResult`

    Raises
    ------
    NumericalError
        The objective became non-finite; the trace so far is attached.

    """
    lam1, lam2 = resolve_lambdas(op, cfg, s)
    data = np.asarray(s.data, dtype=np.float64)
    forward, adjoint = op.forward_array, op.adjoint_array

    def hessian(v):
        return adjoint(forward(v)) + lam1 * v + lam2 * _laplacian(
            _laplacian(v))

    lipschitz = 2 * 1.05 * power_iteration(hessian, op.image_shape,
                                           cfg.power_iters)
    if lipschitz == 0:
        lipschitz = 1.0
    step = 1.0 / lipschitz
    atb = adjoint(data)

    def grad(v, mv):
        return 2 * (adjoint(mv) - atb + lam1 * v +
                    lam2 * _laplacian(_laplacian(v)))

    def value(v, mv):
        return _value(v, mv - data, lam1, lam2)

    x = np.zeros(op.image_shape)
    mx = np.zeros(op.sinogram_shape)
    fx = value(x, mx)
    y, my = x, mx
    t = 1.0
    trace = [fx]
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_iters + 1):
        z = np.maximum(y - step * grad(y, my), 0)
        mz = forward(z)
        fz = value(z, mz)
        if not np.isfinite(fz):
            raise NumericalError(f'Non-finite objective at iteration '
                                 f'{n_iter}', trace)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        if fz <= fx:
            y = z + ((t - 1) / t_next) * (z - x)
            my = mz + ((t - 1) / t_next) * (mz - mx)
            t = t_next
        else:
            z = np.maximum(x - step * grad(x, mx), 0)
            mz = forward(z)
            fz = value(z, mz)
            if fz > fx:
                log.debug('Projected-gradient step did not decrease the '
                          'objective at iteration %d, stopping', n_iter)
                converged = True
                break
            y, my, t = z, mz, 1.0
        change = fx - fz
        x, mx, fx = z, mz, fz
        trace.append(fx)
        log.debug('iteration %d: objective %.10g', n_iter, fx)
        if change <= cfg.rel_tol * max(abs(trace[-2]), np.finfo(float).tiny):
            converged = True
            break
    log.info("Reconstruction: %d iterations, objective %.6g, converged %s",
             n_iter, fx, converged)
    return ReconResult(ImageGrid(x, op.extent_m), trace, n_iter, converged,
                       lam1, lam2, step)
