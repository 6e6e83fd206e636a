# -*- coding: utf-8 -*-
"""Training loop, optimizer and gradient verification for the denoiser.

Every step draws a noise-free sinogram and an independent noise
realization, forms their sum and regresses the network output onto the
noise with a mean absolute error. After each epoch the validation loss is
evaluated and the checkpoint with the lowest value is returned.

"""
import logging
import os

import numpy as np
from astropy.table import Table

from oadenoise import const
from oadenoise.core import seeded_rng
from oadenoise.denoiser import DenoiserArch, DenoiserModel
from oadenoise.exceptions import NumericalError, ShapeMismatchError

__all__ = ['TrainConfig', 'Adam', 'l1_loss', 'loss_gradients', 'train_step',
           'validation_loss', 'train', 'gradient_check']

log = logging.getLogger(__name__)


class TrainConfig:
    """Training hyperparameters.

    Parameters
    ----------
    epochs : int
        Number of passes.

    batch_size : int
        Samples whose gradients are averaged per optimizer step.

    learning_rate : float
        Initial Adam step size.

    beta1, beta2, adam_eps : float
        Adam moment decay rates and denominator guard.

    decay_epochs : int
        The learning rate decays linearly to zero over this many final
        epochs.

    input_scale : float
        Constant factor applied to network inputs and targets.

    seed : int
        Seed of initialization, sampling and noise draws.

    validation_fraction : float
        Share of the corpus held out when no explicit validation set is
        given.

    steps_per_epoch : int or `None`
        Optimizer steps per epoch; `None` means one per training sinogram.

    """

    def __init__(self, epochs=300, batch_size=1, learning_rate=1e-4,
                 beta1=0.5, beta2=0.999, adam_eps=1e-8, decay_epochs=50,
                 input_scale=const.input_scale, seed=0,
                 validation_fraction=0.15, steps_per_epoch=None):
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.adam_eps = float(adam_eps)
        self.decay_epochs = int(decay_epochs)
        self.input_scale = float(input_scale)
        self.seed = int(seed)
        self.validation_fraction = float(validation_fraction)
        self.steps_per_epoch = (None if steps_per_epoch is None
                                else int(steps_per_epoch))
        self.validate()

    @classmethod
    def full_scale(cls, **kwargs):
        """Schedule of the 256x1808 scanner setting."""
        return cls(**kwargs)

    @classmethod
    def desk_scale(cls, **kwargs):
        """Shorter schedule for 64x256 sinograms with unit-range signals."""
        fields = dict(epochs=50, decay_epochs=10, learning_rate=1e-3,
                      input_scale=1.0)
        fields.update(kwargs)
        return cls(**fields)

    def validate(self):
        err_msgs = []
        for name in ('epochs', 'batch_size', 'learning_rate', 'adam_eps',
                     'decay_epochs'):
            if not getattr(self, name) > 0:
                err_msgs.append(f'{name} must be positive, '
                                f'got {getattr(self, name)}')
        if self.decay_epochs > self.epochs:
            err_msgs.append(f'decay_epochs ({self.decay_epochs}) exceeds '
                            f'epochs ({self.epochs})')
        for name in ('beta1', 'beta2'):
            if not 0 <= getattr(self, name) < 1:
                err_msgs.append(f'{name} must be in [0, 1)')
        if self.input_scale == 0:
            err_msgs.append('input_scale must be nonzero')
        if not 0 <= self.validation_fraction < 1:
            err_msgs.append(f'validation_fraction must be in [0, 1), '
                            f'got {self.validation_fraction}')
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            err_msgs.append('steps_per_epoch must be positive')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True

    def lr_at(self, epoch):
        """Learning rate of the 0-based ``epoch``.

        Constant, then linear over the last ``decay_epochs`` epochs down
        to zero at the final one.

        """
        remaining = self.epochs - epoch - 1
        return self.learning_rate * min(1.0, remaining / self.decay_epochs)

    def to_dict(self):
        return {k: v for k, v in vars(self).items()}


class Adam:
    """Adam optimizer with bias-corrected moments.

    ``p -= lr * m_hat / (sqrt(v_hat) + eps)`` with
    ``m_hat = m / (1 - beta1**t)`` and ``v_hat = v / (1 - beta2**t)``.

    """

    def __init__(self, params, beta1=0.5, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, grad in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            params[name] -= (lr * (m / c1) /
                             (np.sqrt(v / c2) + self.eps)).astype(
                                 params[name].dtype)


def l1_loss(pred, target, loss_scale=1.0):
    """Mean absolute error and its gradient (zero at exact ties)."""
    diff = pred - target
    loss = loss_scale * np.mean(np.abs(diff))
    grad = (loss_scale / diff.size) * np.sign(diff)
    return float(loss), grad.astype(pred.dtype)


def loss_gradients(model, noisy, target, loss_scale=1.0, update_stats=False):
    """Loss and parameter gradients for one pair in network units.

    Parameters
    ----------
    model : `~oadenoise.denoiser.DenoiserModel`
        Model, evaluated in training mode.

    noisy, target : ndarray
        Noisy sinogram and its noise, before ``input_scale``.

    loss_scale : float
        Multiplier of the loss.

    update_stats : bool
        Blend the normalization statistics into the running estimates.

    Returns
    -------
    loss : float

    grads : dict

    """
    scale = model.dtype.type(model.input_scale)
    x = np.asarray(noisy, dtype=model.dtype) * scale
    t = np.asarray(target, dtype=model.dtype) * scale
    y, tape = model.forward(x[None], train=True, update_stats=update_stats)
    loss, grad_y = l1_loss(y[0], t, loss_scale)
    return loss, model.backward(tape, grad_y[None])


def train_step(model, optimizer, batch, lr):
    """One optimizer step on a batch of ``(noisy, noise)`` arrays.

    Returns
    -------
    loss : float
        Mean loss of the batch before the update.

    """
    losses = []
    total = None
    for noisy, target in batch:
        loss, grads = loss_gradients(model, noisy, target, update_stats=True)
        losses.append(loss)
        if total is None:
            total = grads
        else:
            for name in total:
                total[name] = total[name] + grads[name]
    if len(batch) > 1:
        total = {k: v / len(batch) for k, v in total.items()}
    optimizer.step(model.params, total, lr)
    return float(np.mean(losses))


def validation_loss(model, pairs):
    """Mean inference-mode L1 loss in network units over ``(noisy, noise)``."""
    scale = model.dtype.type(model.input_scale)
    losses = []
    for noisy, target in pairs:
        x = np.asarray(noisy, dtype=model.dtype) * scale
        y, _ = model.forward(x[None])
        losses.append(np.mean(np.abs(y[0] - np.asarray(target) * scale)))
    return float(np.mean(losses))


def _split(corpus, cfg):
    n = len(corpus)
    order = seeded_rng(cfg.seed, 'train/split').permutation(n)
    n_val = int(round(cfg.validation_fraction * n))
    if cfg.validation_fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    train_set = [corpus[i] for i in order[n_val:]]
    val_set = [corpus[i] for i in order[:n_val]]
    return train_set, val_set


def train(corpus_oa, noise_source, cfg, arch=None, validation=None,
          config_hash=''):
    """Train a denoiser on noise-free sinograms and a noise source.

    Parameters
    ----------
    corpus_oa : list of `~oadenoise.core.Sinogram`
        Noise-free training sinograms of one shape.

    noise_source : `~oadenoise.noise.NoiseSource`
        Provides an independent noise realization per step.

    cfg : `TrainConfig`
        Hyperparameters.

    arch : `~oadenoise.denoiser.DenoiserArch` or `None`
        Architecture, default ``DenoiserArch()``.

    validation : list of tuple or `None`
        Fixed ``(noisy, noise)`` validation pairs. If `None`, a share of
        ``corpus_oa`` is held out and paired with noise drawn once.

    config_hash : str
        Recorded in the model fingerprint.

    Returns
    -------
    model : `~oadenoise.denoiser.DenoiserModel`
        Checkpoint with the lowest validation loss. Its ``history``
        attribute is a `~astropy.table.Table` with columns ``epoch``,
        ``train_loss``, ``val_loss`` and ``lr``; epoch 0 is the untrained
        model.

    Raises
    ------
    ValueError
        Empty corpus.

    ShapeMismatchError
        Sinogram shapes differ or are incompatible with the architecture.

    NumericalError
        A training loss is not finite.

    """
    if not corpus_oa:
        raise ValueError('Training corpus is empty')
    arch = arch or DenoiserArch()
    shape = corpus_oa[0].shape
    arch.check_input_shape(shape)
    if any(s.shape != shape for s in corpus_oa):
        raise ShapeMismatchError('All training sinograms must share one shape')

    if validation is None:
        train_set, val_set = _split(corpus_oa, cfg)
        if not val_set:
            val_set = train_set
        val_rng = seeded_rng(cfg.seed, 'train/validation-noise')
        validation = []
        for s in val_set:
            noise = noise_source.draw(val_rng, shape)
            validation.append((s.data + noise, noise))
    else:
        train_set = list(corpus_oa)
        validation = [(np.asarray(getattr(a, 'data', a)),
                       np.asarray(getattr(b, 'data', b)))
                      for a, b in validation]

    model = DenoiserModel(arch, seed=cfg.seed, input_scale=cfg.input_scale)
    optimizer = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sample_rng = seeded_rng(cfg.seed, 'train/sampling')
    noise_rng = seeded_rng(cfg.seed, 'train/noise')
    steps = cfg.steps_per_epoch or len(train_set)

    history = Table(names=('epoch', 'train_loss', 'val_loss', 'lr'),
                    dtype=('i8', 'f8', 'f8', 'f8'))
    best_loss = validation_loss(model, validation)
    history.add_row((0, np.nan, best_loss, 0.0))
    best = model.copy()
    best.fingerprint = {'config_hash': config_hash, 'epoch': 0,
                        'val_loss': best_loss}
    log.info('Training %d parameters on %d sinograms, %d validation pairs',
             arch.n_parameters(), len(train_set), len(validation))

    trace = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        epoch_losses = []
        for step in range(steps):
            batch = []
            for _ in range(cfg.batch_size):
                oa = train_set[int(sample_rng.integers(len(train_set)))]
                noise = noise_source.draw(noise_rng, shape)
                batch.append((oa.data + noise, noise))
            loss = train_step(model, optimizer, batch, lr)
            trace.append(loss)
            if not np.isfinite(loss):
                raise NumericalError(f'Non-finite training loss at epoch '
                                     f'{epoch + 1}, step {step + 1}', trace)
            epoch_losses.append(loss)
        val = validation_loss(model, validation)
        if not np.isfinite(val):
            raise NumericalError(f'Non-finite validation loss at epoch '
                                 f'{epoch + 1}', trace)
        train_loss = float(np.mean(epoch_losses))
        history.add_row((epoch + 1, train_loss, val, lr))
        log.debug('epoch %d: train %.6g val %.6g lr %.3g', epoch + 1,
                  train_loss, val, lr)
        if val < best_loss:
            best_loss = val
            best = model.copy()
            best.fingerprint = {'config_hash': config_hash,
                                'epoch': epoch + 1, 'val_loss': val}

    log.info('Best validation loss %.6g at epoch %d', best_loss,
             best.fingerprint['epoch'])
    best.history = history
    return best


def gradient_check(m, s, target, step=1e-6, loss_scale=1.0):
    """Largest relative difference between analytic and numeric gradients.

    The model is copied to ``float64`` and evaluated in training mode
    without touching its running statistics. Every parameter is perturbed
    by ``+-step`` for central differences. The relative error of a
    component is ``|a - n| / max(|a|, |n|, floor)`` where ``floor`` is
    ``1e-3`` of the largest analytic gradient (at least ``1e-8``), so
    components far below the gradient scale are compared absolutely.

    Parameters
    ----------
    m : `~oadenoise.denoiser.DenoiserModel`
        Model to check; keep it tiny.

    s, target : `~oadenoise.core.Sinogram` or ndarray
        Input and target noise.

    step : float
        Finite-difference step.

    loss_scale : float
        Multiplier of the loss.

    Returns
    -------
    max_rel_err : float

    """
    model = m.copy(np.float64)
    noisy = np.asarray(getattr(s, 'data', s), dtype=np.float64)
    target = np.asarray(getattr(target, 'data', target), dtype=np.float64)
    _, grads = loss_gradients(model, noisy, target, loss_scale)
    scale_ref = max(max(float(np.abs(g).max()) for g in grads.values()), 1e-5)
    floor = 1e-3 * scale_ref
    worst = 0.0
    for name, values in model.params.items():
        flat = values.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus, _ = loss_gradients(model, noisy, target, loss_scale)
            flat[i] = orig - step
            minus, _ = loss_gradients(model, noisy, target, loss_scale)
            flat[i] = orig
            numeric = (plus - minus) / (2 * step)
            denom = max(abs(analytic[i]), abs(numeric), floor)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    log.debug('Gradient check over %d parameters: max rel err %.3g',
              model.arch.n_parameters(), worst)
    return worst
