# -*- coding: utf-8 -*-
"""Residual U-Net that infers the electrical noise of a sinogram.

The network sees a whole sinogram as a one-channel image of shape
``(n_transducers, n_samples)`` and predicts its noise component; the
denoised sinogram is the input minus that prediction. The encoder has
``levels`` stages of two 3x3 conv + normalization + ReLU units followed by
2x2 max pooling, doubling the channel count per stage. The decoder mirrors
it with nearest-neighbour upsampling and concatenated skip connections,
and a 1x1 convolution maps the last features to the noise estimate.

Examples
--------

>>> import numpy as np
>>> from oadenoise.core import Sinogram
>>> from oadenoise.denoiser import DenoiserArch, DenoiserModel, denoise
>>> model = DenoiserModel(DenoiserArch(levels=1, base_channels=2), seed=0)
>>> s = Sinogram(np.ones((16, 32), dtype=np.float32), 4e7)
>>> bool((denoise(model, s).data == s.data).all())  # zero-initialized head
True

"""
import logging
import os
import struct

import numpy as np

from oadenoise import const
from oadenoise.core import seeded_rng
from oadenoise.exceptions import DataFormatError, ShapeMismatchError
from oadenoise.layers import (batch_norm, batch_norm_backward, conv2d,
                              conv2d_backward, he_normal, max_pool2,
                              max_pool2_backward, relu, relu_backward,
                              upsample2, upsample2_backward)

__all__ = ['DenoiserArch', 'DenoiserModel', 'infer_noise', 'denoise',
           'save_model', 'load_model', 'MODEL_MAGIC']

MODEL_MAGIC = b'OAML'
_MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct('<4sHIIIIddd64sIdQ')

log = logging.getLogger(__name__)


class DenoiserArch:
    """Architecture descriptor.

    Parameters
    ----------
    levels : int
        Down/up-sampling stages; inputs must be divisible by ``2**levels``.

    base_channels : int
        Feature channels of the first stage, doubled at every level.

    in_channels : int
        Input channels (one for sinograms).

    kernel_size : int
        Odd convolution kernel size.

    bn_momentum, bn_eps : float
        Running-statistics momentum and variance epsilon of the
        normalization layers.

    """

    def __init__(self, levels=4, base_channels=32, in_channels=1,
                 kernel_size=3, bn_momentum=0.1, bn_eps=1e-5):
        self.levels = int(levels)
        self.base_channels = int(base_channels)
        self.in_channels = int(in_channels)
        self.kernel_size = int(kernel_size)
        self.bn_momentum = float(bn_momentum)
        self.bn_eps = float(bn_eps)
        self.validate()

    def validate(self):
        err_msgs = []
        if self.levels < 1:
            err_msgs.append(f'levels must be >= 1, got {self.levels}')
        if self.base_channels < 1:
            err_msgs.append(f'base_channels must be >= 1, '
                            f'got {self.base_channels}')
        if self.in_channels < 1:
            err_msgs.append(f'in_channels must be >= 1, '
                            f'got {self.in_channels}')
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            err_msgs.append(f'kernel_size must be odd, got {self.kernel_size}')
        if not 0 < self.bn_momentum <= 1:
            err_msgs.append(f'bn_momentum must be in (0, 1], '
                            f'got {self.bn_momentum}')
        if not self.bn_eps > 0:
            err_msgs.append(f'bn_eps must be positive, got {self.bn_eps}')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True

    @property
    def divisor(self):
        return 2 ** self.levels

    def check_input_shape(self, shape):
        """Raise `ShapeMismatchError` unless both dims divide ``2**levels``."""
        if len(shape) != 2 or any(n % self.divisor or n == 0 for n in shape):
            raise ShapeMismatchError(
                f'Input shape {tuple(shape)} must be divisible by '
                f'{self.divisor} (2**levels) in both dimensions')

    def blocks(self):
        """``(name, in_channels, out_channels)`` of every conv block."""
        base = self.base_channels
        out = []
        c_in = self.in_channels
        for i in range(self.levels):
            out.append((f'enc{i}', c_in, base * 2**i))
            c_in = base * 2**i
        out.append(('bottleneck', c_in, base * 2**self.levels))
        for i in reversed(range(self.levels)):
            out.append((f'dec{i}', base * 2**(i + 1) + base * 2**i,
                        base * 2**i))
        return out

    def parameter_layout(self):
        """Canonical ``(name, shape)`` order of trainable parameters."""
        k = self.kernel_size
        layout = []
        for name, c_in, c_out in self.blocks():
            for j, cin in ((1, c_in), (2, c_out)):
                layout.append((f'{name}.conv{j}.weight', (c_out, cin, k, k)))
                layout.append((f'{name}.bn{j}.gamma', (c_out,)))
                layout.append((f'{name}.bn{j}.beta', (c_out,)))
        layout.append(('head.weight', (1, self.base_channels, 1, 1)))
        layout.append(('head.bias', (1,)))
        return layout

    def buffer_layout(self):
        """Canonical ``(name, shape)`` order of normalization statistics."""
        layout = []
        for name, _, c_out in self.blocks():
            for j in (1, 2):
                layout.append((f'{name}.bn{j}.running_mean', (c_out,)))
                layout.append((f'{name}.bn{j}.running_var', (c_out,)))
        return layout

    def n_parameters(self):
        return sum(int(np.prod(shape)) for _, shape in self.parameter_layout())

    def n_values(self):
        """Parameters plus buffers, as stored in model files."""
        return self.n_parameters() + sum(
            int(np.prod(shape)) for _, shape in self.buffer_layout())

    def to_dict(self):
        return {'levels': self.levels, 'base_channels': self.base_channels,
                'in_channels': self.in_channels,
                'kernel_size': self.kernel_size,
                'bn_momentum': self.bn_momentum, 'bn_eps': self.bn_eps}

    def __eq__(self, other):
        if not isinstance(other, DenoiserArch):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self):
        fields = ', '.join(f'{k}={v!r}' for k, v in self.to_dict().items())
        return f'DenoiserArch({fields})'


class DenoiserModel:
    """Weights, normalization statistics and provenance of a denoiser.

    Parameters
    ----------
    arch : `DenoiserArch`
        Architecture.

    seed : int
        Seed of the He-normal initialization. The 1x1 head starts at zero,
        so a fresh model predicts no noise.

    dtype : dtype
        ``float32`` for training and inference, ``float64`` for gradient
        checks.

    input_scale : float
        Inputs are multiplied by this factor before the network and the
        prediction is divided by it afterwards.

    """

    def __init__(self, arch, seed=0, dtype=np.float32,
                 input_scale=const.input_scale):
        if input_scale == 0:
            raise ValueError('input_scale must be nonzero')
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.input_scale = float(input_scale)
        self.fingerprint = {'config_hash': '', 'epoch': 0,
                            'val_loss': float('nan')}
        self.history = None
        rng = seeded_rng(seed, 'denoiser/init')
        self.params = {}
        for name, shape in arch.parameter_layout():
            if name.startswith('head.') or name.endswith('.beta'):
                self.params[name] = np.zeros(shape, dtype=self.dtype)
            elif name.endswith('.gamma'):
                self.params[name] = np.ones(shape, dtype=self.dtype)
            else:
                self.params[name] = he_normal(rng, shape, self.dtype)
        self.buffers = {}
        for name, shape in arch.buffer_layout():
            fill = 1.0 if name.endswith('running_var') else 0.0
            self.buffers[name] = np.full(shape, fill, dtype=self.dtype)

    def copy(self, dtype=None):
        """Deep copy, optionally cast to another floating dtype."""
        other = DenoiserModel.__new__(DenoiserModel)
        other.arch = self.arch
        other.dtype = np.dtype(dtype or self.dtype)
        other.input_scale = self.input_scale
        other.fingerprint = dict(self.fingerprint)
        other.history = self.history
        other.params = {k: v.astype(other.dtype)
                        for k, v in self.params.items()}
        other.buffers = {k: v.astype(other.dtype)
                         for k, v in self.buffers.items()}
        return other

    def state_vector(self):
        """Parameters then buffers, flattened in canonical order."""
        parts = [self.params[name].ravel()
                 for name, _ in self.arch.parameter_layout()]
        parts += [self.buffers[name].ravel()
                  for name, _ in self.arch.buffer_layout()]
        return np.concatenate(parts)

    def load_state_vector(self, values):
        """Inverse of :meth:`state_vector`."""
        values = np.asarray(values)
        if values.size != self.arch.n_values():
            raise DataFormatError(f'Expected {self.arch.n_values()} values '
                                  f'for {self.arch!r}, got {values.size}')
        pos = 0
        for target, layout in ((self.params, self.arch.parameter_layout()),
                               (self.buffers, self.arch.buffer_layout())):
            for name, shape in layout:
                n = int(np.prod(shape))
                target[name] = values[pos:pos + n].reshape(shape).astype(
                    self.dtype)
                pos += n

    def _block(self, prefix, x, train, update_stats, tape):
        arch = self.arch
        for j in (1, 2):
            z = conv2d(x, self.params[f'{prefix}.conv{j}.weight'])
            y, bn_cache = batch_norm(
                z, self.params[f'{prefix}.bn{j}.gamma'],
                self.params[f'{prefix}.bn{j}.beta'],
                self.buffers[f'{prefix}.bn{j}.running_mean'],
                self.buffers[f'{prefix}.bn{j}.running_var'], train,
                arch.bn_momentum, arch.bn_eps, update_stats)
            if tape is not None:
                tape.setdefault(prefix, []).append((x, y, bn_cache))
            x = relu(y)
        return x

    def _block_backward(self, prefix, tape, grad, grads):
        for j, (x, y, bn_cache) in zip((2, 1), reversed(tape[prefix])):
            grad = relu_backward(y, grad)
            grad, g_gamma, g_beta = batch_norm_backward(bn_cache, grad)
            grads[f'{prefix}.bn{j}.gamma'] = g_gamma
            grads[f'{prefix}.bn{j}.beta'] = g_beta
            grad, g_w, _ = conv2d_backward(
                x, self.params[f'{prefix}.conv{j}.weight'], grad)
            grads[f'{prefix}.conv{j}.weight'] = g_w
        return grad

    def forward(self, x, train=False, update_stats=False):
        """Network output for one ``(channels, height, width)`` input.

        Parameters
        ----------
        x : ndarray
            Network input (already scaled).

        train : bool
            Use per-sample normalization statistics and record a tape for
            :meth:`backward`.

        update_stats : bool
            In training mode, blend the sample statistics into the running
            statistics.

        Returns
        -------
        y : ndarray
            Shape ``(1, height, width)``.

        tape : dict or `None`
            Intermediate values (training mode only).

        """
        x = np.asarray(x, dtype=self.dtype)
        tape = {'pool': []} if train else None
        skips = []
        for i in range(self.arch.levels):
            x = self._block(f'enc{i}', x, train, update_stats, tape)
            skips.append(x)
            x, argmax = max_pool2(x)
            if train:
                tape['pool'].append(argmax)
        x = self._block('bottleneck', x, train, update_stats, tape)
        for i in reversed(range(self.arch.levels)):
            x = np.concatenate([upsample2(x), skips[i]], axis=0)
            x = self._block(f'dec{i}', x, train, update_stats, tape)
        if train:
            tape['head_in'] = x
        y = conv2d(x, self.params['head.weight'], self.params['head.bias'])
        return y, tape

    def backward(self, tape, grad_y):
        """Parameter gradients for an output gradient ``grad_y``.

        Returns
        -------
        grads : dict
            Gradient of every trainable parameter, keyed by name.

        """
        grads = {}
        grad, g_w, g_b = conv2d_backward(tape['head_in'],
                                         self.params['head.weight'], grad_y,
                                         with_bias=True)
        grads['head.weight'] = g_w
        grads['head.bias'] = g_b
        base = self.arch.base_channels
        skip_grads = {}
        for i in range(self.arch.levels):
            grad = self._block_backward(f'dec{i}', tape, grad, grads)
            n_up = base * 2**(i + 1)
            skip_grads[i] = grad[n_up:]
            grad = upsample2_backward(grad[:n_up])
        grad = self._block_backward('bottleneck', tape, grad, grads)
        for i in reversed(range(self.arch.levels)):
            grad = max_pool2_backward(tape['pool'][i], grad) + skip_grads[i]
            grad = self._block_backward(f'enc{i}', tape, grad, grads)
        return grads

    def infer_noise(self, s):
        """See :func:`infer_noise`."""
        self.arch.check_input_shape(s.shape)
        x = np.asarray(s.data, dtype=self.dtype) * self.dtype.type(
            self.input_scale)
        y, _ = self.forward(x[None])
        return s.with_data(y[0] / self.dtype.type(self.input_scale))

    def __eq__(self, other):
        if not isinstance(other, DenoiserModel):
            return NotImplemented
        same_fp = (self.fingerprint['config_hash'] ==
                   other.fingerprint['config_hash'] and
                   self.fingerprint['epoch'] == other.fingerprint['epoch'] and
                   np.array_equal(self.fingerprint['val_loss'],
                                  other.fingerprint['val_loss'],
                                  equal_nan=True))
        return (self.arch == other.arch and same_fp and
                self.input_scale == other.input_scale and
                np.array_equal(self.state_vector(), other.state_vector()))

    __hash__ = None


def infer_noise(m, s):
    """Estimate the noise component of a sinogram.

    The sinogram is multiplied by ``m.input_scale``, passed through the
    network with frozen normalization statistics and divided by the scale
    again.

    Parameters
    ----------
    m : `DenoiserModel`
        Trained model.

    s : `~oadenoise.core.Sinogram`
        Noisy sinogram; both dimensions divisible by ``2**levels``.

    Returns
    -------
    noise : `~oadenoise.core.Sinogram`
        Same shape and metadata as ``s``.

    Raises
    ------
    ShapeMismatchError
        Dimensions not divisible by ``2**levels``.

    """
    return m.infer_noise(s)


def denoise(m, s):
    """``s`` minus its inferred noise.

    The difference is formed in ``float64``, so for ``float32`` inputs
    adding the inferred noise back reproduces ``s`` exactly.

    """
    noise = infer_noise(m, s)
    clean = (np.asarray(s.data, dtype=np.float64) -
             np.asarray(noise.data, dtype=np.float64))
    return s.with_data(clean)


def save_model(m, path):
    """Write a model in OAML format.

    The header stores the architecture, input scale and training
    fingerprint; the payload is every parameter and normalization
    statistic as little-endian ``f32`` in canonical order.

    """
    arch = m.arch
    config_hash = m.fingerprint['config_hash'].encode('ascii')
    if len(config_hash) > 64:
        raise ValueError('config hash longer than 64 characters')
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, _MODEL_VERSION, arch.levels, arch.base_channels,
        arch.in_channels, arch.kernel_size, m.input_scale, arch.bn_momentum,
        arch.bn_eps, config_hash, int(m.fingerprint['epoch']),
        float(m.fingerprint['val_loss']), arch.n_values())
    payload = m.state_vector().astype('<f4').tobytes()
    with open(path, 'wb') as fout:
        fout.write(header + payload)


def load_model(path):
    """Read an OAML model file.

    Returns
    -------
    model : `DenoiserModel`
        ``float32`` model.

    Raises
    ------
    DataFormatError
        Bad magic, truncated payload, non-finite weights, or a stored
        value count that does not match the stored architecture.

    """
    with open(path, 'rb') as fin:
        blob = fin.read()
    if blob[:4] != MODEL_MAGIC:
        raise DataFormatError(f'{path}: expected magic {MODEL_MAGIC!r}, '
                              f'got {blob[:4]!r}')
    if len(blob) < _MODEL_HEADER.size:
        raise DataFormatError(f'{path}: truncated header')
    (_, version, levels, base, in_ch, kernel, input_scale, momentum, eps,
     config_hash, epoch, val_loss, n_values) = _MODEL_HEADER.unpack_from(blob)
    if version != _MODEL_VERSION:
        raise DataFormatError(f'{path}: unsupported version {version}')
    arch = DenoiserArch(levels, base, in_ch, kernel, momentum, eps)
    if n_values != arch.n_values():
        raise DataFormatError(
            f'{path}: weight count mismatch, architecture needs '
            f'{arch.n_values()} values but file declares {n_values}')
    expected = _MODEL_HEADER.size + 4 * n_values
    if len(blob) != expected:
        raise DataFormatError(f'{path}: expected {expected} bytes, '
                              f'got {len(blob)}')
    values = np.frombuffer(blob, dtype='<f4', offset=_MODEL_HEADER.size)
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f'{path}: weights contain NaN or Inf')
    model = DenoiserModel(arch, input_scale=input_scale)
    model.load_state_vector(values)
    model.fingerprint = {'config_hash': config_hash.rstrip(b'\0').decode(),
                         'epoch': epoch, 'val_loss': val_loss}
    log.debug('Loaded %r from %s', arch, path)
    return model
