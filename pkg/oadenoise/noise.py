# -*- coding: utf-8 -*-
"""Electrical noise generators and loaders.

The acquisition noise is modelled as the sum of white Gaussian thermal
noise and parasitic interference: bursts of damped sinusoids that appear
on a contiguous block of channels with a small per-channel onset delay,
which produces the streaks seen in raw sinograms.

Generators never see the optoacoustic signal; a noisy sinogram is formed
with :func:`compose_noisy`.

Examples
--------

>>> from oadenoise.noise import ThermalNoiseSpec, gen_thermal
>>> n = gen_thermal(ThermalNoiseSpec(sigma=0.25), (4, 32), seed=1,
...                 sample_rate_hz=4e7)
>>> n.shape
(4, 32)

"""
import glob
import logging
import os
import warnings

import numpy as np

from oadenoise.core import Sinogram, seeded_rng
from oadenoise.exceptions import OptoacousticWarning, ShapeMismatchError
from oadenoise.fileio import read_sinogram

__all__ = ['ThermalNoiseSpec', 'ParasiticNoiseSpec', 'gen_thermal',
           'gen_parasitic', 'compose_noisy', 'load_noise_corpus',
           'NoiseSource', 'SyntheticNoiseSource', 'GaussianSweepNoiseSource',
           'CorpusNoiseSource']

log = logging.getLogger(__name__)


class ThermalNoiseSpec:
    """White Gaussian noise with standard deviation ``sigma``."""

    def __init__(self, sigma=0.25):
        if not sigma >= 0:
            raise ValueError(f'sigma must be nonnegative, got {sigma}')
        self.sigma = float(sigma)

    def __repr__(self):
        return f'ThermalNoiseSpec(sigma={self.sigma!r})'


class ParasiticNoiseSpec:
    """Parameters of damped-sinusoid interference bursts.

    Every range is an inclusive ``(low, high)`` pair sampled uniformly
    (integers for block size and delay).

    Parameters
    ----------
    burst_rate : float
        Mean number of bursts per sinogram.

    burst_distribution : {'poisson', 'fixed'}
        ``'fixed'`` draws exactly ``round(burst_rate)`` bursts.

    carrier_freq_range_hz : tuple of float
        Burst carrier frequency.

    decay_time_range_s : tuple of float
        Exponential decay time of the envelope.

    amplitude_range : tuple of float
        Peak amplitude; the sign is random.

    block_size_range : tuple of int
        Number of adjacent channels sharing one burst.

    delay_range_samples : tuple of int
        Onset delay between neighbouring channels of a block.

    channel_gain_range : tuple of float
        Per-channel gain applied on top of the burst amplitude.

    """
    _ranges = ('carrier_freq_range_hz', 'decay_time_range_s',
               'amplitude_range', 'block_size_range', 'delay_range_samples',
               'channel_gain_range')

    def __init__(self, burst_rate=3.0, burst_distribution='poisson',
                 carrier_freq_range_hz=(1e6, 5e6),
                 decay_time_range_s=(0.5e-6, 5e-6), amplitude_range=(0.5, 2.0),
                 block_size_range=(4, 16), delay_range_samples=(0, 1),
                 channel_gain_range=(0.8, 1.2)):
        self.burst_rate = float(burst_rate)
        self.burst_distribution = burst_distribution
        self.carrier_freq_range_hz = tuple(map(float, carrier_freq_range_hz))
        self.decay_time_range_s = tuple(map(float, decay_time_range_s))
        self.amplitude_range = tuple(map(float, amplitude_range))
        self.block_size_range = tuple(map(int, block_size_range))
        self.delay_range_samples = tuple(map(int, delay_range_samples))
        self.channel_gain_range = tuple(map(float, channel_gain_range))
        self.validate()

    def validate(self, sample_rate_hz=None):
        """Check that all ranges are nonempty and physical.

        Parameters
        ----------
        sample_rate_hz : float or `None`
            When given, carriers must lie below the Nyquist frequency.

        Raises
        ------
        ValueError
            Validation failed.

        """
        err_msgs = []
        if self.burst_rate < 0:
            err_msgs.append(f'burst_rate must be >= 0, got {self.burst_rate}')
        if self.burst_distribution not in ('poisson', 'fixed'):
            err_msgs.append(f'unknown burst_distribution '
                            f'{self.burst_distribution!r}')
        for name in self._ranges:
            lo, hi = getattr(self, name)
            if lo > hi:
                err_msgs.append(f'{name} is empty: {(lo, hi)}')
            if lo < 0:
                err_msgs.append(f'{name} must be nonnegative: {(lo, hi)}')
        if self.carrier_freq_range_hz[0] <= 0:
            err_msgs.append('carrier frequencies must be positive')
        if self.decay_time_range_s[0] <= 0:
            err_msgs.append('decay times must be positive')
        if self.block_size_range[0] < 1:
            err_msgs.append('block sizes must be >= 1')
        if (sample_rate_hz is not None and
                self.carrier_freq_range_hz[1] >= sample_rate_hz / 2):
            err_msgs.append(f'carrier {self.carrier_freq_range_hz[1]} Hz is '
                            f'not below Nyquist ({sample_rate_hz / 2} Hz)')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True


def _check_shape(shape):
    shape = tuple(int(v) for v in shape)
    if len(shape) != 2 or min(shape) < 1:
        raise ValueError(f'Noise shape must be two positive ints, got {shape}')
    return shape


def _thermal_samples(sigma, shape, rng):
    return sigma * rng.standard_normal(shape)


def _parasitic_samples(spec, shape, rng, sample_rate_hz):
    n_d, n_t = shape
    out = np.zeros(shape)
    if spec.burst_distribution == 'fixed':
        n_bursts = int(round(spec.burst_rate))
    else:
        n_bursts = int(rng.poisson(spec.burst_rate))
    t = np.arange(n_t)
    for _ in range(n_bursts):
        onset = int(rng.integers(n_t))
        freq = rng.uniform(*spec.carrier_freq_range_hz)
        decay = rng.uniform(*spec.decay_time_range_s) * sample_rate_hz
        amp = rng.uniform(*spec.amplitude_range) * rng.choice([-1.0, 1.0])
        phase = rng.uniform(0, 2 * np.pi)
        block = min(n_d, int(rng.integers(spec.block_size_range[0],
                                          spec.block_size_range[1] + 1)))
        first = int(rng.integers(n_d - block + 1))
        delay = int(rng.integers(spec.delay_range_samples[0],
                                 spec.delay_range_samples[1] + 1))
        gains = rng.uniform(*spec.channel_gain_range, size=block)
        for m in range(block):
            lag = t - (onset + m * delay)
            active = lag >= 0
            out[first + m, active] += (
                amp * gains[m] * np.exp(-lag[active] / decay) *
                np.sin(2 * np.pi * freq * lag[active] / sample_rate_hz +
                       phase))
    return out


def gen_thermal(spec, shape, seed, sample_rate_hz, label='thermal'):
    """White Gaussian noise sinogram.

    Parameters
    ----------
    spec : `ThermalNoiseSpec`
        Noise level.

    shape : tuple of int
        ``(n_transducers, n_samples)``.

    seed : int
        Random seed.

    sample_rate_hz : float
        Attached to the result.

    label : str
        Stream label; use distinct labels for independent realizations.

    Returns
    -------
    noise : `~oadenoise.core.Sinogram`

    """
    shape = _check_shape(shape)
    rng = seeded_rng(seed, label)
    return Sinogram(_thermal_samples(spec.sigma, shape, rng), sample_rate_hz)


def gen_parasitic(spec, shape, seed, sample_rate_hz, label='parasitic'):
    """Sum of damped-sinusoid bursts replicated over channel blocks.

    Each burst has a random onset, carrier, decay, amplitude and phase; it
    is copied onto a contiguous block of channels, each with its own gain
    and an onset delayed by a fixed number of samples per channel.

    Parameters are as for :func:`gen_thermal`.

    """
    shape = _check_shape(shape)
    spec.validate(sample_rate_hz)
    rng = seeded_rng(seed, label)
    return Sinogram(_parasitic_samples(spec, shape, rng, sample_rate_hz),
                    sample_rate_hz)


def compose_noisy(s_oa, n_th, n_par):
    """Additive composition ``s = s_oa + n_th + n_par``.

    All components are first quantized to the ``float32`` storage precision
    and summed in ``float64``, so ``noisy - noise`` gives back ``s_oa`` for
    components of comparable magnitude.

    Returns
    -------
    noisy : `~oadenoise.core.Sinogram`
        Composed sinogram with the metadata of ``s_oa``.

    noise : `~oadenoise.core.Sinogram`
        Ground-truth noise ``n_th + n_par``.

    Raises
    ------
    ShapeMismatchError
        Components differ in shape.

    """
    s_oa.check_same_shape(n_th, 'thermal noise')
    s_oa.check_same_shape(n_par, 'parasitic noise')
    noise = (n_th.data.astype(np.float32).astype(np.float64) +
             n_par.data.astype(np.float32).astype(np.float64))
    noisy = s_oa.data.astype(np.float32).astype(np.float64) + noise
    return s_oa.with_data(noisy), s_oa.with_data(noise)


def load_noise_corpus(directory):
    """Load externally measured pure-noise sinograms.

    Parameters
    ----------
    directory : str or path-like
        Directory of ``*.oasg`` files, read in sorted order.

    Returns
    -------
    corpus : list of `~oadenoise.core.Sinogram`

    Raises
    ------
    NonFiniteDataError
        A file contains NaN or Inf; the message names the file.

    ShapeMismatchError
        Files disagree in shape; offenders are listed.

    """
    paths = sorted(glob.glob(os.path.join(directory, '*.oasg')))
    if not paths:
        warnings.warn(f'No noise sinograms found in {directory}',
                      OptoacousticWarning)
        return []
    corpus = [read_sinogram(path) for path in paths]
    shapes = [s.shape for s in corpus]
    reference = max(set(shapes), key=shapes.count)
    offenders = [f'{os.path.basename(p)} {s}'
                 for p, s in zip(paths, shapes) if s != reference]
    if offenders:
        raise ShapeMismatchError(
            f'Noise sinograms must share shape {reference}; offenders: '
            f'{", ".join(offenders)}')
    log.info('Loaded %d noise sinograms of shape %s', len(corpus), reference)
    return corpus


class NoiseSource:
    """Draws independent noise realizations for training.

    Subclasses implement ``draw(rng, shape)`` returning a float array.
    """

    def draw(self, rng, shape):
        raise NotImplementedError


class SyntheticNoiseSource(NoiseSource):
    """Thermal plus parasitic noise."""

    def __init__(self, thermal, parasitic, sample_rate_hz):
        parasitic.validate(sample_rate_hz)
        self.thermal = thermal
        self.parasitic = parasitic
        self.sample_rate_hz = float(sample_rate_hz)

    def draw(self, rng, shape):
        shape = _check_shape(shape)
        return (_thermal_samples(self.thermal.sigma, shape, rng) +
                _parasitic_samples(self.parasitic, shape, rng,
                                   self.sample_rate_hz))


class GaussianSweepNoiseSource(NoiseSource):
    """White Gaussian noise whose sigma is drawn from ``(0, sigma_max]``."""

    def __init__(self, sigma_max=0.5):
        if not sigma_max > 0:
            raise ValueError(f'sigma_max must be positive, got {sigma_max}')
        self.sigma_max = float(sigma_max)

    def draw(self, rng, shape):
        shape = _check_shape(shape)
        sigma = self.sigma_max * (1.0 - rng.random())
        return _thermal_samples(sigma, shape, rng)


class CorpusNoiseSource(NoiseSource):
    """Random picks from a measured noise corpus."""

    def __init__(self, corpus):
        if not corpus:
            raise ValueError('Noise corpus is empty')
        self.corpus = list(corpus)

    def draw(self, rng, shape):
        item = self.corpus[int(rng.integers(len(self.corpus)))]
        if item.shape != tuple(shape):
            raise ShapeMismatchError(f'Noise corpus has shape {item.shape}, '
                                     f'requested {tuple(shape)}')
        return np.array(item.data, dtype=np.float64)
