# -*- coding: utf-8 -*-
"""Quantitative evaluation of denoising and reconstruction.

Functions here implement sinogram power, the signal-to-noise ratio with
known ground-truth noise, the in-vivo style mean SNR with a noise floor
estimated from the pre-tissue samples, and the contrast resolution of
vessel and background regions.

Zero denominators give a ``+inf`` sentinel; use :func:`finite_mean` to
average such values while counting the excluded ones.

Examples
--------

>>> import numpy as np
>>> from oadenoise.core import Sinogram
>>> from oadenoise.metrics import ChannelMask, power
>>> s = Sinogram([[1., 1.], [3., 3.]], 4e7)
>>> power(s, ChannelMask.excluding(2, [1]))
1.0

"""
import logging

import numpy as np

from oadenoise import const

__all__ = ['ChannelMask', 'RoiMask', 'power', 'snr', 'finite_mean',
           'estimate_noise_floor', 'snr_mean', 'contrast_resolution']

log = logging.getLogger(__name__)

_MODES = ('whole', 'time', 'transducer')


class ChannelMask:
    """Per-transducer inclusion flags.

    Parameters
    ----------
    included : array_like of bool
        `True` for channels that enter the metrics.

    Raises
    ------
    ValueError
        No channel is included.

    """

    def __init__(self, included):
        included = np.asarray(included, dtype=bool)
        if included.ndim != 1 or not included.any():
            raise ValueError('ChannelMask must include at least one channel')
        self.included = included

    @classmethod
    def all(cls, n_transducers):
        return cls(np.ones(n_transducers, dtype=bool))

    @classmethod
    def excluding(cls, n_transducers, channels):
        """Mask with the given 0-based channels excluded."""
        included = np.ones(n_transducers, dtype=bool)
        for c in channels:
            if not 0 <= c < n_transducers:
                raise ValueError(f'Channel {c} out of range for '
                                 f'{n_transducers} transducers')
            included[c] = False
        return cls(included)

    @property
    def indices(self):
        return np.nonzero(self.included)[0]

    def check(self, n_transducers):
        if self.included.size != n_transducers:
            raise ValueError(f'ChannelMask has {self.included.size} channels, '
                             f'sinogram has {n_transducers}')


class RoiMask:
    """Region of interest on an image.

    Parameters
    ----------
    mask : array_like of bool
        Nonempty pixel mask.

    label : {'vessel', 'background'}
        Region type.

    """

    def __init__(self, mask, label):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ValueError('RoiMask must be a nonempty 2D mask')
        if label not in ('vessel', 'background'):
            raise ValueError(f'Unknown ROI label {label!r}')
        self.mask = mask
        self.label = label

    def mean(self, image):
        pixels = getattr(image, 'pixels', image)
        if pixels.shape != self.mask.shape:
            raise ValueError(f'ROI shape {self.mask.shape} does not match '
                             f'image shape {pixels.shape}')
        return float(np.mean(pixels[self.mask]))


def _samples(s, mask=None):
    data = np.asarray(getattr(s, 'data', s), dtype=np.float64)
    if mask is not None:
        mask.check(data.shape[0])
        data = data[mask.included]
    return data


def power(s, mask=None):
    """Mean squared sample over included channels and all times."""
    return float(np.mean(_samples(s, mask)**2))


def _db(num, den):
    """``10 log10(num / den)`` with +inf for zero denominators."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, np.inf)
    ok = den > 0
    pos = ok & (num > 0)
    out[ok & ~pos] = -np.inf
    out[pos] = 10 * np.log10(np.broadcast_to(num, out.shape)[pos] /
                             np.broadcast_to(den, out.shape)[pos])
    return out if out.ndim else float(out)


def snr(s, s_noise, s_noise_hat=None, mask=None):
    """Signal-to-noise ratio after denoising, in dB.

    ``10 log10(P(s - s_noise) / P(s_noise - s_noise_hat))``; with
    ``s_noise_hat`` `None` (zero) this is the SNR before denoising.

    Returns
    -------
    value : float
        ``+inf`` if the residual noise is exactly zero.

    """
    data = _samples(s)
    noise = _samples(s_noise)
    hat = np.zeros_like(noise) if s_noise_hat is None else _samples(
        s_noise_hat)
    if not data.shape == noise.shape == hat.shape:
        raise ValueError('snr inputs must share one shape')
    return _db(power(data - noise, mask), power(noise - hat, mask))


def finite_mean(values):
    """Mean of finite values and the number of excluded entries."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    n_excluded = int(values.size - finite.sum())
    if not finite.any():
        return float('nan'), n_excluded
    return float(values[finite].mean()), n_excluded


def estimate_noise_floor(stack, window_samples=const.noise_floor_window):
    """Mean absolute amplitude of the first samples, per transducer.

    The first ``window_samples`` samples precede any tissue signal, so
    their mean absolute value over all scans estimates the noise floor,
    which is taken as constant in time.

    Parameters
    ----------
    stack : list of `~oadenoise.core.Sinogram`
        Scans of one shape.

    window_samples : int
        Samples at the start of each sinogram.

    Returns
    -------
    floor : ndarray
        One value per transducer; broadcast with ``floor[:, None]``.

    Raises
    ------
    ValueError
        Empty stack or window longer than the sinograms.

    """
    if len(stack) == 0:
        raise ValueError('Noise floor needs at least one sinogram')
    n_samples = stack[0].shape[1]
    if not 1 <= window_samples <= n_samples:
        raise ValueError(f'window_samples must be in [1, {n_samples}], '
                         f'got {window_samples}')
    window = np.stack([np.abs(_samples(s)[:, :window_samples])
                       for s in stack])
    return window.mean(axis=(0, 2))


def snr_mean(stack, inferred_noise=None,
             window_samples=const.noise_floor_window,
             crop_samples=const.snr_mean_crop, mask=None, per='whole'):
    """Mean SNR of scans without ground-truth noise, in dB.

    With ``<.>`` the per-sample mean over scans, the ratio is
    ``P(<|s|> - <|s_noise|>) / P(<|s_noise|> - <|s'_noise|>)`` where
    ``<|s_noise|>`` is the noise floor and ``s'_noise`` the noise removed
    by the denoiser (zero before denoising).

    Parameters
    ----------
    stack : list of `~oadenoise.core.Sinogram`
        Noisy scans.

    inferred_noise : list of `~oadenoise.core.Sinogram` or `None`
        Denoiser outputs aligned with ``stack``.

    window_samples : int
        Noise-floor window.

    crop_samples : int or `None`
        Only the first ``crop_samples`` samples enter the powers.

    mask : `ChannelMask` or `None`
        Channels to include.

    per : {'whole', 'time', 'transducer'}
        Average over everything, per time sample (one value per sample) or
        per transducer (one value per included channel).

    Returns
    -------
    value : float or ndarray

    """
    if per not in _MODES:
        raise ValueError(f'per must be one of {_MODES}, got {per!r}')
    floor = estimate_noise_floor(stack, window_samples)[:, None]
    n_samples = stack[0].shape[1]
    crop = n_samples if crop_samples is None else int(crop_samples)
    if not 1 <= crop <= n_samples:
        raise ValueError(f'crop_samples must be in [1, {n_samples}], '
                         f'got {crop}')
    mean_abs = np.mean([np.abs(_samples(s)) for s in stack], axis=0)
    if inferred_noise is None:
        mean_hat = np.zeros_like(mean_abs)
    else:
        if len(inferred_noise) != len(stack):
            raise ValueError('inferred_noise must align with stack')
        mean_hat = np.mean([np.abs(_samples(s)) for s in inferred_noise],
                           axis=0)
    num = ((mean_abs - floor)**2)[:, :crop]
    den = ((floor - mean_hat)**2)[:, :crop]
    if mask is not None:
        mask.check(num.shape[0])
        num = num[mask.included]
        den = den[mask.included]
    if per == 'whole':
        return _db(num.mean(), den.mean())
    axis = 0 if per == 'time' else 1
    return _db(num.mean(axis=axis), den.mean(axis=axis))


def contrast_resolution(img, vessels, background):
    """``(I_v - I_b) / (I_v + I_b)`` of mean ROI intensities.

    Returns
    -------
    cr : float
        NaN if ``I_v + I_b`` is zero.

    Raises
    ------
    ValueError
        Masks overlap or do not match the image.

    """
    if np.any(vessels.mask & background.mask):
        raise ValueError('Vessel and background masks must be disjoint')
    i_v = vessels.mean(img)
    i_b = background.mean(img)
    total = i_v + i_b
    if total == 0:
        return float('nan')
    return (i_v - i_b) / total
