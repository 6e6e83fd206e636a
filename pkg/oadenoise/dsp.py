# -*- coding: utf-8 -*-
"""Sinogram preprocessing: band-pass filtering, cropping and scaling.

Examples
--------

>>> import numpy as np
>>> from oadenoise.core import Sinogram
>>> from oadenoise.dsp import BandpassSpec, bandpass, crop_time
>>> s = Sinogram(np.ones((2, 1816)), 4e7)
>>> crop_time(s, 1808).n_samples
1808
>>> bool(np.abs(bandpass(s, BandpassSpec()).data).max() < 0.01)
True

"""
import logging
import os

import numpy as np
from scipy import signal

from oadenoise import const

__all__ = ['BandpassSpec', 'bandpass', 'frequency_response',
           'transient_length', 'crop_time', 'crop_bounds', 'scale', 'unscale']

log = logging.getLogger(__name__)


class BandpassSpec:
    """Butterworth band-pass filter description.

    Parameters
    ----------
    low_cut_hz, high_cut_hz : float
        Band edges.

    order : int
        Butterworth order per band edge.

    zero_phase : bool
        Apply forward and backward so that no group delay is introduced.

    """

    def __init__(self, low_cut_hz=const.band_low.to_value('Hz'),
                 high_cut_hz=const.band_high.to_value('Hz'), order=3,
                 zero_phase=True):
        self.low_cut_hz = float(low_cut_hz)
        self.high_cut_hz = float(high_cut_hz)
        self.order = int(order)
        self.zero_phase = bool(zero_phase)

    def validate(self, sample_rate_hz):
        """Check the band against the Nyquist frequency.

        Raises
        ------
        ValueError
            Band is empty or not below Nyquist.

        """
        err_msgs = []
        nyquist = sample_rate_hz / 2
        if not 0 < self.low_cut_hz < self.high_cut_hz:
            err_msgs.append(f'need 0 < low_cut < high_cut, got '
                            f'{self.low_cut_hz} and {self.high_cut_hz}')
        if self.high_cut_hz >= nyquist:
            err_msgs.append(f'high_cut {self.high_cut_hz} Hz is not below '
                            f'Nyquist ({nyquist} Hz)')
        if self.order < 1:
            err_msgs.append(f'order must be >= 1, got {self.order}')
        if err_msgs:
            raise ValueError(f'Validation failed:{os.linesep}'
                             f'{os.linesep.join(err_msgs)}')
        return True

    def sos(self, sample_rate_hz):
        """Second-order sections of the designed filter."""
        self.validate(sample_rate_hz)
        return signal.butter(self.order, [self.low_cut_hz, self.high_cut_hz],
                             btype='bandpass', fs=sample_rate_hz,
                             output='sos')

    def __repr__(self):
        return (f'BandpassSpec(low_cut_hz={self.low_cut_hz!r}, '
                f'high_cut_hz={self.high_cut_hz!r}, order={self.order}, '
                f'zero_phase={self.zero_phase})')


def _filter_array(data, spec, sample_rate_hz):
    sos = spec.sos(sample_rate_hz)
    data = np.asarray(data, dtype=np.float64)
    if not spec.zero_phase:
        return signal.sosfilt(sos, data, axis=-1)
    padlen = min(3 * spec.order, data.shape[-1] - 1)
    return signal.sosfiltfilt(sos, data, axis=-1, padtype='even',
                              padlen=padlen)


def bandpass(s, spec):
    """Filter every channel of a sinogram independently.

    Zero-phase filtering runs the cascade forward and backward after even
    (reflective) padding of ``3 * order`` samples at both ends.

    Parameters
    ----------
    s : `~oadenoise.core.Sinogram`
        Input.

    spec : `BandpassSpec`
        Filter.

    Returns
    -------
    filtered : `~oadenoise.core.Sinogram`
        Same shape and metadata.

    Raises
    ------
    ValueError
        The band does not fit below Nyquist.

    """
    return s.with_data(_filter_array(s.data, spec, s.sample_rate_hz))


def frequency_response(spec, sample_rate_hz, freqs_hz):
    """Magnitude response at ``freqs_hz``.

    For zero-phase filtering this is the squared single-pass magnitude.

    """
    _, h = signal.sosfreqz(spec.sos(sample_rate_hz),
                           worN=np.atleast_1d(freqs_hz), fs=sample_rate_hz)
    gain = np.abs(h)
    return gain**2 if spec.zero_phase else gain


def transient_length(spec, sample_rate_hz, rtol=1e-3, max_samples=100000):
    """Samples until the impulse response falls below ``rtol`` of its peak.

    This bounds the region at each end of a sinogram where filtering and
    cropping do not commute.

    """
    sos = spec.sos(sample_rate_hz)
    impulse = np.zeros(max_samples)
    impulse[0] = 1.0
    response = np.abs(signal.sosfilt(sos, impulse))
    above = np.nonzero(response > rtol * response.max())[0]
    return int(above[-1]) + 1


def crop_bounds(n_samples, target_samples):
    """``(start, stop)`` of a symmetric crop to ``target_samples``.

    The excess is split evenly; an odd extra sample is removed from the end.

    """
    if target_samples % 16 != 0 or target_samples < 16:
        raise ValueError(f'target_samples must be a positive multiple of 16, '
                         f'got {target_samples}')
    if target_samples > n_samples:
        raise ValueError(f'Cannot crop {n_samples} samples to '
                         f'{target_samples}')
    lead = (n_samples - target_samples) // 2
    return lead, lead + target_samples


def crop_time(s, target_samples):
    """Crop the time axis symmetrically to ``target_samples``.

    Raises
    ------
    ValueError
        Target is not a multiple of 16 or exceeds the sample count.

    """
    start, stop = crop_bounds(s.n_samples, target_samples)
    return s.with_data(s.data[:, start:stop])


def scale(s, factor):
    """Multiply all samples by ``factor`` (nonzero)."""
    if factor == 0:
        raise ValueError('Scale factor must be nonzero')
    return s.with_data(np.asarray(s.data, dtype=np.float64) * factor)


def unscale(s, factor):
    """Inverse of :func:`scale`."""
    if factor == 0:
        raise ValueError('Scale factor must be nonzero')
    return s.with_data(np.asarray(s.data, dtype=np.float64) / factor)
