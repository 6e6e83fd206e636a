"""Constants and units for optoacoustic denoising."""

import numpy as np
import astropy.units as u

__all__ = ['speed_of_sound', 'msot_radius', 'msot_coverage',
           'msot_sample_rate', 'msot_n_transducers', 'msot_n_samples',
           'msot_fov', 'msot_grid_size', 'msot_defective_channel',
           'desk_radius', 'desk_fov', 'band_low', 'band_high',
           'input_scale', 'noise_floor_window', 'snr_mean_crop',
           'full_wavelengths', 'nmf_components', 'nmf_lambda',
           'depth_step', 'depth_smooth_halfwidth', 'depth_max']

# Acoustics. The speed of sound is not given by the scanner documentation;
# water at body temperature is close enough for a homogeneous model.

speed_of_sound = 1500 * u.m / u.s
"""Default homogeneous speed of sound"""

# Handheld scanner geometry

msot_radius = 6 * u.cm
"""Radius of the transducer arc"""

msot_coverage = 145 * u.deg
"""Angular coverage of the transducer arc"""

msot_sample_rate = 40 * u.MHz
"""DAQ sampling rate"""

msot_n_transducers = 256
"""Number of piezoelectric transducers"""

msot_n_samples = 1808
"""Time samples per transducer after cropping"""

msot_fov = 3.99 * u.cm
"""Side length of the reconstructed field of view"""

msot_grid_size = 400
"""Pixels per side of the reconstructed image"""

msot_defective_channel = 61
"""Defective detector, 1-based"""

# Desk-scale geometry: arcs of all 256 samples cover the grid with no
# acquisition delay.

desk_radius = 4.8 * u.mm
"""Radius of the desk-scale transducer arc"""

desk_fov = 4.8 * u.mm
"""Side length of the desk-scale field of view"""

# Preprocessing

band_low = 500 * u.kHz
"""Lower band-pass cutoff"""

band_high = 10 * u.MHz
"""Upper band-pass cutoff"""

input_scale = 0.004
"""Amplitude factor applied to network inputs"""

# Evaluation

noise_floor_window = 100
"""Leading samples that only contain coupling-medium noise"""

snr_mean_crop = 1732
"""Samples kept before evaluating SNR_mean"""

full_wavelengths = np.arange(700, 971, 10) * u.nm
"""Wavelengths of a full multispectral stack"""

nmf_components = 10
"""Number of spectral components in blind unmixing"""

nmf_lambda = 50.1
"""L1 and Frobenius regularization weight for unmixing"""

depth_step = 0.1 * u.mm
"""Depth bin width for relative contributions"""

depth_smooth_halfwidth = 0.8 * u.mm
"""Half-width of the moving average over depth bins"""

depth_max = 35 * u.mm
"""Deepest depth bin"""
