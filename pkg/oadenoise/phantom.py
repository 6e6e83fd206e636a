# -*- coding: utf-8 -*-
"""Synthetic numerical phantoms and chromophore spectra.

Vessel phantoms carry ground-truth vessel and background masks, so
contrast resolution and unmixing can be evaluated without manual
segmentation. Their multispectral initial pressure is the chromophore
absorption weighted by a depth- and wavelength-dependent fluence, which
reproduces spectral colouring.

The spectra are smooth synthetic curves with the qualitative shape of
oxygenated and deoxygenated haemoglobin and lipid in the near infrared;
they are not tabulated absorption coefficients.

"""
import logging

import numpy as np
from scipy import ndimage

from oadenoise.core import ImageGrid, MultispectralStack, seeded_rng
from oadenoise.metrics import RoiMask

__all__ = ['synthetic_hbo2', 'synthetic_hb', 'synthetic_lipid',
           'reference_spectra', 'fluence', 'VesselPhantom',
           'make_vessel_phantom', 'feature_images']

log = logging.getLogger(__name__)


def synthetic_hbo2(wavelength_nm):
    """Oxygenated-haemoglobin-like spectrum rising toward 900 nm."""
    wl = np.asarray(wavelength_nm, dtype=float)
    return 0.25 + 0.9 / (1 + np.exp(-(wl - 820) / 35))


def synthetic_hb(wavelength_nm):
    """Deoxygenated-haemoglobin-like spectrum with a peak near 760 nm."""
    wl = np.asarray(wavelength_nm, dtype=float)
    return (0.35 + 0.8 * np.exp(-((wl - 757) / 22)**2) +
            0.6 * np.exp(-(wl - 700) / 60))


def synthetic_lipid(wavelength_nm):
    """Lipid-like spectrum dominated by a band near 930 nm."""
    wl = np.asarray(wavelength_nm, dtype=float)
    return 0.08 + np.exp(-((wl - 930) / 18)**2)


def reference_spectra(wavelength_nm):
    """Synthetic reference spectra keyed by chromophore name."""
    return {'HbO2': synthetic_hbo2(wavelength_nm),
            'Hb': synthetic_hb(wavelength_nm),
            'lipid': synthetic_lipid(wavelength_nm)}


def fluence(depth_m, wavelength_nm, mu_eff_800=150.0):
    """Relative light fluence ``exp(-mu_eff(wl) * depth)``.

    ``mu_eff`` (1/m) falls with wavelength as ``mu_eff_800 * 800 / wl``, so
    deeper tissue appears redder.

    """
    mu_eff = mu_eff_800 * 800.0 / np.asarray(wavelength_nm, dtype=float)
    return np.exp(-mu_eff * np.asarray(depth_m, dtype=float))


class VesselPhantom:
    """Chromophore maps with ground-truth regions.

    Attributes
    ----------
    concentrations : dict
        Chromophore name to ``(n_y, n_x)`` concentration map.

    vessel_mask, background_mask : ndarray of bool
        Disjoint ground-truth regions.

    extent_m : float
        Physical side length.

    """

    def __init__(self, concentrations, vessel_mask, background_mask,
                 extent_m):
        self.concentrations = concentrations
        self.vessel_mask = vessel_mask
        self.background_mask = background_mask
        self.extent_m = float(extent_m)

    @property
    def shape(self):
        return self.vessel_mask.shape

    def depths_m(self):
        """Per-pixel distance from the top (transducer side) row."""
        pixel = self.extent_m / self.shape[1]
        return np.repeat(np.arange(self.shape[0])[:, None] * pixel,
                         self.shape[1], axis=1)

    def absorption(self, wavelength_nm):
        spectra = reference_spectra(wavelength_nm)
        return sum(conc * spectra[name]
                   for name, conc in self.concentrations.items())

    def initial_pressure(self, wavelength_nm, with_fluence=True):
        """Initial pressure image at one wavelength."""
        p0 = self.absorption(wavelength_nm)
        if with_fluence:
            p0 = p0 * fluence(self.depths_m(), wavelength_nm)
        return ImageGrid(p0, self.extent_m)

    def multispectral(self, wavelengths_nm, with_fluence=True):
        """`~oadenoise.core.MultispectralStack` of initial pressures."""
        return MultispectralStack(
            [(wl, self.initial_pressure(wl, with_fluence))
             for wl in wavelengths_nm])

    def roi_masks(self):
        """``(vessels, background)`` as `~oadenoise.metrics.RoiMask`."""
        return (RoiMask(self.vessel_mask, 'vessel'),
                RoiMask(self.background_mask, 'background'))


def make_vessel_phantom(shape, extent_m, seed, label='phantom',
                        n_vessels=(3, 6), radius_px=(2.0, 5.0)):
    """Random vessel cross-sections in lipid-rich background tissue.

    Vessels are discs of blood with random oxygen saturation in
    ``[0.6, 1.0]``; the background is a smooth low-level lipid field with
    a trace of blood. The background mask keeps a margin of three pixels
    around every vessel and around the image border.

    """
    rng = seeded_rng(seed, label)
    n_y, n_x = shape
    yy, xx = np.indices(shape)
    vessels = np.zeros(shape, dtype=bool)
    hbo2 = np.zeros(shape)
    hb = np.zeros(shape)
    count = int(rng.integers(n_vessels[0], n_vessels[1] + 1))
    for _ in range(count):
        r = rng.uniform(*radius_px)
        cy = rng.uniform(0.15 * n_y, 0.85 * n_y)
        cx = rng.uniform(0.15 * n_x, 0.85 * n_x)
        disc = (yy - cy)**2 + (xx - cx)**2 <= r * r
        so2 = rng.uniform(0.6, 1.0)
        hbo2[disc] = so2
        hb[disc] = 1 - so2
        vessels |= disc
    lipid = ndimage.gaussian_filter(rng.random(shape), sigma=max(shape) / 16)
    lipid = 0.1 + 0.2 * (lipid - lipid.min()) / max(np.ptp(lipid), 1e-12)
    lipid[vessels] = 0
    hbo2[~vessels] = 0.03
    hb[~vessels] = 0.02

    margin = 3
    background = ~ndimage.binary_dilation(vessels, iterations=margin)
    border = np.zeros(shape, dtype=bool)
    border[margin:-margin, margin:-margin] = True
    background &= border
    log.debug('Phantom %s: %d vessels, %d vessel px, %d background px',
              label, count, vessels.sum(), background.sum())
    return VesselPhantom({'HbO2': hbo2, 'Hb': hb, 'lipid': lipid}, vessels,
                         background, extent_m)


def feature_images(count, shape, seed, label='features'):
    """Random grayscale feature images for training-corpus simulation.

    Each image mixes smoothed random blobs with a few thin line segments,
    giving both extended structures and sharp edges.

    """
    images = []
    n_y, n_x = shape
    yy, xx = np.indices(shape)
    for i in range(count):
        rng = seeded_rng(seed, f'{label}/{i}')
        blobs = ndimage.gaussian_filter(rng.random(shape),
                                        sigma=rng.uniform(2, 6))
        image = np.clip((blobs - blobs.mean()) / max(blobs.std(), 1e-12),
                        0, None)
        for _ in range(int(rng.integers(1, 5))):
            y0, y1 = rng.uniform(0, n_y, 2)
            x0, x1 = rng.uniform(0, n_x, 2)
            width = rng.uniform(0.5, 2.0)
            dy, dx = y1 - y0, x1 - x0
            length2 = max(dy * dy + dx * dx, 1e-12)
            u = np.clip(((yy - y0) * dy + (xx - x0) * dx) / length2, 0, 1)
            dist = np.hypot(yy - (y0 + u * dy), xx - (x0 + u * dx))
            image = np.maximum(image, (dist <= width) * rng.uniform(1, 3))
        images.append(image)
    return images
