# -*- coding: utf-8 -*-
"""Pipeline configuration.

A pipeline run is described by one INI-style text file with ``key =
value`` entries grouped in sections. Physical values carry units, e.g.
``radius = 4.8 mm``, and are parsed with `astropy.units`. Two profiles
ship with the package: ``desk`` (64 transducers, 128x128 grid, minutes
to hours on a CPU) and ``full`` (the 256-transducer handheld scanner).

Noise levels, amplitudes of parasitic bursts and the Gaussian sweep are
given relative to ``[dataset] signal_peak``, the peak amplitude of the
simulated noise-free sinograms.

Every key has a default; unknown sections or keys are rejected. The
canonical text (all keys, normalized values, fixed order) is hashed and
the hash is recorded in every output manifest.

Examples
--------

>>> from oadenoise.config import PipelineConfig
>>> cfg = PipelineConfig.from_profile('desk', ['training.epochs=2',
...                                          'training.decay_epochs=1'])
>>> cfg.get('training', 'epochs')
2
>>> cfg.geometry().n_transducers
64
>>> len(cfg.hash())
64

"""
import configparser
import hashlib
import logging
import os

import numpy as np
import astropy.units as u
from astropy.utils.data import get_pkg_data_filename

from oadenoise import const
from oadenoise.core import ArrayGeometry
from oadenoise.denoiser import DenoiserArch
from oadenoise.dsp import BandpassSpec, crop_bounds
from oadenoise.exceptions import ConfigError
from oadenoise.forward import ForwardOperator
from oadenoise.metrics import ChannelMask
from oadenoise.noise import ParasiticNoiseSpec, ThermalNoiseSpec
from oadenoise.recon import ReconConfig
from oadenoise.training import TrainConfig
from oadenoise.unmix import NmfConfig

__all__ = ['PipelineConfig', 'parse_override', 'OUTPUT_ENV']

log = logging.getLogger(__name__)

OUTPUT_ENV = 'OADENOISE_OUTPUT'
"""Environment variable overriding ``[pipeline] output``"""

_DESK_WAVELENGTHS = ', '.join(f'{wl} nm' for wl in range(700, 971, 30))
_GN_TEST_SIGMAS = ', '.join(f'{s / 10:.1f}' for s in range(21))

# (kind, default) per key, in canonical order. Kinds: int, float, bool,
# str, ints, floats, choice:<a>|<b>, q:<unit> (quantity), qrange:<unit>
# (two quantities) and qlist:<unit>.
_SCHEMA = {
    'pipeline': {
        'seed': ('int', '0'),
        'output': ('str', 'oadenoise-output'),
        'jobs': ('int', '0'),
    },
    'geometry': {
        'n_transducers': ('int', '64'),
        'radius': ('q:m', str(const.desk_radius)),
        'coverage': ('q:deg', str(const.msot_coverage)),
        'sample_rate': ('q:Hz', str(const.msot_sample_rate)),
        'speed_of_sound': ('q:m / s', str(const.speed_of_sound)),
        'orientation': ('q:deg', '90 deg'),
    },
    'grid': {
        'n_pixels': ('int', '128'),
        'extent': ('q:m', str(const.desk_fov)),
        't_offset': ('int', '0'),
        'oversampling': ('float', '2.0'),
    },
    'dsp': {
        'raw_samples': ('int', '272'),
        'n_samples': ('int', '256'),
        'low_cut': ('q:Hz', str(const.band_low)),
        'high_cut': ('q:Hz', str(const.band_high)),
        'order': ('int', '3'),
        'zero_phase': ('bool', 'true'),
    },
    'thermal': {
        'sigma': ('float', '0.25'),
    },
    'parasitic': {
        'burst_rate': ('float', '3.0'),
        'burst_distribution': ('choice:poisson|fixed', 'poisson'),
        'carrier_freq': ('qrange:Hz', '1 MHz, 5 MHz'),
        'decay_time': ('qrange:s', '0.5 us, 5 us'),
        'amplitude': ('floats', '0.5, 2.0'),
        'block_size': ('ints', '4, 16'),
        'delay': ('ints', '0, 1'),
        'channel_gain': ('floats', '0.8, 1.2'),
    },
    'denoiser': {
        'levels': ('int', '4'),
        'base_channels': ('int', '16'),
        'kernel_size': ('int', '3'),
        'bn_momentum': ('float', '0.1'),
        'bn_eps': ('float', '1e-05'),
    },
    'training': {
        'epochs': ('int', '50'),
        'batch_size': ('int', '1'),
        'learning_rate': ('float', '0.001'),
        'beta1': ('float', '0.5'),
        'beta2': ('float', '0.999'),
        'decay_epochs': ('int', '10'),
        'input_scale': ('float', '1.0'),
        'steps_per_epoch': ('int', '0'),
    },
    'recon': {
        'tikhonov_factor': ('float', '0.01'),
        'laplacian_factor': ('float', '0.01'),
        'lambda_scale': ('choice:data|operator', 'data'),
        'max_iters': ('int', '200'),
        'rel_tol': ('float', '1e-06'),
        'power_iters': ('int', '100'),
    },
    'nmf': {
        'k': ('int', str(const.nmf_components)),
        'lambda_l1': ('float', str(const.nmf_lambda)),
        'lambda_fro': ('float', str(const.nmf_lambda)),
        'max_iters': ('int', '500'),
        'rel_tol': ('float', '1e-06'),
        'n_restarts': ('int', '5'),
        'depth_step': ('q:m', str(const.depth_step)),
        'depth_smooth_halfwidth': ('q:m', str(const.depth_smooth_halfwidth)),
        'depth_max': ('q:m', '4.8 mm'),
    },
    'dataset': {
        'mode': ('choice:en|gn', 'en'),
        'n_train': ('int', '2000'),
        'n_val': ('int', '300'),
        'n_test': ('int', '300'),
        'signal_peak': ('float', '1.0'),
        'augment': ('bool', 'true'),
        'noise_dir': ('str', ''),
        'gn_sigma_max': ('float', '0.5'),
        'gn_test_sigmas': ('floats', _GN_TEST_SIGMAS),
        'wavelengths': ('qlist:nm', _DESK_WAVELENGTHS),
        'n_phantoms': ('int', '20'),
    },
    'metrics': {
        'excluded_channels': ('ints', ''),
        'noise_floor_window': ('int', '32'),
        'snr_mean_crop': ('int', '256'),
    },
    'bench': {
        'n_transducers': ('int', str(const.msot_n_transducers)),
        'n_samples': ('int', str(const.msot_n_samples)),
        'repeats': ('int', '3'),
    },
}

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


def _split_list(text):
    return [item.strip() for item in text.split(',') if item.strip()]


def _quantity(text, unit, where):
    try:
        q = u.Quantity(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'{where}: cannot parse {text!r} as a quantity '
                          f'({exc})') from exc
    if q.unit == u.dimensionless_unscaled:
        raise ConfigError(f'{where}: {text!r} must carry a unit '
                          f'compatible with {unit}')
    if not q.unit.is_equivalent(unit):
        raise ConfigError(f'{where}: unit of {text!r} is not compatible '
                          f'with {unit}')
    return q.to(unit)


def _format_quantity(q):
    return f'{float(q.value)!r} {q.unit.to_string()}'


def _parse(kind, text, where):
    """Parse a raw string; returns ``(value, canonical_text)``."""
    text = text.strip()
    try:
        if kind == 'int':
            value = int(text)
            return value, str(value)
        if kind == 'float':
            value = float(text)
            return value, repr(value)
        if kind == 'str':
            return text, text
        if kind == 'bool':
            if text.lower() in _TRUE:
                return True, 'true'
            if text.lower() in _FALSE:
                return False, 'false'
            raise ValueError(f'expected a boolean, got {text!r}')
        if kind == 'ints':
            value = [int(v) for v in _split_list(text)]
            return value, ', '.join(map(str, value))
        if kind == 'floats':
            value = [float(v) for v in _split_list(text)]
            return value, ', '.join(map(repr, value))
    except ValueError as exc:
        raise ConfigError(f'{where}: {exc}') from exc

    if kind.startswith('choice:'):
        choices = kind.split(':', 1)[1].split('|')
        if text not in choices:
            raise ConfigError(f'{where}: {text!r} is not one of {choices}')
        return text, text

    family, unit = kind.split(':', 1)
    unit = u.Unit(unit)
    if family == 'q':
        value = _quantity(text, unit, where)
        return value, _format_quantity(value)
    items = [_quantity(v, unit, where) for v in _split_list(text)]
    if family == 'qrange' and len(items) != 2:
        raise ConfigError(f'{where}: expected two comma-separated values, '
                          f'got {len(items)}')
    return items, ', '.join(_format_quantity(q) for q in items)


def parse_override(text):
    """Split ``section.key=value`` into ``(section, key, value)``.

    Raises
    ------
    ConfigError
        Malformed override.

    """
    name, sep, value = text.partition('=')
    section, dot, key = name.strip().partition('.')
    if not sep or not dot or not section or not key:
        raise ConfigError(f'Override {text!r} must look like '
                          'section.key=value')
    return section, key.strip(), value.strip()


class PipelineConfig:
    """Validated pipeline configuration.

    Parameters
    ----------
    values : dict or `None`
        Section name to a mapping of key to raw string. Missing keys take
        their defaults.

    Raises
    ------
    ConfigError
        Unknown section or key, unparsable value or inconsistent settings.

    """

    def __init__(self, values=None):
        values = values or {}
        err_msgs = []
        for section, entries in values.items():
            if section not in _SCHEMA:
                err_msgs.append(f'unknown section [{section}]')
                continue
            for key in entries:
                if key not in _SCHEMA[section]:
                    err_msgs.append(f'unknown key {section}.{key}')
        if err_msgs:
            raise ConfigError(f'Validation failed:{os.linesep}'
                              f'{os.linesep.join(err_msgs)}')

        self._values = {}
        self._text = {}
        for section, fields in _SCHEMA.items():
            given = values.get(section, {})
            self._values[section] = {}
            self._text[section] = {}
            for key, (kind, default) in fields.items():
                raw = given.get(key, default)
                value, text = _parse(kind, raw, f'{section}.{key}')
                self._values[section][key] = value
                self._text[section][key] = text
        self.validate()

    @classmethod
    def from_file(cls, path, overrides=()):
        """Read a configuration file and apply ``section.key=value`` overrides.

        Raises
        ------
        ConfigError
            The file cannot be parsed or validated.

        OSError
            The file cannot be read.

        """
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, 'r', encoding='utf-8') as fin:
                parser.read_file(fin)
        except configparser.Error as exc:
            raise ConfigError(f'{path}: {exc}') from exc
        values = {section: dict(parser.items(section))
                  for section in parser.sections()}
        log.debug('Read configuration %s', path)
        return cls(_merge(values, overrides))

    @classmethod
    def from_profile(cls, name, overrides=()):
        """Bundled profile ``'desk'`` or ``'full'``."""
        try:
            path = get_pkg_data_filename(f'data/{name}.cfg',
                                         package='oadenoise')
        except OSError as exc:
            raise ConfigError(f'Unknown configuration profile {name!r}') \
                from exc
        return cls.from_file(path, overrides)

    def with_overrides(self, overrides):
        """New configuration with ``section.key=value`` overrides applied."""
        return PipelineConfig(_merge(self._text, overrides))

    def get(self, section, key):
        """Parsed value of one key."""
        try:
            return self._values[section][key]
        except KeyError:
            raise KeyError(f'No configuration key {section}.{key}') from None

    def __getitem__(self, section):
        return dict(self._values[section])

    def to_text(self):
        """Canonical serialization: every key, normalized, in fixed order."""
        lines = []
        for section, fields in self._text.items():
            if lines:
                lines.append('')
            lines.append(f'[{section}]')
            lines.extend(f'{key} = {text}' for key, text in fields.items())
        return '\n'.join(lines) + '\n'

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as fout:
            fout.write(self.to_text())

    def hash(self):
        """SHA-256 hex digest of :meth:`to_text`."""
        return hashlib.sha256(self.to_text().encode('utf-8')).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, PipelineConfig):
            return NotImplemented
        return self.to_text() == other.to_text()

    __hash__ = None

    def __str__(self):
        return self.to_text()

    # Builders

    @property
    def seed(self):
        return self.get('pipeline', 'seed')

    def n_jobs(self):
        """Worker count; ``0`` means all available cores."""
        jobs = self.get('pipeline', 'jobs')
        return jobs if jobs > 0 else (os.cpu_count() or 1)

    def output_dir(self, cli_output=None):
        """Output root: command line, then environment, then file."""
        if cli_output:
            return os.fspath(cli_output)
        return os.environ.get(OUTPUT_ENV) or self.get('pipeline', 'output')

    def geometry(self):
        g = self['geometry']
        return ArrayGeometry(g['n_transducers'], g['radius'], g['coverage'],
                             g['sample_rate'], g['speed_of_sound'],
                             orientation=g['orientation'])

    @property
    def grid_shape(self):
        n = self.get('grid', 'n_pixels')
        return (n, n)

    @property
    def extent_m(self):
        return float(self.get('grid', 'extent').to_value(u.m))

    @property
    def raw_shape(self):
        return (self.get('geometry', 'n_transducers'),
                self.get('dsp', 'raw_samples'))

    @property
    def sinogram_shape(self):
        return (self.get('geometry', 'n_transducers'),
                self.get('dsp', 'n_samples'))

    @property
    def sample_rate_hz(self):
        return float(self.get('geometry', 'sample_rate').to_value(u.Hz))

    def crop_start(self):
        """First raw sample kept by the time crop."""
        return crop_bounds(self.get('dsp', 'raw_samples'),
                           self.get('dsp', 'n_samples'))[0]

    def forward_operator(self, raw=False, n_jobs=1):
        """Forward model for raw (uncropped) or preprocessed sinograms.

        The cropped operator starts ``crop_start()`` samples later, so it
        describes exactly the samples that survive preprocessing.

        """
        g = self['grid']
        if raw:
            n_samples = self.get('dsp', 'raw_samples')
            offset = g['t_offset']
        else:
            n_samples = self.get('dsp', 'n_samples')
            offset = g['t_offset'] + self.crop_start()
        return ForwardOperator(self.geometry(), n_samples, self.grid_shape,
                               self.extent_m, t_offset_samples=offset,
                               oversampling=g['oversampling'], n_jobs=n_jobs)

    def bandpass(self):
        d = self['dsp']
        return BandpassSpec(d['low_cut'].to_value(u.Hz),
                            d['high_cut'].to_value(u.Hz), d['order'],
                            d['zero_phase'])

    @property
    def signal_peak(self):
        return self.get('dataset', 'signal_peak')

    def thermal(self, sigma=None):
        """Thermal spec in absolute units; ``sigma`` is relative."""
        sigma = self.get('thermal', 'sigma') if sigma is None else sigma
        return ThermalNoiseSpec(sigma * self.signal_peak)

    def parasitic(self):
        """Parasitic spec with amplitudes in absolute units."""
        p = self['parasitic']
        return ParasiticNoiseSpec(
            burst_rate=p['burst_rate'],
            burst_distribution=p['burst_distribution'],
            carrier_freq_range_hz=[q.to_value(u.Hz)
                                   for q in p['carrier_freq']],
            decay_time_range_s=[q.to_value(u.s) for q in p['decay_time']],
            amplitude_range=[a * self.signal_peak for a in p['amplitude']],
            block_size_range=p['block_size'],
            delay_range_samples=p['delay'],
            channel_gain_range=p['channel_gain'])

    def arch(self):
        d = self['denoiser']
        return DenoiserArch(d['levels'], d['base_channels'],
                            kernel_size=d['kernel_size'],
                            bn_momentum=d['bn_momentum'], bn_eps=d['bn_eps'])

    def train_config(self):
        t = self['training']
        n_val = self.get('dataset', 'n_val')
        n_train = self.get('dataset', 'n_train')
        return TrainConfig(
            epochs=t['epochs'], batch_size=t['batch_size'],
            learning_rate=t['learning_rate'], beta1=t['beta1'],
            beta2=t['beta2'], decay_epochs=t['decay_epochs'],
            input_scale=t['input_scale'], seed=self.seed,
            validation_fraction=n_val / (n_train + n_val),
            steps_per_epoch=t['steps_per_epoch'] or None)

    def recon_config(self):
        r = self['recon']
        return ReconConfig(tikhonov_factor=r['tikhonov_factor'],
                           laplacian_factor=r['laplacian_factor'],
                           lambda_scale=r['lambda_scale'],
                           max_iters=r['max_iters'], rel_tol=r['rel_tol'],
                           power_iters=r['power_iters'])

    def nmf_config(self):
        n = self['nmf']
        return NmfConfig(k=n['k'], lambda_l1=n['lambda_l1'],
                         lambda_fro=n['lambda_fro'],
                         max_iters=n['max_iters'], rel_tol=n['rel_tol'],
                         seed=self.seed, n_restarts=n['n_restarts'])

    def depth_binning(self):
        """``(bin_m, smooth_halfwidth_m, max_depth_m)`` for depth profiles."""
        n = self['nmf']
        return tuple(float(n[key].to_value(u.m)) for key in
                     ('depth_step', 'depth_smooth_halfwidth', 'depth_max'))

    def wavelengths_nm(self):
        return np.array([q.to_value(u.nm)
                         for q in self.get('dataset', 'wavelengths')])

    def channel_mask(self):
        """Metric channel mask; ``excluded_channels`` are 1-based."""
        n = self.get('geometry', 'n_transducers')
        excluded = [c - 1 for c in self.get('metrics', 'excluded_channels')]
        return ChannelMask.excluding(n, excluded)

    def validate(self):
        """Check the cross-section consistency of the settings.

        Returns
        -------
        status : bool
            `True` if all checks pass.

        Raises
        ------
        ConfigError
            One or more checks failed; all messages are listed.

        """
        err_msgs = []
        try:
            geometry = self.geometry()
        except (TypeError, ValueError) as exc:
            err_msgs.append(f'geometry: {exc}')
            geometry = None

        d = self['dsp']
        n_t = self.get('geometry', 'n_transducers')
        if d['n_samples'] % 16 != 0 or d['n_samples'] < 16:
            err_msgs.append(f'dsp.n_samples must be a positive multiple of '
                            f'16, got {d["n_samples"]}')
        if d['n_samples'] > d['raw_samples']:
            err_msgs.append(f'dsp.n_samples ({d["n_samples"]}) exceeds '
                            f'dsp.raw_samples ({d["raw_samples"]})')
        if geometry is not None:
            try:
                self.bandpass().validate(geometry.sample_rate_hz)
            except ValueError as exc:
                err_msgs.append(f'dsp: {exc}')
            try:
                self.parasitic().validate(geometry.sample_rate_hz)
            except ValueError as exc:
                err_msgs.append(f'parasitic: {exc}')

        try:
            divisor = self.arch().divisor
        except ValueError as exc:
            err_msgs.append(f'denoiser: {exc}')
            divisor = 1
        for name, size in (('geometry.n_transducers', n_t),
                           ('dsp.n_samples', d['n_samples'])):
            if size % divisor:
                err_msgs.append(f'{name} ({size}) is not divisible by '
                                f'{divisor} = 2**denoiser.levels')
        bench = self['bench']
        for name in ('n_transducers', 'n_samples'):
            if bench[name] % divisor:
                err_msgs.append(f'bench.{name} ({bench[name]}) is not '
                                f'divisible by {divisor}')
        if bench['repeats'] < 1:
            err_msgs.append('bench.repeats must be >= 1')

        if not 0 <= self.seed < 2**64:
            err_msgs.append(f'pipeline.seed must be in [0, 2**64), '
                            f'got {self.seed}')
        g = self['grid']
        if g['n_pixels'] < 1:
            err_msgs.append('grid.n_pixels must be >= 1')
        if g['t_offset'] < 0:
            err_msgs.append('grid.t_offset must be >= 0')
        if not self.get('thermal', 'sigma') >= 0:
            err_msgs.append('thermal.sigma must be >= 0')

        ds = self['dataset']
        if ds['n_train'] < 1:
            err_msgs.append('dataset.n_train must be >= 1')
        if ds['n_val'] < 0 or ds['n_test'] < 0 or ds['n_phantoms'] < 0:
            err_msgs.append('dataset split sizes must be >= 0')
        if not ds['signal_peak'] > 0:
            err_msgs.append('dataset.signal_peak must be positive')
        if not ds['gn_sigma_max'] > 0:
            err_msgs.append('dataset.gn_sigma_max must be positive')
        if any(s < 0 for s in ds['gn_test_sigmas']):
            err_msgs.append('dataset.gn_test_sigmas must be >= 0')
        wl = self.wavelengths_nm()
        if wl.size == 0 or np.any(np.diff(wl) <= 0):
            err_msgs.append('dataset.wavelengths must be strictly increasing')

        m = self['metrics']
        for c in m['excluded_channels']:
            if not 1 <= c <= n_t:
                err_msgs.append(f'metrics.excluded_channels: {c} not in '
                                f'1..{n_t}')
        if len(set(m['excluded_channels'])) >= n_t:
            err_msgs.append('metrics.excluded_channels excludes every '
                            'channel')
        for name in ('noise_floor_window', 'snr_mean_crop'):
            if not 1 <= m[name] <= d['n_samples']:
                err_msgs.append(f'metrics.{name} must be in '
                                f'1..{d["n_samples"]}, got {m[name]}')

        for build in (self.recon_config, self.nmf_config):
            try:
                build()
            except ValueError as exc:
                err_msgs.append(str(exc))
        try:
            self.train_config()
        except ValueError as exc:
            err_msgs.append(str(exc))

        if err_msgs:
            raise ConfigError(f'Validation failed:{os.linesep}'
                              f'{os.linesep.join(err_msgs)}')
        return True


def _merge(values, overrides):
    merged = {section: dict(entries) for section, entries in values.items()}
    for text in overrides or ():
        section, key, value = parse_override(text)
        merged.setdefault(section, {})[key] = value
    return merged
