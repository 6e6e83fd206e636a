"""Test configuration profiles, overrides and validation."""
import os

import pytest
from astropy import units as u
from numpy.testing import assert_allclose

from oadenoise.config import OUTPUT_ENV, PipelineConfig, parse_override
from oadenoise.exceptions import ConfigError


class TestProfiles:
    def setup_class(self):
        self.desk = PipelineConfig.from_profile('desk')
        self.full = PipelineConfig.from_profile('full')

    def test_desk(self):
        cfg = self.desk
        assert cfg.sinogram_shape == (64, 256)
        assert cfg.raw_shape == (64, 272)
        assert cfg.crop_start() == 8
        assert cfg.grid_shape == (128, 128)
        assert u.allclose(cfg.get('geometry', 'radius'), 4.8 * u.mm)
        assert_allclose(cfg.extent_m, 4.8e-3)
        assert cfg.sample_rate_hz == 4e7
        assert len(cfg.wavelengths_nm()) == 10
        assert cfg.get('recon', 'max_iters') == 200
        assert cfg.channel_mask().included.all()

    def test_full(self):
        cfg = self.full
        assert cfg.sinogram_shape == (256, 1808)
        assert cfg.crop_start() == 4
        assert cfg.get('grid', 't_offset') == 960
        assert cfg.train_config().input_scale == 0.004
        assert cfg.arch().divisor == 16
        mask = cfg.channel_mask()
        assert not mask.included[60]
        assert mask.included.sum() == 255
        assert len(cfg.wavelengths_nm()) == 28

    def test_builders(self):
        cfg = self.desk
        assert cfg.geometry().n_transducers == 64
        assert cfg.bandpass().low_cut_hz == 5e5
        assert cfg.recon_config().max_iters == 200
        assert cfg.recon_config().lambda_scale == 'data'
        assert cfg.nmf_config().k == 10
        assert_allclose(cfg.depth_binning(), (1e-4, 8e-4, 4.8e-3))
        assert cfg.thermal().sigma == 0.25
        assert_allclose(cfg.thermal(0.5).sigma, 0.5)
        assert_allclose(cfg.train_config().validation_fraction, 300 / 2300)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match='Unknown configuration profile'):
            PipelineConfig.from_profile('lab')


class TestOverrides:
    def test_parse(self):
        assert parse_override('recon.max_iters = 5') == ('recon', 'max_iters',
                                                         '5')
        for bad in ('recon', 'max_iters=5', '.x=1', 'recon.=1'):
            with pytest.raises(ConfigError, match='section.key=value'):
                parse_override(bad)

    def test_values(self):
        cfg = PipelineConfig.from_profile(
            'desk', ['recon.max_iters=50', 'geometry.radius=0.5 cm',
                     'metrics.excluded_channels=1, 64'])
        assert cfg.get('recon', 'max_iters') == 50
        scaled = cfg.with_overrides(['recon.lambda_scale=operator'])
        assert scaled.recon_config().lambda_scale == 'operator'
        assert u.allclose(cfg.get('geometry', 'radius'), 5 * u.mm)
        mask = cfg.channel_mask()
        assert not mask.included[0] and not mask.included[63]

    def test_with_overrides(self):
        cfg = PipelineConfig.from_profile('desk')
        other = cfg.with_overrides(['pipeline.seed=3'])
        assert other.seed == 3
        assert cfg.seed == 0

    @pytest.mark.parametrize(('override', 'message'), [
        ('recon.bogus=1', 'unknown key recon.bogus'),
        ('optics.wavelength=1', r'unknown section \[optics\]'),
        ('geometry.radius=5 s', 'not compatible'),
        ('geometry.radius=5', 'must carry a unit'),
        ('geometry.radius=five', 'cannot parse'),
        ('recon.max_iters=many', 'recon.max_iters'),
        ('dsp.zero_phase=maybe', 'boolean'),
        ('dataset.mode=mixed', 'not one of'),
        ('recon.lambda_scale=image', 'not one of'),
        ('parasitic.carrier_freq=1 MHz', 'two comma-separated'),
        ('metrics.excluded_channels=0', 'not in 1..64'),
        ('dsp.n_samples=250', 'multiple of 16'),
    ])
    def test_invalid(self, override, message):
        with pytest.raises(ConfigError, match=message):
            PipelineConfig.from_profile('desk', [override])

    def test_all_errors_reported(self):
        with pytest.raises(ConfigError) as exc:
            PipelineConfig.from_profile('desk', ['geometry.n_transducers=60',
                                                 'dataset.n_train=0'])
        message = str(exc.value)
        assert 'geometry.n_transducers (60)' in message
        assert 'dataset.n_train' in message


class TestCanonicalText:
    def test_hash_stable(self):
        a = PipelineConfig.from_profile('desk')
        b = PipelineConfig.from_profile(
            'desk', ['recon.max_iters=200', 'training.learning_rate=1e-3'])
        assert a == b
        assert a.hash() == b.hash()
        assert len(a.hash()) == 64
        c = a.with_overrides(['pipeline.seed=1'])
        assert c.hash() != a.hash()

    def test_roundtrip(self, tmp_path):
        cfg = PipelineConfig.from_profile('full', ['nmf.k=4'])
        path = tmp_path / 'run.cfg'
        cfg.write(path)
        again = PipelineConfig.from_file(path)
        assert again == cfg
        assert again.to_text() == path.read_text()
        assert '[nmf]\nk = 4\n' in again.to_text()

    def test_missing_keys_take_defaults(self, tmp_path):
        path = tmp_path / 'small.cfg'
        path.write_text('[recon]\nmax_iters = 7\n')
        cfg = PipelineConfig.from_file(path)
        assert cfg.get('recon', 'max_iters') == 7
        assert cfg.sinogram_shape == (64, 256)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / 'bad.cfg'
        path.write_text('max_iters = 7\n')
        with pytest.raises(ConfigError, match='bad.cfg'):
            PipelineConfig.from_file(path)
        with pytest.raises(OSError):
            PipelineConfig.from_file(tmp_path / 'absent.cfg')

    def test_missing_key(self):
        with pytest.raises(KeyError, match='recon.nope'):
            PipelineConfig().get('recon', 'nope')


class TestOutputDir:
    def test_precedence(self, monkeypatch, tmp_path):
        cfg = PipelineConfig.from_profile('desk')
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        assert cfg.output_dir() == 'oadenoise-output'
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / 'env'))
        assert cfg.output_dir() == str(tmp_path / 'env')
        assert cfg.output_dir(tmp_path / 'cli') == str(tmp_path / 'cli')

    def test_jobs(self):
        assert PipelineConfig.from_profile('desk').n_jobs() == (
            os.cpu_count() or 1)
        cfg = PipelineConfig.from_profile('desk', ['pipeline.jobs=3'])
        assert cfg.n_jobs() == 3
