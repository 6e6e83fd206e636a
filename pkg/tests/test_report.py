"""Test report curves, renderings and verdicts."""
import os

import numpy as np
import pytest
from astropy.table import Table
from numpy.testing import assert_array_equal

from oadenoise.config import PipelineConfig
from oadenoise.exceptions import OptoacousticWarning
from oadenoise.fileio import read_manifest, read_pgm
from oadenoise.pipeline import write_table
from oadenoise.report import (THRESHOLDS, cmd_report, evaluate_verdicts,
                              histogram_table, render_curves)


def test_histogram_table():
    table = histogram_table([0.0, 1.0, 1.0, np.inf, np.nan, 2.0], bins=2)
    assert list(table['count']) == [1, 3]
    assert table['bin_low'][0] == 0 and table['bin_high'][1] == 2
    assert len(histogram_table([np.nan, np.inf])) == 0


class TestRenderCurves:
    def test_frame_and_levels(self):
        x = np.arange(10.)
        image = render_curves(x, [x, -x], shape=(60, 100), margin=4)
        assert image.shape == (60, 100)
        assert image[4, 50] == 0.25
        assert image[0, 0] == 0
        assert set(np.unique(image)) <= {0.0, 0.25, 0.75, 1.0}
        # rising series ends top right, falling series bottom right
        assert image[4, 95] == 1.0
        assert image[55, 95] == 0.75

    def test_non_finite(self):
        image = render_curves([0, 1, 2], [[np.nan, np.inf, -np.inf]],
                              shape=(20, 20), margin=2)
        assert set(np.unique(image)) == {0.0, 0.25}

    def test_constant(self):
        image = render_curves([1, 1], [[3, 3]], shape=(21, 21), margin=0)
        assert image[10, 10] == 1.0


def _write(directory, name, /, **columns):
    table = Table()
    for key, values in columns.items():
        table[key] = values
    write_table(table, os.path.join(directory, f'{name}.csv'))


class TestVerdicts:
    def test_all_missing(self, tmp_path):
        verdicts = evaluate_verdicts(tmp_path)
        assert set(verdicts) == set(THRESHOLDS)
        assert all(v == (None, 'MISSING') for v in verdicts.values())

    def test_recomputed_from_tables(self, tmp_path):
        _write(tmp_path, 'snr', name=['a', 'b', 'c'], sigma=[0.1, 0.5, 1.0],
               snr_before=[1.0, 2.0, 3.0], snr_after=[8.0, 9.0, 3.0],
               snr_gain=[7.0, 7.0, np.inf])
        _write(tmp_path, 'snr_sigma_sweep', sigma=[0.0, 0.1, 0.5, 1.0],
               snr_gain=[-5.0, 7.0, 2.0, -1.0])
        _write(tmp_path, 'contrast_resolution',
               cr_gain=[0.1, 0.2, -0.05, 0.3])
        verdicts = evaluate_verdicts(tmp_path, gn_sigma_max=0.5)
        assert verdicts['snr_mean_gain'] == (7.0, 'PASS')
        assert verdicts['snr_min_gain'] == (7.0, 'PASS')
        assert verdicts['gn_gain_in_range'] == (2.0, 'PASS')
        assert verdicts['cr_fraction_improved'] == (0.75, 'FAIL')
        assert verdicts['cr_mean_gain'][1] == 'PASS'

    def test_failures(self, tmp_path):
        _write(tmp_path, 'snr', snr_gain=[1.0, -2.0])
        _write(tmp_path, 'snr_sigma_sweep', sigma=[0.2], snr_gain=[0.0])
        _write(tmp_path, 'contrast_resolution', cr_gain=[np.nan])
        verdicts = evaluate_verdicts(tmp_path)
        assert verdicts['snr_mean_gain'] == (-0.5, 'FAIL')
        assert verdicts['snr_min_gain'] == (-2.0, 'FAIL')
        assert verdicts['gn_gain_in_range'] == (0.0, 'FAIL')
        assert verdicts['cr_mean_gain'][1] == 'FAIL'

    def test_infinite_loss_fails(self, tmp_path):
        _write(tmp_path, 'snr', snr_gain=[5.0, -np.inf, np.nan])
        verdicts = evaluate_verdicts(tmp_path)
        assert verdicts['snr_min_gain'] == (-np.inf, 'FAIL')
        assert verdicts['snr_mean_gain'] == (5.0, 'PASS')


class TestCmdReport:
    def setup_class(self):
        self.config = PipelineConfig.from_profile('desk')

    def test_partial(self, tmp_path):
        metrics = tmp_path / 'metrics'
        metrics.mkdir()
        _write(metrics, 'snr', snr_gain=[5.0, 6.0, 7.0])
        _write(metrics, 'snr_mean_time', sample=[0, 1, 2],
               snr_mean_before=[1.0, 2.0, -np.inf],
               snr_mean_after=[3.0, 4.0, 5.0])
        with pytest.warns(OptoacousticWarning, match='missing inputs'):
            out = cmd_report(self.config, output=tmp_path)
        assert out == os.path.join(str(tmp_path), 'report')
        summary = read_manifest(os.path.join(out, 'summary.txt'))
        assert summary['snr_mean_gain.verdict'] == 'PASS'
        assert float(summary['snr_mean_gain.value']) == 6.0
        assert float(summary['snr_mean_gain.threshold']) == 5.0
        assert summary['artifacts'] == 'snr_gain_histogram, snr_mean_time'
        assert 'contrast_resolution' not in summary['artifacts']
        image = read_pgm(os.path.join(out, 'snr_mean_time.pgm'))
        assert image.shape == (240, 480)
        copied = Table.read(os.path.join(out, 'snr_mean_time.csv'),
                            format='ascii.csv')
        assert_array_equal(copied['snr_mean_after'], [3.0, 4.0, 5.0])
        manifest = read_manifest(os.path.join(out, 'manifest.txt'))
        assert manifest['command'] == 'report'

    def test_results_dir_argument(self, tmp_path):
        elsewhere = tmp_path / 'elsewhere'
        elsewhere.mkdir()
        _write(elsewhere, 'cr_per_wavelength', wavelength_nm=[700.0, 800.0],
               cr_noisy=[0.1, 0.2], cr_denoised=[0.3, 0.4])
        with pytest.warns(OptoacousticWarning):
            out = cmd_report(self.config, results_dir=elsewhere,
                             output=tmp_path / 'out')
        assert os.path.exists(os.path.join(out, 'cr_per_wavelength.pgm'))
        summary = read_manifest(os.path.join(out, 'summary.txt'))
        assert 'snr.csv' in summary['missing']
