# -*- coding: utf-8 -*-
"""Pipeline commands.

Each command reads the artifacts of its upstream commands from the output
root and writes one subdirectory:

==================  ==============================================
``dataset/``        train/val/test splits and multispectral phantoms
``model/``          trained denoiser and its training history
``denoised/``       denoised test sinograms and phantom stacks
``recon/``          reconstructions of noisy and denoised phantoms
``unmix/``          component spectra, coefficient maps, depth profiles
``metrics/``        SNR, SNR_mean and contrast-resolution tables
``report/``         aggregated curves, renderings and verdicts
``bench/``          inference latency
==================  ==============================================

Every output directory holds ``manifest.txt`` (command, toolkit version,
configuration hash, hashes of the inputs), ``config.cfg`` (the canonical
configuration) and ``timings.txt`` (wall-clock durations). Timings are
kept out of the manifest and out of the CSV tables, so repeated runs with
one configuration give byte-identical datasets, models and metrics.

"""
import glob
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from astropy.table import Table

from oadenoise import __version__
from oadenoise.core import (ImageGrid, MultispectralStack, Sinogram,
                            seeded_rng)
from oadenoise.denoiser import DenoiserModel, infer_noise, load_model, \
    save_model
from oadenoise.dsp import bandpass, crop_time
from oadenoise.exceptions import (MissingArtifactError, OptoacousticWarning,
                                  ShapeMismatchError)
from oadenoise.fileio import (read_image, read_manifest, read_sinogram,
                              read_stack, sha256_file, write_image,
                              write_manifest, write_pgm, write_sinogram,
                              write_stack)
from oadenoise.forward import simulate_corpus
from oadenoise.metrics import (RoiMask, contrast_resolution, finite_mean,
                               snr, snr_mean)
from oadenoise.noise import (CorpusNoiseSource, GaussianSweepNoiseSource,
                             NoiseSource, SyntheticNoiseSource,
                             compose_noisy, gen_parasitic, gen_thermal,
                             load_noise_corpus)
from oadenoise.phantom import (feature_images, make_vessel_phantom,
                               reference_spectra)
from oadenoise.recon import reconstruct
from oadenoise.training import train
from oadenoise.unmix import (assemble_spectra, depth_profiles,
                             match_components, nmf_factorize,
                             select_components)

__all__ = ['FilteredNoiseSource', 'Timings', 'finish_output', 'write_table',
           'read_table', 'cmd_make_dataset', 'cmd_train',
           'cmd_denoise', 'cmd_reconstruct', 'cmd_unmix', 'cmd_metrics',
           'cmd_bench', 'DATASET', 'MODEL', 'DENOISED', 'RECON', 'UNMIX',
           'METRICS', 'REPORT', 'BENCH', 'MODEL_FILE', 'NOISE_POWER']

log = logging.getLogger(__name__)

DATASET = 'dataset'
MODEL = 'model'
DENOISED = 'denoised'
RECON = 'recon'
UNMIX = 'unmix'
METRICS = 'metrics'
REPORT = 'report'
BENCH = 'bench'
MODEL_FILE = 'model.oaml'
NOISE_POWER = 'noise_power.csv'

SPLITS = ('train', 'val', 'test')
VARIANTS = ('noisy', 'denoised')
HAEMOGLOBIN = ('HbO2', 'Hb')


class FilteredNoiseSource(NoiseSource):
    """Noise drawn at the raw length, then band-passed and cropped.

    Training then sees noise with the same preprocessing as the stored
    dataset noise.

    """

    def __init__(self, source, spec, sample_rate_hz, raw_samples):
        self.source = source
        self.spec = spec
        self.sample_rate_hz = float(sample_rate_hz)
        self.raw_samples = int(raw_samples)

    def draw(self, rng, shape):
        raw = self.source.draw(rng, (shape[0], self.raw_samples))
        s = crop_time(bandpass(Sinogram(raw, self.sample_rate_hz), self.spec),
                      shape[1])
        return np.asarray(s.data, dtype=np.float64)


class Timings:
    """Named wall-clock durations of one command."""

    def __init__(self):
        self.fields = {}
        self._start = time.perf_counter()

    def add(self, name, seconds):
        self.fields[name] = self.fields.get(name, 0.0) + seconds

    def write(self, directory):
        self.fields['total_s'] = time.perf_counter() - self._start
        write_manifest(os.path.join(directory, 'timings.txt'), self.fields)


def _map(func, items, n_jobs):
    items = list(items)
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _require(path, what):
    if not os.path.exists(path):
        raise MissingArtifactError(f'Missing {what}: expected {path}')
    return path


def finish_output(directory, config, command, inputs, fields, timings):
    """Write manifest, canonical configuration and timings."""
    manifest = {'command': command, 'version': __version__,
                'config_hash': config.hash()}
    for name, path in inputs.items():
        manifest[f'input.{name}'] = sha256_file(path)
    manifest.update(fields)
    manifest['timings'] = 'timings.txt'
    write_manifest(os.path.join(directory, 'manifest.txt'), manifest)
    config.write(os.path.join(directory, 'config.cfg'))
    timings.write(directory)
    log.info('%s finished: %s', command, directory)


def write_table(table, path):
    table.write(path, format='ascii.csv', overwrite=True)


def read_table(path):
    return Table.read(path, format='ascii.csv')


def _preprocess(s, config):
    """Band-pass then crop, as applied to every recorded sinogram."""
    return crop_time(bandpass(s, config.bandpass()),
                     config.get('dsp', 'n_samples'))


def _sorted_names(directory):
    return [os.path.splitext(os.path.basename(p))[0]
            for p in sorted(glob.glob(os.path.join(directory, '*.oasg')))]


def _phantom_names(dataset_dir):
    return sorted(os.path.basename(p) for p in
                  glob.glob(os.path.join(dataset_dir, 'phantoms', 'p*')))


# Dataset

def _measured_noise(config):
    """Measured noise sinograms of ``[dataset] noise_dir`` as recorded.

    Recordings must match the configured channel count and sample rate
    and hold at least ``[dsp] n_samples`` samples.

    """
    corpus = load_noise_corpus(config.get('dataset', 'noise_dir'))
    if not corpus:
        return corpus
    item = corpus[0]
    n_transducers, n_samples = config.sinogram_shape
    err_msgs = []
    if item.n_transducers != n_transducers:
        err_msgs.append(f'{item.n_transducers} channels, configuration has '
                        f'{n_transducers}')
    if item.n_samples < n_samples:
        err_msgs.append(f'{item.n_samples} samples, at least {n_samples} '
                        f'needed')
    if not np.isclose(item.sample_rate_hz, config.sample_rate_hz, rtol=1e-9):
        err_msgs.append(f'sample rate {item.sample_rate_hz} Hz, '
                        f'configuration has {config.sample_rate_hz} Hz')
    if err_msgs:
        raise ShapeMismatchError(
            f'Noise sinograms in {config.get("dataset", "noise_dir")} do '
            f'not fit:{os.linesep}{os.linesep.join(err_msgs)}')
    return corpus


def _noise_pair(config, label, corpus=None):
    """Preprocessed ``(thermal, parasitic)`` noise for one sinogram.

    ``corpus`` holds already preprocessed measured noise; a pick from it
    is returned as the thermal part with zero parasitic noise.

    """
    fs = config.sample_rate_hz
    if corpus:
        rng = seeded_rng(config.seed, f'{label}/corpus')
        item = corpus[int(rng.integers(len(corpus)))]
        return item, item.with_data(np.zeros(item.shape))
    th = gen_thermal(config.thermal(), config.raw_shape, config.seed, fs,
                     label=f'{label}/thermal')
    par = gen_parasitic(config.parasitic(), config.raw_shape, config.seed,
                        fs, label=f'{label}/parasitic')
    return _preprocess(th, config), _preprocess(par, config)


def _gaussian_pair(config, sigma, label):
    th = gen_thermal(config.thermal(sigma), config.sinogram_shape,
                     config.seed, config.sample_rate_hz,
                     label=f'{label}/thermal')
    return th, th.with_data(np.zeros(th.shape))


def _split_jobs(config, split, count):
    """``(name, index, sigma, label)`` of every pair in one split."""
    mode = config.get('dataset', 'mode')
    sigma_max = config.get('dataset', 'gn_sigma_max')
    jobs = []
    if mode == 'gn' and split == 'test':
        for k, sigma in enumerate(config.get('dataset', 'gn_test_sigmas')):
            for i in range(count):
                jobs.append((f's{k:02d}_{i:05d}', i, sigma,
                             f'dataset/test/{k}/{i}'))
        return jobs
    for i in range(count):
        label = f'dataset/{split}/{i}'
        if mode == 'en':
            sigma = None
        elif split == 'train':
            draw = seeded_rng(config.seed, f'{label}/sigma').random()
            sigma = sigma_max * (1.0 - draw)
        else:
            sigma = sigma_max * (i + 1) / count
        jobs.append((f'{i:05d}', i, sigma, label))
    return jobs


def _write_split(config, split, clean, sources, corpus, directory, n_jobs):
    for kind in ('oa', 'noise', 'noisy'):
        os.makedirs(os.path.join(directory, kind), exist_ok=True)

    def build(job):
        name, index, sigma, label = job
        s_oa = clean[index]
        if sigma is None:
            th, par = _noise_pair(config, label, corpus)
        else:
            th, par = _gaussian_pair(config, sigma, label)
        noisy, noise = compose_noisy(s_oa, th, par)
        write_sinogram(s_oa, os.path.join(directory, 'oa', f'{name}.oasg'))
        write_sinogram(noise, os.path.join(directory, 'noise',
                                           f'{name}.oasg'))
        write_sinogram(noisy, os.path.join(directory, 'noisy',
                                           f'{name}.oasg'))
        power = float(np.mean(np.asarray(noise.data, dtype=np.float64)**2))
        return name, index, sigma, label, power

    fields = {'split': split, 'count': 0, 'noise_power': NOISE_POWER}
    rows = []
    for name, index, sigma, label, power in _map(build, _split_jobs(
            config, split, len(clean)), n_jobs):
        fields['count'] += 1
        fields[f'{name}.source'] = sources[index]
        fields[f'{name}.noise_stream'] = label
        if sigma is not None:
            fields[f'{name}.sigma'] = sigma
        rows.append((name, label, np.nan if sigma is None else sigma, power))
    power_table = Table(rows=rows or None,
                        names=('name', 'noise_stream', 'sigma', 'power'),
                        dtype=('U32', 'U64', 'f8', 'f8'))
    write_table(power_table, os.path.join(directory, NOISE_POWER))
    write_manifest(os.path.join(directory, 'manifest.txt'), fields)
    log.info('Wrote %d %s pairs', fields['count'], split)
    return fields['count']


def _write_phantom(config, index, op_raw, corpus, directory):
    """One multispectral vessel phantom with its masks and sinograms."""
    os.makedirs(directory, exist_ok=True)
    phantom = make_vessel_phantom(config.grid_shape, config.extent_m,
                                  config.seed,
                                  label=f'dataset/phantom/{index}')
    wavelengths = config.wavelengths_nm()
    raw = [op_raw.forward_array(phantom.initial_pressure(wl).pixels)
           for wl in wavelengths]
    peak = max(np.abs(r).max() for r in raw)
    factor = config.signal_peak / peak if peak > 0 else 1.0
    clean, noise, noisy = [], [], []
    for j, (wl, data) in enumerate(zip(wavelengths, raw)):
        s_oa = _preprocess(Sinogram(data * factor, config.sample_rate_hz,
                                    wavelength_nm=wl), config)
        th, par = _noise_pair(config, f'dataset/phantom/{index}/{j}', corpus)
        s, n = compose_noisy(s_oa, th, par)
        clean.append((wl, s_oa))
        noise.append((wl, n))
        noisy.append((wl, s))
    geometry = config.geometry()
    for name, entries in (('clean', clean), ('noise', noise),
                          ('noisy', noisy)):
        write_stack(MultispectralStack(entries),
                    os.path.join(directory, name), geometry)
    for name, mask in (('vessel_mask', phantom.vessel_mask),
                       ('background_mask', phantom.background_mask)):
        write_image(ImageGrid(mask.astype(float), config.extent_m),
                    os.path.join(directory, f'{name}.oaim'))
    return directory


def cmd_make_dataset(config, image_dir=None, output=None):
    """Simulate the training, validation and test splits and the phantoms.

    Noise-free sinograms are simulated from feature images (PGM files in
    ``image_dir``, or synthetic images when `None`) on the raw time axis,
    band-passed and cropped. In ``en`` mode every pair gets fresh thermal
    plus parasitic noise with the same preprocessing, or a pick from the
    measured recordings in ``[dataset] noise_dir``, which are band-passed
    and cropped like any recorded sinogram. In ``gn`` mode the noise is
    white Gaussian on the preprocessed axis: sigma uniform in
    ``(0, gn_sigma_max]`` for training, equidistant for validation and the
    ``gn_test_sigmas`` grid for the test split.

    Returns
    -------
    directory : str
        The dataset directory.

    Raises
    ------
    ValueError
        The split sizes exceed the usable images.

    """
    timings = Timings()
    root = config.output_dir(output)
    out = os.path.join(root, DATASET)
    os.makedirs(out, exist_ok=True)
    ds = config['dataset']
    sizes = {'train': ds['n_train'], 'val': ds['n_val'],
             'test': ds['n_test']}
    total = sum(sizes.values())
    n_jobs = config.n_jobs()

    if image_dir is None:
        images = feature_images(total, config.grid_shape, config.seed,
                                'dataset/features')
    else:
        images = sorted(glob.glob(os.path.join(image_dir, '*.pgm')))
        if len(images) < total:
            raise ValueError(f'Split sizes {sizes} need {total} images, '
                             f'{image_dir} has {len(images)}')

    start = time.perf_counter()
    op_raw = config.forward_operator(raw=True, n_jobs=n_jobs)
    timings.add('operator_s', time.perf_counter() - start)

    start = time.perf_counter()
    corpus = simulate_corpus(images, op_raw, config.seed,
                             peak_amplitude=config.signal_peak,
                             augment=ds['augment'])
    if len(corpus) < total:
        raise ValueError(f'Split sizes {sizes} need {total} images, only '
                         f'{len(corpus)} could be decoded')
    clean = _map(lambda s: _preprocess(s, config), corpus.sinograms[:total],
                 n_jobs)
    sources = corpus.sources[:total]
    timings.add('simulate_s', time.perf_counter() - start)

    noise_corpus = None
    if ds['noise_dir'] and ds['mode'] == 'en':
        noise_corpus = _map(lambda s: _preprocess(s, config),
                            _measured_noise(config), n_jobs)

    start = time.perf_counter()
    counts = {}
    offset = 0
    for split in SPLITS:
        part = slice(offset, offset + sizes[split])
        offset += sizes[split]
        counts[split] = _write_split(config, split, clean[part],
                                     sources[part], noise_corpus,
                                     os.path.join(out, split), n_jobs)
    timings.add('splits_s', time.perf_counter() - start)

    start = time.perf_counter()
    _map(lambda p: _write_phantom(config, p, op_raw, noise_corpus,
                                  os.path.join(out, 'phantoms',
                                               f'p{p:03d}')),
         range(ds['n_phantoms']), n_jobs)
    timings.add('phantoms_s', time.perf_counter() - start)

    fields = {'mode': ds['mode'], 'seed': config.seed,
              'operator': op_raw.fingerprint(),
              'geometry': config.geometry().fingerprint(),
              'n_phantoms': ds['n_phantoms'],
              'wavelengths_nm': list(config.wavelengths_nm())}
    fields.update({f'count.{k}': v for k, v in counts.items()})
    for i, (source, reason) in enumerate(corpus.skipped):
        fields[f'skipped.{i}'] = f'{source}: {reason}'
    finish_output(out, config, 'make-dataset', {}, fields, timings)
    return out


# Training

def _read_split(directory, kinds=('oa', 'noise', 'noisy')):
    names = _sorted_names(os.path.join(directory, 'noisy'))
    data = {kind: [read_sinogram(os.path.join(directory, kind, f'{n}.oasg'))
                   for n in names]
            for kind in kinds if os.path.isdir(os.path.join(directory, kind))}
    return names, data


def _noise_source(config):
    ds = config['dataset']
    if ds['mode'] == 'gn':
        return GaussianSweepNoiseSource(ds['gn_sigma_max'] *
                                        config.signal_peak)
    corpus = _measured_noise(config) if ds['noise_dir'] else []
    if corpus:
        return FilteredNoiseSource(CorpusNoiseSource(corpus),
                                   config.bandpass(), config.sample_rate_hz,
                                   corpus[0].n_samples)
    synthetic = SyntheticNoiseSource(config.thermal(), config.parasitic(),
                                     config.sample_rate_hz)
    return FilteredNoiseSource(synthetic, config.bandpass(),
                               config.sample_rate_hz,
                               config.get('dsp', 'raw_samples'))


def cmd_train(config, dataset_dir=None, output=None):
    """Train the denoiser on the dataset's noise-free training sinograms.

    Every optimizer step draws a fresh noise realization from the noise
    source of the dataset mode; the stored validation pairs select the
    checkpoint.

    Returns
    -------
    directory : str
        The model directory with ``model.oaml`` and ``history.csv``.

    """
    timings = Timings()
    root = config.output_dir(output)
    dataset_dir = dataset_dir or os.path.join(root, DATASET)
    dataset_manifest = _require(os.path.join(dataset_dir, 'manifest.txt'),
                                'dataset manifest')
    train_dir = _require(os.path.join(dataset_dir, 'train', 'oa'),
                         'training sinograms')
    corpus = [read_sinogram(os.path.join(train_dir, f'{n}.oasg'))
              for n in _sorted_names(train_dir)]
    validation = None
    val_dir = os.path.join(dataset_dir, 'val')
    if os.path.isdir(os.path.join(val_dir, 'noisy')):
        _, val = _read_split(val_dir, ('noise', 'noisy'))
        if val.get('noisy'):
            validation = list(zip(val['noisy'], val['noise']))

    start = time.perf_counter()
    model = train(corpus, _noise_source(config), config.train_config(),
                  arch=config.arch(), validation=validation,
                  config_hash=config.hash())
    timings.add('train_s', time.perf_counter() - start)

    out = os.path.join(root, MODEL)
    os.makedirs(out, exist_ok=True)
    model_path = os.path.join(out, MODEL_FILE)
    save_model(model, model_path)
    write_table(model.history, os.path.join(out, 'history.csv'))
    fields = {'epoch': model.fingerprint['epoch'],
              'val_loss': model.fingerprint['val_loss'],
              'n_parameters': model.arch.n_parameters(),
              'n_train': len(corpus),
              'n_val': len(validation) if validation else 0,
              'model': MODEL_FILE, 'history': 'history.csv'}
    finish_output(out, config, 'train', {'dataset': dataset_manifest}, fields,
                  timings)
    return out


# Denoising

def _denoise_one(model, s):
    """``(denoised, inferred_noise, latency_s)`` of one sinogram."""
    start = time.perf_counter()
    noise = infer_noise(model, s)
    latency = time.perf_counter() - start
    clean = (np.asarray(s.data, dtype=np.float64) -
             np.asarray(noise.data, dtype=np.float64))
    return s.with_data(clean), noise, latency


def _load_model(config, root, model_path):
    path = model_path or os.path.join(root, MODEL, MODEL_FILE)
    _require(path, 'trained model')
    return load_model(path), path


def cmd_denoise(config, dataset_dir=None, model_path=None, output=None,
                inputs=None):
    """Denoise the test split and the phantom stacks.

    With ground-truth noise available, per-sinogram SNR before and after
    denoising is written to ``snr.csv``; per-sinogram inference latency
    goes to ``latency.csv``. ``inputs`` optionally names further sinogram
    stack directories to denoise into ``denoised/extra/<name>``.

    """
    timings = Timings()
    root = config.output_dir(output)
    dataset_dir = dataset_dir or os.path.join(root, DATASET)
    dataset_manifest = _require(os.path.join(dataset_dir, 'manifest.txt'),
                                'dataset manifest')
    model, path = _load_model(config, root, model_path)
    mask = config.channel_mask()
    n_jobs = config.n_jobs()
    out = os.path.join(root, DENOISED)
    latency = Table(names=('item', 'latency_s'), dtype=('U64', 'f8'))

    test_dir = os.path.join(dataset_dir, 'test')
    names, data = _read_split(test_dir)
    split_manifest = read_manifest(os.path.join(test_dir, 'manifest.txt'))
    for kind in ('denoised', 'inferred'):
        os.makedirs(os.path.join(out, 'test', kind), exist_ok=True)

    def run_test(i):
        denoised, noise, seconds = _denoise_one(model, data['noisy'][i])
        write_sinogram(denoised, os.path.join(out, 'test', 'denoised',
                                              f'{names[i]}.oasg'))
        write_sinogram(noise, os.path.join(out, 'test', 'inferred',
                                           f'{names[i]}.oasg'))
        return noise, seconds

    results = _map(run_test, range(len(names)), n_jobs)
    rows = []
    for i, (noise, seconds) in enumerate(results):
        latency.add_row((f'test/{names[i]}', seconds))
        if 'noise' not in data:
            continue
        before = snr(data['noisy'][i], data['noise'][i], mask=mask)
        after = snr(data['noisy'][i], data['noise'][i], noise, mask=mask)
        sigma = float(split_manifest.get(f'{names[i]}.sigma', 'nan'))
        rows.append((names[i], sigma, before, after, after - before))
    if rows:
        table = Table(rows=rows, names=('name', 'sigma', 'snr_before',
                                        'snr_after', 'snr_gain'))
        write_table(table, os.path.join(out, 'test', 'snr.csv'))
        mean_gain, n_excluded = finite_mean(table['snr_gain'])
        log.info('Test SNR gain %.3f dB (%d non-finite excluded)',
                 mean_gain, n_excluded)

    stacks = [(os.path.join(dataset_dir, 'phantoms', p, 'noisy'),
               os.path.join(out, 'phantoms', p)) for p in
              _phantom_names(dataset_dir)]
    for extra in inputs or ():
        name = os.path.basename(os.path.normpath(extra))
        stacks.append((extra, os.path.join(out, 'extra', name)))
    for source, target in stacks:
        stack, manifest = read_stack(_require(source, 'sinogram stack'))
        results = _map(lambda s: _denoise_one(model, s), stack.items, n_jobs)
        wavelengths = stack.wavelengths
        write_stack(MultispectralStack(
            [(wl, r[0]) for wl, r in zip(wavelengths, results)]),
            os.path.join(target, 'denoised'))
        write_stack(MultispectralStack(
            [(wl, r[1]) for wl, r in zip(wavelengths, results)]),
            os.path.join(target, 'inferred'))
        for wl, r in zip(wavelengths, results):
            latency.add_row((f'{os.path.basename(target)}/{wl:g}', r[2]))

    latency.write(os.path.join(out, 'latency.csv'), format='ascii.csv',
                  overwrite=True)
    timings.add('inference_s', float(np.sum(latency['latency_s'])))
    if len(latency):
        timings.fields['mean_latency_s'] = float(np.mean(latency['latency_s']))
    fields = {'n_test': len(names), 'n_stacks': len(stacks),
              'model_epoch': model.fingerprint['epoch'],
              'latency': 'latency.csv'}
    finish_output(out, config, 'denoise',
                  {'dataset': dataset_manifest, 'model': path}, fields,
                  timings)
    return out


# Reconstruction

def _reconstruct_stack(source, target, op, config, n_jobs):
    stack, _ = read_stack(_require(source, 'sinogram stack'))
    cfg = config.recon_config()
    results = _map(lambda s: reconstruct(s, op, cfg), stack.items, n_jobs)
    images = MultispectralStack([(wl, r.image) for wl, r in
                                 zip(stack.wavelengths, results)])
    write_stack(images, target)
    preview = os.path.join(target, 'preview')
    os.makedirs(preview, exist_ok=True)
    rows = []
    for wl, r in zip(stack.wavelengths, results):
        write_pgm(r.image.pixels, os.path.join(preview, f'wl{wl:07.2f}.pgm'))
        rows.append((wl, r.n_iter, r.converged, r.trace[-1],
                     r.lambda_tikhonov, r.lambda_laplacian))
    return rows


def cmd_reconstruct(config, output=None, inputs=None):
    """Reconstruct the noisy and denoised phantom stacks.

    ``inputs`` optionally replaces the phantoms by explicit sinogram stack
    directories, reconstructed into ``recon/<name>``.

    """
    timings = Timings()
    root = config.output_dir(output)
    n_jobs = config.n_jobs()
    start = time.perf_counter()
    op = config.forward_operator(raw=False, n_jobs=n_jobs)
    timings.add('operator_s', time.perf_counter() - start)
    out = os.path.join(root, RECON)

    jobs = []
    input_manifests = {}
    if inputs:
        for source in inputs:
            name = os.path.basename(os.path.normpath(source))
            jobs.append((name, 'input', source, os.path.join(out, name)))
    else:
        dataset_dir = os.path.join(root, DATASET)
        denoised_dir = os.path.join(root, DENOISED)
        input_manifests['dataset'] = _require(
            os.path.join(dataset_dir, 'manifest.txt'), 'dataset manifest')
        input_manifests['denoised'] = _require(
            os.path.join(denoised_dir, 'manifest.txt'), 'denoise manifest')
        for p in _phantom_names(dataset_dir):
            jobs.append((p, 'noisy',
                         os.path.join(dataset_dir, 'phantoms', p, 'noisy'),
                         os.path.join(out, p, 'noisy')))
            jobs.append((p, 'denoised',
                         os.path.join(denoised_dir, 'phantoms', p,
                                      'denoised'),
                         os.path.join(out, p, 'denoised')))

    start = time.perf_counter()
    rows = []
    for name, variant, source, target in jobs:
        for row in _reconstruct_stack(source, target, op, config, n_jobs):
            rows.append((name, variant) + row)
    timings.add('reconstruct_s', time.perf_counter() - start)
    os.makedirs(out, exist_ok=True)
    summary = Table(rows=rows or None,
                    names=('item', 'variant', 'wavelength_nm', 'n_iter',
                           'converged', 'objective', 'lambda_tikhonov',
                           'lambda_laplacian'),
                    dtype=('U64', 'U16', 'f8', 'i8', 'bool', 'f8',
                           'f8', 'f8'))
    write_table(summary, os.path.join(out, 'summary.csv'))
    fields = {'operator': op.fingerprint(), 'n_stacks': len(jobs),
              'summary': 'summary.csv'}
    finish_output(out, config, 'reconstruct', input_manifests, fields, timings)
    return out


# Unmixing

def _unmix_variant(config, stacks, target, n_jobs):
    os.makedirs(target, exist_ok=True)
    spectra = assemble_spectra(stacks)
    result = nmf_factorize(spectra, config.nmf_config(), n_jobs=n_jobs)
    wavelengths = spectra.wavelengths

    components = Table()
    components['wavelength_nm'] = wavelengths
    for c, h in enumerate(result.H):
        components[f'component_{c}'] = h
    write_table(components, os.path.join(target, 'components.csv'))

    matches = match_components(result.H, reference_spectra(wavelengths))
    write_table(matches, os.path.join(target, 'matches.csv'))

    trace = Table()
    trace['iteration'] = np.arange(len(result.trace))
    trace['objective'] = result.trace
    write_table(trace, os.path.join(target, 'trace.csv'))

    maps = os.path.join(target, 'maps')
    os.makedirs(maps, exist_ok=True)
    for scan in range(spectra.n_scans):
        for c in range(result.W.shape[1]):
            image = spectra.scatter(result.W[:, c], scan)
            name = f'p{scan:03d}_c{c:02d}'
            write_image(image, os.path.join(maps, f'{name}.oaim'))
            if scan == 0:
                write_pgm(image.pixels, os.path.join(maps, f'{name}.pgm'),
                          transform='sqrt')

    selected = select_components(matches, HAEMOGLOBIN)
    if selected:
        bin_m, halfwidth_m, max_m = config.depth_binning()
        profiles = depth_profiles(result, selected, spectra.pixel_depths_m(),
                                  bin_m, halfwidth_m, max_m)
        write_table(profiles, os.path.join(target, 'depth_profiles.csv'))
    else:
        warnings.warn(f'No component correlates with {HAEMOGLOBIN}; depth '
                      'profiles skipped', OptoacousticWarning)
    return {'relative_error': result.relative_error,
            'objective': result.objective, 'restart': result.restart,
            'n_iter': len(result.trace) - 1, 'n_clamped': spectra.n_clamped,
            'selected': selected}


def cmd_unmix(config, output=None):
    """Factorize the reconstructed phantom spectra per variant.

    For the noisy and the denoised reconstructions of all phantoms, the
    per-pixel spectra are factorized jointly. Outputs per variant:
    ``components.csv`` (component spectra), ``matches.csv`` (correlation
    with the reference chromophores), ``trace.csv``, coefficient maps and
    ``depth_profiles.csv`` of the haemoglobin-like components.

    """
    timings = Timings()
    root = config.output_dir(output)
    recon_dir = os.path.join(root, RECON)
    recon_manifest = _require(os.path.join(recon_dir, 'manifest.txt'),
                              'reconstruction manifest')
    phantoms = sorted(os.path.basename(os.path.dirname(p)) for p in
                      glob.glob(os.path.join(recon_dir, 'p*', 'noisy')))
    if not phantoms:
        raise MissingArtifactError(f'Missing reconstructed phantoms: '
                                   f'expected {recon_dir}/p*/noisy')
    out = os.path.join(root, UNMIX)
    fields = {'n_phantoms': len(phantoms)}
    for variant in VARIANTS:
        stacks = [read_stack(_require(os.path.join(recon_dir, p, variant),
                                      f'{variant} reconstruction'))[0]
                  for p in phantoms]
        start = time.perf_counter()
        summary = _unmix_variant(config, stacks,
                                 os.path.join(out, variant), config.n_jobs())
        timings.add(f'{variant}_s', time.perf_counter() - start)
        fields.update({f'{variant}.{k}': v for k, v in summary.items()})
    finish_output(out, config, 'unmix', {'recon': recon_manifest}, fields,
                  timings)
    return out


# Metrics

def _snr_tables(denoised_dir, out):
    table = read_table(os.path.join(denoised_dir, 'test', 'snr.csv'))
    write_table(table, os.path.join(out, 'snr.csv'))
    sigmas = np.asarray(table['sigma'], dtype=float)
    if not np.isfinite(sigmas).any():
        return {'snr_mean_gain': finite_mean(table['snr_gain'])[0]}
    rows = []
    for sigma in np.unique(sigmas[np.isfinite(sigmas)]):
        sel = sigmas == sigma
        row = [sigma]
        for name in ('snr_before', 'snr_after', 'snr_gain'):
            row.append(finite_mean(np.asarray(table[name])[sel])[0])
        row.append(int(sel.sum()))
        rows.append(row)
    sweep = Table(rows=rows, names=('sigma', 'snr_before', 'snr_after',
                                    'snr_gain', 'n'))
    write_table(sweep, os.path.join(out, 'snr_sigma_sweep.csv'))
    return {'snr_mean_gain': finite_mean(table['snr_gain'])[0]}


def _snr_mean_tables(config, dataset_dir, denoised_dir, phantoms, out):
    stack, inferred = [], []
    for p in phantoms:
        stack.extend(read_stack(os.path.join(dataset_dir, 'phantoms', p,
                                             'noisy'))[0].items)
        inferred.extend(read_stack(os.path.join(denoised_dir, 'phantoms', p,
                                                'inferred'))[0].items)
    m = config['metrics']
    kwargs = dict(window_samples=m['noise_floor_window'],
                  crop_samples=m['snr_mean_crop'],
                  mask=config.channel_mask())
    results = {}
    for per in ('whole', 'time', 'transducer'):
        before = snr_mean(stack, None, per=per, **kwargs)
        after = snr_mean(stack, inferred, per=per, **kwargs)
        results[per] = (before, after)

    before, after = results['whole']
    write_table(Table(rows=[(len(stack), before, after, after - before)],
                      names=('n_sinograms', 'snr_mean_before',
                             'snr_mean_after', 'snr_mean_gain')),
                os.path.join(out, 'snr_mean.csv'))
    before, after = results['time']
    curve = Table()
    curve['sample'] = np.arange(len(before))
    curve['snr_mean_before'] = before
    curve['snr_mean_after'] = after
    write_table(curve, os.path.join(out, 'snr_mean_time.csv'))
    before, after = results['transducer']
    curve = Table()
    curve['channel'] = config.channel_mask().indices + 1
    curve['snr_mean_before'] = before
    curve['snr_mean_after'] = after
    write_table(curve, os.path.join(out, 'snr_mean_transducer.csv'))
    return {'snr_mean_gain_whole': results['whole'][1] -
            results['whole'][0]}


def _cr_tables(dataset_dir, recon_dir, phantoms, out):
    rows = []
    for p in phantoms:
        vessels = RoiMask(read_image(os.path.join(
            dataset_dir, 'phantoms', p, 'vessel_mask.oaim')).pixels > 0.5,
            'vessel')
        background = RoiMask(read_image(os.path.join(
            dataset_dir, 'phantoms', p, 'background_mask.oaim')).pixels > 0.5,
            'background')
        noisy, _ = read_stack(os.path.join(recon_dir, p, 'noisy'))
        denoised, _ = read_stack(os.path.join(recon_dir, p, 'denoised'))
        for wl, a, b in zip(noisy.wavelengths, noisy.items, denoised.items):
            cr_noisy = contrast_resolution(a, vessels, background)
            cr_denoised = contrast_resolution(b, vessels, background)
            rows.append((p, wl, cr_noisy, cr_denoised,
                         cr_denoised - cr_noisy))
    table = Table(rows=rows, names=('phantom', 'wavelength_nm', 'cr_noisy',
                                    'cr_denoised', 'cr_gain'))
    write_table(table, os.path.join(out, 'contrast_resolution.csv'))

    wavelengths = np.asarray(table['wavelength_nm'])
    per_wl = []
    for wl in np.unique(wavelengths):
        sel = wavelengths == wl
        gains = np.asarray(table['cr_gain'])[sel]
        per_wl.append((wl, finite_mean(np.asarray(table['cr_noisy'])[sel])[0],
                       finite_mean(np.asarray(table['cr_denoised'])[sel])[0],
                       finite_mean(gains)[0], float(np.mean(gains > 0))))
    write_table(Table(rows=per_wl, names=('wavelength_nm', 'cr_noisy',
                                          'cr_denoised', 'cr_gain',
                                          'fraction_improved')),
                os.path.join(out, 'cr_per_wavelength.csv'))
    return {'cr_mean_gain': finite_mean(table['cr_gain'])[0]}


def _unmix_tables(unmix_dir, out):
    rows = []
    manifest = read_manifest(os.path.join(unmix_dir, 'manifest.txt'))
    for variant in VARIANTS:
        source = os.path.join(unmix_dir, variant, 'depth_profiles.csv')
        if os.path.exists(source):
            write_table(read_table(source),
                        os.path.join(out, f'depth_profiles_{variant}.csv'))
        rows.append((variant, float(manifest[f'{variant}.relative_error']),
                     float(manifest[f'{variant}.objective'])))
    write_table(Table(rows=rows, names=('variant', 'relative_error',
                                        'objective')),
                os.path.join(out, 'nmf.csv'))
    return {}


def cmd_metrics(config, output=None):
    """Evaluate all available upstream artifacts.

    Produces ``snr.csv`` and (Gaussian sweep) ``snr_sigma_sweep.csv`` from
    the test split, ``snr_mean*.csv`` from the phantom sinograms,
    ``contrast_resolution.csv`` and ``cr_per_wavelength.csv`` from the
    reconstructions, and ``nmf.csv`` plus ``depth_profiles_*.csv`` from the
    unmixing. Groups whose inputs are missing are skipped with a warning.

    Raises
    ------
    MissingArtifactError
        No group could be evaluated.

    """
    timings = Timings()
    root = config.output_dir(output)
    dataset_dir = os.path.join(root, DATASET)
    denoised_dir = os.path.join(root, DENOISED)
    recon_dir = os.path.join(root, RECON)
    unmix_dir = os.path.join(root, UNMIX)
    out = os.path.join(root, METRICS)
    os.makedirs(out, exist_ok=True)
    phantoms = _phantom_names(dataset_dir)

    groups = [
        ('snr', [os.path.join(denoised_dir, 'test', 'snr.csv')],
         lambda: _snr_tables(denoised_dir, out)),
        ('snr_mean', [os.path.join(denoised_dir, 'manifest.txt')] +
         [os.path.join(denoised_dir, 'phantoms', p, 'inferred')
          for p in phantoms],
         lambda: _snr_mean_tables(config, dataset_dir, denoised_dir,
                                  phantoms, out)),
        ('contrast_resolution', [os.path.join(recon_dir, 'manifest.txt')] +
         [os.path.join(recon_dir, p, v) for p in phantoms
          for v in VARIANTS],
         lambda: _cr_tables(dataset_dir, recon_dir, phantoms, out)),
        ('nmf', [os.path.join(unmix_dir, 'manifest.txt')],
         lambda: _unmix_tables(unmix_dir, out)),
    ]
    fields = {}
    evaluated = []
    for name, required, run in groups:
        missing = [path for path in required if not os.path.exists(path)]
        if name in ('snr_mean', 'contrast_resolution') and not phantoms:
            missing.append(os.path.join(dataset_dir, 'phantoms'))
        if missing:
            warnings.warn(f'Skipping {name} metrics, missing: '
                          f'{", ".join(missing)}', OptoacousticWarning)
            continue
        start = time.perf_counter()
        fields.update(run())
        timings.add(f'{name}_s', time.perf_counter() - start)
        evaluated.append(name)
    if not evaluated:
        raise MissingArtifactError(f'No upstream artifacts to evaluate in '
                                   f'{root}')
    fields['evaluated'] = evaluated
    inputs = {name: os.path.join(root, sub, 'manifest.txt')
              for name, sub in (('dataset', DATASET), ('denoised', DENOISED),
                                ('recon', RECON), ('unmix', UNMIX))
              if os.path.exists(os.path.join(root, sub, 'manifest.txt'))}
    finish_output(out, config, 'metrics', inputs, fields, timings)
    return out


# Benchmark

def cmd_bench(config, model_path=None, output=None):
    """Time the inference of one sinogram of the ``[bench]`` shape.

    A trained model is used when available, otherwise a freshly
    initialized one of the configured architecture; latency depends only
    on the architecture. Timings are reported, never gated.

    """
    timings = Timings()
    root = config.output_dir(output)
    b = config['bench']
    shape = (b['n_transducers'], b['n_samples'])
    default = os.path.join(root, MODEL, MODEL_FILE)
    inputs = {}
    if model_path or os.path.exists(default):
        model, path = _load_model(config, root, model_path)
        inputs['model'] = path
    else:
        model = DenoiserModel(config.arch(), seed=config.seed,
                              input_scale=config.get('training',
                                                     'input_scale'))
    model.arch.check_input_shape(shape)
    rng = seeded_rng(config.seed, 'bench/input')
    s = Sinogram(rng.standard_normal(shape) * config.signal_peak,
                 config.sample_rate_hz)

    infer_noise(model, s)
    table = Table(names=('repeat', 'latency_s'), dtype=('i8', 'f8'))
    for repeat in range(b['repeats']):
        start = time.perf_counter()
        infer_noise(model, s)
        table.add_row((repeat, time.perf_counter() - start))
    out = os.path.join(root, BENCH)
    os.makedirs(out, exist_ok=True)
    table.write(os.path.join(out, 'latency.csv'), format='ascii.csv',
                overwrite=True)
    timings.fields['mean_latency_s'] = float(np.mean(table['latency_s']))
    timings.fields['min_latency_s'] = float(np.min(table['latency_s']))
    log.info('Inference of a %dx%d sinogram: %.3f s (mean of %d)', *shape,
             timings.fields['mean_latency_s'], b['repeats'])
    fields = {'n_transducers': shape[0], 'n_samples': shape[1],
              'repeats': b['repeats'],
              'n_parameters': model.arch.n_parameters(),
              'latency': 'latency.csv'}
    finish_output(out, config, 'bench', inputs, fields, timings)
    return out
