# -*- coding: utf-8 -*-
"""Command-line entry point ``oadenoise``.

Numerical settings come from one configuration file (``--config``) or a
bundled profile (``--profile desk`` or ``full``), adjusted with repeated
``--set section.key=value``. Exit status is 0 on success, 1 for usage and
configuration errors, 2 for data errors (unreadable or malformed files,
missing upstream artifacts) and 3 for numerical failures.

"""
import argparse
import logging
import sys

from oadenoise import __version__
from oadenoise.config import PipelineConfig
from oadenoise.exceptions import ConfigError
from oadenoise.pipeline import (cmd_bench, cmd_denoise, cmd_make_dataset,
                                cmd_metrics, cmd_reconstruct, cmd_train,
                                cmd_unmix)
from oadenoise.report import cmd_report

__all__ = ['EXIT_OK', 'EXIT_USAGE', 'EXIT_DATA', 'EXIT_NUMERICAL',
           'build_parser', 'load_config', 'main']

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with `EXIT_USAGE`."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _make_dataset(config, args):
    return cmd_make_dataset(config, image_dir=args.images, output=args.output)


def _train(config, args):
    return cmd_train(config, dataset_dir=args.dataset, output=args.output)


def _denoise(config, args):
    return cmd_denoise(config, dataset_dir=args.dataset, model_path=args.model,
                       output=args.output, inputs=args.inputs)


def _reconstruct(config, args):
    return cmd_reconstruct(config, output=args.output, inputs=args.inputs)


def _unmix(config, args):
    return cmd_unmix(config, output=args.output)


def _metrics(config, args):
    return cmd_metrics(config, output=args.output)


def _report(config, args):
    return cmd_report(config, results_dir=args.results, output=args.output)


def _bench(config, args):
    return cmd_bench(config, model_path=args.model, output=args.output)


def build_parser():
    parser = _Parser(prog='oadenoise',
                     description='Optoacoustic sinogram denoising toolkit')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Log debug messages.')
    source = parser.add_mutually_exclusive_group()
    source.add_argument('--config', help='Configuration file.')
    source.add_argument('--profile', default='desk',
                        help='Bundled configuration profile (default: desk).')
    parser.add_argument('--set', dest='overrides', action='append',
                        default=[], metavar='SECTION.KEY=VALUE',
                        help='Override one configuration value; repeatable.')
    parser.add_argument('--jobs', type=int,
                        help='Worker count; 0 uses all cores.')
    parser.add_argument('--output', help='Output root directory.')

    sub = parser.add_subparsers(dest='command', metavar='COMMAND',
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('make-dataset', help='Simulate the datasets.')
    p.add_argument('--images', help='Directory of PGM feature images.')
    p.set_defaults(func=_make_dataset)

    p = sub.add_parser('train', help='Train the denoiser.')
    p.add_argument('--dataset', help='Dataset directory.')
    p.set_defaults(func=_train)

    p = sub.add_parser('denoise', help='Denoise test and phantom sinograms.')
    p.add_argument('--dataset', help='Dataset directory.')
    p.add_argument('--model', help='Model file.')
    p.add_argument('inputs', nargs='*',
                   help='Further sinogram stack directories.')
    p.set_defaults(func=_denoise)

    p = sub.add_parser('reconstruct', help='Reconstruct phantom stacks.')
    p.add_argument('inputs', nargs='*',
                   help='Sinogram stack directories instead of phantoms.')
    p.set_defaults(func=_reconstruct)

    p = sub.add_parser('unmix', help='Factorize reconstructed stacks.')
    p.set_defaults(func=_unmix)

    p = sub.add_parser('metrics', help='Compute evaluation tables.')
    p.set_defaults(func=_metrics)

    p = sub.add_parser('report', help='Aggregate metrics into a report.')
    p.add_argument('--results', help='Metrics directory.')
    p.set_defaults(func=_report)

    p = sub.add_parser('bench', help='Time denoiser inference.')
    p.add_argument('--model', help='Model file.')
    p.set_defaults(func=_bench)
    return parser


def load_config(args):
    """`~oadenoise.config.PipelineConfig` selected by parsed arguments."""
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f'pipeline.jobs={args.jobs}')
    if args.config:
        return PipelineConfig.from_file(args.config, overrides)
    return PipelineConfig.from_profile(args.profile, overrides)


def main(argv=None):
    """Run one subcommand and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    try:
        config = load_config(args)
        result = args.func(config, args)
    except ConfigError as exc:
        log.error('Configuration error: %s', exc)
        return EXIT_USAGE
    except ArithmeticError as exc:
        log.error('Numerical failure: %s', exc)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        log.error('Data error: %s', exc)
        return EXIT_DATA
    log.info('Wrote %s', result)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
