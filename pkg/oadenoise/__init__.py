# Licensed under a 3-clause BSD style license - see LICENSE.rst

try:
    from .version import version as __version__
except ImportError:
    __version__ = ''

from . import core  # noqa
from . import forward  # noqa
from . import noise  # noqa
from . import dsp  # noqa
from . import denoiser  # noqa
from . import recon  # noqa
from . import unmix  # noqa
from . import metrics  # noqa
from . import config  # noqa
