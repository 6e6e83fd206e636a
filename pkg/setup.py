#!/usr/bin/env python
# Licensed under a 3-clause BSD style license - see LICENSE.rst

# Package metadata, dependencies and the console script live in setup.cfg.

import os
import sys

from setuptools import setup

if 'test' in sys.argv or 'build_docs' in sys.argv:
    print("Run the tests with 'pip install -e .[test]' and 'pytest'; "
          "build the docs with 'pip install -e .[docs]' and "
          "'make html' in docs/.")
    sys.exit(1)

VERSION_TEMPLATE = """
# Falls back to the hard-coded version if setuptools_scm is unavailable
# or cannot determine the version.
try:
    from setuptools_scm import get_version
    version = get_version(root='..', relative_to=__file__)
except Exception:
    version = '{version}'
""".lstrip()

setup(use_scm_version={'write_to': os.path.join('oadenoise', 'version.py'),
                       'write_to_template': VERSION_TEMPLATE})
