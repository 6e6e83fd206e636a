# -*- coding: utf-8 -*-
# Licensed under a 3-clause BSD style license - see LICENSE.rst
#
# Sphinx configuration; project metadata is read from setup.cfg.

import datetime
import os
import sys
from configparser import ConfigParser
from importlib import import_module

try:
    from sphinx_astropy.conf.v1 import *  # noqa
except ImportError:
    print('ERROR: the documentation requires the sphinx-astropy package to '
          'be installed')
    sys.exit(1)

conf = ConfigParser()
conf.read([os.path.join(os.path.dirname(__file__), '..', 'setup.cfg')])
setup_cfg = dict(conf.items('metadata'))

highlight_language = 'python3'
exclude_patterns.append('_templates')  # noqa: F405

project = setup_cfg['name']
author = setup_cfg['author']
copyright = f'{datetime.datetime.now().year}, {author}'

import_module(project)
package = sys.modules[project]
version = package.__version__.split('-', 1)[0]
release = package.__version__

html_theme = 'sphinx_rtd_theme'
html_title = f'{project} v{release}'
htmlhelp_basename = project + 'doc'

latex_documents = [('index', project + '.tex', project + ' Documentation',
                    author, 'manual')]
man_pages = [('index', project.lower(), project + ' Documentation',
              [author], 1)]
