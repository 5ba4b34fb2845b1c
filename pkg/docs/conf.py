# Sphinx configuration for the pairlab documentation.

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

project = 'pairlab'
author = 'pairlab developers'

extensions = [
    'sphinx.ext.napoleon',
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax',
    'sphinx_click.ext'
]

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

autosummary_generate = True
napoleon_google_docstring = False
napoleon_use_param = False
napoleon_use_ivar = True

html_theme = 'sphinx_rtd_theme'
html_static_path = []

latex_documents = [
    ('index', 'pairlab.tex', 'pairlab Documentation', 'pairlab developers', 'manual'),
]
