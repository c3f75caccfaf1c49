# Sphinx configuration for the crowd_points docs.
# Options: https://www.sphinx-doc.org/en/master/usage/configuration.html
import os
import sys

import sphinx_rtd_theme

# autodoc imports crowd_points and tests from the repo root
sys.path.insert(0, os.path.abspath(".."))

project = "crowd_points"
copyright = "2026, crowd_points developers"
author = "crowd_points developers"
release = "0.1.0"

extensions = ["sphinx.ext.autodoc", "sphinx_rtd_theme"]
autodoc_member_order = "bysource"

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

html_theme = "sphinx_rtd_theme"
html_static_path = ["_static"]
