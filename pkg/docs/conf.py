"""Sphinx configuration for the pywmlab documentation."""

import os
import sys
from datetime import datetime
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _pkg_version

sys.path.insert(0, os.path.abspath("../src"))

project = "pywmlab"
author = "py-wmlab developers"
copyright = f"{datetime.now():%Y}, {author}"

try:
    release = _pkg_version("py-wmlab")
except PackageNotFoundError:
    release = "dev"
version = release

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx_autodoc_typehints",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
    "sphinx.ext.doctest",
    "sphinx.ext.mathjax",
    "myst_parser",
    "sphinx_copybutton",
]

source_suffix = {".rst": "restructuredtext", ".md": "markdown"}
myst_enable_extensions = ["colon_fence", "deflist"]
exclude_patterns = ["_build"]

# re-exports from pywmlab/__init__ would otherwise be documented twice
autosummary_generate = True
autosummary_imported_members = False

napoleon_google_docstring = True
napoleon_numpy_docstring = False
autodoc_typehints = "description"
autodoc_default_options = {"members": True, "show-inheritance": True}
autodoc_type_aliases = {"NDArray": "numpy.typing.NDArray"}
autodoc_mock_imports = ["sklearn", "scipy", "matplotlib"]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "pydantic": ("https://docs.pydantic.dev/latest", None),
}

suppress_warnings = ["sphinx_autodoc_typehints.forward_reference"]

doctest_global_setup = """
from pywmlab.models.config import ExperimentConfig, apply_overrides
from pywmlab.pipeline import chain_of
"""

html_theme = "furo"
html_theme_options = {"navigation_with_keys": True}
pygments_style = "friendly"
pygments_dark_style = "monokai"
