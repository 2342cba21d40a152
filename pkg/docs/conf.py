# Configuration file for the Sphinx documentation builder.
#
# For the full list of options see
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Path setup --------------------------------------------------------------
from datetime import datetime
from importlib.metadata import metadata

import dtmanifold  # noqa

# -- Project information -----------------------------------------------------

# NOTE: with an editable install the metadata can be stale; reinstall to refresh it
info = metadata("dtmanifold")
project_name = info["Name"]
author = info["Author"] or "dtmanifold developers"
copyright = f"{datetime.now():%Y}, {author}."
version = info["Version"]
repository_url = "https://github.com/dtmanifold/dtmanifold/"

release = info["Version"]

nitpicky = True
needs_sphinx = "4.0"

html_context = {
    "display_github": True,
    "github_user": "dtmanifold",
    "github_repo": "dtmanifold",
    "github_version": "main",
    "conf_py_path": "/docs/",
}

# -- General configuration ---------------------------------------------------

extensions = [
    "myst_nb",
    "sphinx_copybutton",
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx_autodoc_typehints",
    "sphinx.ext.mathjax",
]

autosummary_generate = True
autodoc_member_order = "groupwise"
default_role = "literal"
napoleon_google_docstring = False
napoleon_numpy_docstring = True
napoleon_include_init_with_doc = False
napoleon_use_rtype = True
napoleon_use_param = True
myst_heading_anchors = 6
myst_enable_extensions = [
    "amsmath",
    "colon_fence",
    "deflist",
    "dollarmath",
]
myst_url_schemes = ("http", "https", "mailto")
nb_execution_mode = "off"
typehints_defaults = "braces"

source_suffix = {
    ".rst": "restructuredtext",
    ".md": "myst-nb",
}

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "pandas": ("http://pandas.pydata.org/pandas-docs/stable/", None),
}

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store", "**.ipynb_checkpoints"]

# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_book_theme"
html_title = project_name

html_theme_options = {
    "repository_url": repository_url,
    "use_repository_button": True,
    "path_to_docs": "docs/",
    "navigation_with_keys": False,
}

pygments_style = "default"

nitpick_ignore = [
    ("py:class", "numpy.linalg.LinAlgError"),
    ("py:class", "os.PathLike"),
]
