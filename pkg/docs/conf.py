# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

from datetime import date

from orbit_recon import __version__

# -- Project information -----------------------------------------------------

project = "orbit-recon"
copyright = f"{date.today().year}, orbit-recon developers"
author = "orbit-recon developers"
version = __version__

master_doc = "index"
language = "en"

# -- General configuration ---------------------------------------------------

extensions = [
    "myst_parser",
    "autodoc2",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
    "sphinx_copybutton",
]

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "torch": ("https://pytorch.org/docs/stable", None),
}

# -- Autodoc settings ---------------------------------------------------

autodoc2_packages = ["../orbit_recon"]
autodoc2_hidden_objects = ["dunder", "private", "inherited"]
autodoc2_render_plugin = "myst"

# -- MyST settings ---------------------------------------------------

myst_enable_extensions = ["colon_fence", "deflist", "dollarmath"]
myst_heading_anchors = 2

# -- HTML output -------------------------------------------------

html_theme = "sphinx_book_theme"
html_title = "orbit-recon"
html_theme_options = {
    "home_page_in_toc": True,
    "use_edit_page_button": False,
}
