# Configuration file for the Sphinx documentation builder.

import os
import sys

sys.path.insert(0, os.path.abspath(".."))

# -- Project information -----------------------------------------------------

project = "mlkws"
copyright = "2023, Authors & Contributors"
author = "Authors & Contributors"

version = "0.0.1"
release = "0.0.1"

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx_copybutton",
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_tabs.tabs",
    "sphinx.ext.autosectionlabel",
]

napoleon_google_docstring = True
napoleon_include_init_with_doc = True
napoleon_numpy_docstring = False

templates_path = ["_templates"]
source_suffix = [".rst"]
master_doc = "index"
language = "en"
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = None

# -- Options for HTML output -------------------------------------------------

html_theme = "pydata_sphinx_theme"
html_theme_options = {
    "navbar_align": "left",
    "show_toc_level": 2,
    "show_nav_level": 1,
    "secondary_sidebar_items": ["page-toc", "sourcelink"],
}
html_sidebars = {
    "user_guide/*": [
        "indices.html",
        "navbar-nav.html",
    ],
}
htmlhelp_basename = "mlkwsdoc"

# -- Options for manual page output ------------------------------------------

man_pages = [(master_doc, "mlkws", "mlkws Documentation", [author], 1)]

suppress_warnings = ["autosectionlabel.*", "autodoc", "autodoc.import_object"]
