"""Learnable differential k-forms integrated over embedded simplicial
complexes, with end-to-end training for classification.

Submodules are imported lazily by the command-line layer so thread
limits can be applied before the numeric backend loads; import the
pieces you need directly, e.g. ``from kforms.model import train``.
"""

__version__ = "0.1.0"
