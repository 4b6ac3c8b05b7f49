"""Python bindings for the cimate citation-count prediction library."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
