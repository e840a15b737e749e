"""Python bindings for the hfl feature-learning library."""

from ._hfl import *  # noqa: F401,F403
from ._hfl import __version__

__all__ = [name for name in dir() if not name.startswith("_")]
