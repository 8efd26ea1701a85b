"""Capsule-routing video object segmentation: python bindings for the C++ core."""

try:
    from ._core import *  # noqa: F401,F403  (installed wheel layout)
    from ._core import __version__  # noqa: F401
except ImportError:  # development layout: build dir on sys.path
    from _core import *  # noqa: F401,F403
    from _core import __version__  # noqa: F401
