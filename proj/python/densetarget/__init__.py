import os

from ._densetarget import *  # noqa: F401,F403
from ._densetarget import __doc__  # noqa: F401


def cli_path():
    """Path of the bundled densetarget CLI binary, or None when the
    package was installed editable (use the CMake build tree instead)."""
    p = os.path.join(os.path.dirname(__file__), "bin", "densetarget")
    return p if os.path.exists(p) else None
