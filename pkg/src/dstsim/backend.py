"""Kernel backend selection and introspection.

`dstsim._kernel` imports as the compiled extension when one was built
(the .so shadows the .py) and as plain Python otherwise. Setting
DSTSIM_PURE=1 before the first dstsim import forces the interpreted
module for the whole process; `load_pure_kernel()` returns a fresh
interpreted copy regardless, which the benchmark uses for side-by-side
comparisons.
"""

import importlib.util
import os

PURE_ENV = "DSTSIM_PURE"


def _kernel_source_path():
    here = os.path.dirname(os.path.abspath(__file__))
    return os.path.join(here, "_kernel.py")


def load_pure_kernel(name="dstsim._kernel_pure"):
    """Import the interpreted kernel from source, ignoring any extension."""
    spec = importlib.util.spec_from_file_location(name, _kernel_source_path())
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def pure_forced():
    return bool(os.environ.get(PURE_ENV))


def backend_name():
    """'compiled' when the extension kernel is active, else 'pure'."""
    from dstsim import _kernel
    return "compiled" if _kernel.COMPILED else "pure"
