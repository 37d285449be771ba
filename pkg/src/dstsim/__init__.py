"""dstsim: discrete-event simulator of learning-driven search in
unstructured peer-to-peer networks, with random-walk and adaptive
probabilistic search baselines.
"""

import os as _os
import sys as _sys

# Force the interpreted kernel for the whole process when requested.
# Must run before anything imports dstsim._kernel.
if _os.environ.get("DSTSIM_PURE") and "dstsim._kernel" not in _sys.modules:
    from dstsim.backend import load_pure_kernel as _load_pure
    _sys.modules["dstsim._kernel"] = _load_pure("dstsim._kernel")

from dstsim.backend import backend_name
from dstsim.config import SimConfig, load_config
from dstsim.harness import RunResult, measure_coverage, run_experiment

__version__ = "0.1.0"

__all__ = ["SimConfig", "load_config", "run_experiment", "RunResult",
           "measure_coverage", "backend_name", "__version__"]
