"""subvox: subharmonic voice synthesis and detection workbench.

Physics-based synthesis of period-M subharmonic voice signals
(kinematic vocal folds driving a wave-reflection vocal tract), Monte
Carlo dataset generation, and small fully convolutional networks that
classify the subharmonic period per 2 ms snapshot.

The synthesis inner loop runs in a compiled extension when available;
set SUBVOX_NO_EXT=1 to force the pure-python fallback.
"""

from .dsp import Signal  # noqa: F401
from .errors import AnalysisError, SimulationFault  # noqa: F401
from .waveguide import available_backends, default_backend, simulate  # noqa: F401

__version__ = "0.1.0"
