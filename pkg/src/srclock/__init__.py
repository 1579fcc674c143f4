"""Superradiant-pulse clock simulator.

Second-order cumulant mean-field dynamics of incoherently (or coherently)
pumped two-level atoms in a lossy cavity, with heterodyne measurement
backaction, and the frequency-metrology pipeline (photocurrent, spectrum,
Lorentzian fit, Allan deviation) built on top of it.
"""

__version__ = "0.1.0"

from .cumulant import CumulantState, DivergenceError, backaction, drift, initial_state
from .params import PumpSchedule, SystemParams, desk_params

__all__ = [
    "CumulantState", "DivergenceError", "PumpSchedule", "SystemParams",
    "backaction", "desk_params", "drift", "initial_state", "__version__",
]
