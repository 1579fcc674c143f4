"""Physical parameter set and pump/drive schedules.

All rates and detunings are angular (rad/s). The dynamics are integrated in
the frame rotating at the cavity frequency, so the absolute cavity frequency
only matters when mapping a fitted beat note back to an optical frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

TWO_PI = 2.0 * math.pi

# Laboratory defaults for a calcium intercombination-line ensemble in a
# MHz-linewidth cavity.  The coupling g and the dephasing chi are entered
# directly in rad/s: g = 6.53e3 rad/s is the value consistent with the
# observed collective decay scales (a 2pi prefix would make the collective
# decay ~40x faster than the pump and no inversion could build up).
DEFAULT_CAVITY_FREQ = TWO_PI * 456.6e12
DEFAULT_KAPPA = TWO_PI * 2.26e6
DEFAULT_COUPLING = 6.53e3
DEFAULT_GAMMA = TWO_PI * 0.38e3
DEFAULT_ETA = TWO_PI * 20e3
DEFAULT_CHI = TWO_PI * 0.1
DEFAULT_N_ATOMS = 50_000
DEFAULT_LO_DETUNING = TWO_PI * 1e6
DEFAULT_EFFICIENCY = 0.12
DEFAULT_PUMP_DURATION = 20e-6


@dataclass(frozen=True)
class SystemParams:
    """All physical rates, detunings, atom number and detection settings."""

    n_atoms: int = DEFAULT_N_ATOMS
    cavity_freq: float = DEFAULT_CAVITY_FREQ      # absolute, bookkeeping only
    atom_detuning: float = 0.0                    # omega_a - omega_c
    cavity_loss: float = DEFAULT_KAPPA            # kappa
    coupling: float = DEFAULT_COUPLING            # g
    atom_decay: float = DEFAULT_GAMMA             # gamma
    pump_rate: float = DEFAULT_ETA                # eta (peak)
    pump_duration: float = DEFAULT_PUMP_DURATION
    dephasing: float = DEFAULT_CHI                # chi
    drive_strength: float = 0.0                   # Omega, sqrt(rad/s); 0 disables
    drive_detuning: float = 0.0                   # omega_d - omega_c
    drive_duration: float = 0.0
    lo_detuning: float = DEFAULT_LO_DETUNING      # omega_l - omega_c
    detection_efficiency: float = DEFAULT_EFFICIENCY  # xi

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        for name in ("cavity_loss", "coupling", "atom_decay", "pump_rate",
                     "pump_duration", "dephasing", "drive_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError(
                f"detection_efficiency must lie in [0, 1], got {self.detection_efficiency}")

    @property
    def atom_freq(self) -> float:
        """Absolute atomic transition frequency omega_a."""
        return self.cavity_freq + self.atom_detuning

    @property
    def lo_freq(self) -> float:
        """Absolute local-oscillator frequency omega_l."""
        return self.cavity_freq + self.lo_detuning

    def max_rate(self) -> float:
        """Fastest rate in the problem; sets the integration step ceiling."""
        n = self.n_atoms
        collective = n * self.coupling**2 / self.cavity_loss if self.cavity_loss > 0 else 0.0
        drive = 0.0
        if self.drive_strength > 0.0 and self.cavity_loss > 0.0:
            # collective Rabi scale at the drive-sustained photon number
            n_drive = 2.0 * self.drive_strength**2 / self.cavity_loss
            drive = self.coupling * math.sqrt(n * max(n_drive, 1.0))
        return max(self.cavity_loss, self.atom_decay, self.pump_rate,
                   self.dephasing, collective, abs(self.atom_detuning), drive)

    def with_(self, **overrides) -> "SystemParams":
        return replace(self, **overrides)


@dataclass(frozen=True)
class PumpSchedule:
    """Piecewise-constant (top-hat) incoherent pump and coherent drive windows.

    Both windows start at t = 0; the pump runs at `pump_rate` until
    `pump_duration`, the drive at `drive_strength` until `drive_duration`.
    """

    pump_rate: float
    pump_duration: float
    drive_strength: float = 0.0
    drive_duration: float = 0.0

    @classmethod
    def from_params(cls, params: SystemParams) -> "PumpSchedule":
        return cls(pump_rate=params.pump_rate,
                   pump_duration=params.pump_duration,
                   drive_strength=params.drive_strength,
                   drive_duration=params.drive_duration)

    def pump_at(self, t: float) -> float:
        return self.pump_rate if 0.0 <= t < self.pump_duration else 0.0

    def drive_at(self, t: float) -> float:
        return self.drive_strength if 0.0 <= t < self.drive_duration else 0.0


def desk_params(n_atoms: int = 2, **overrides) -> SystemParams:
    """Small fast-rate parameter set for exact-solver cross checks."""
    base = dict(
        n_atoms=n_atoms,
        coupling=TWO_PI * 0.1e6,
        cavity_loss=TWO_PI * 0.05e6,
        atom_decay=TWO_PI * 0.01e6,
        pump_rate=TWO_PI * 0.1e6,
        pump_duration=1.0,          # effectively always on
        dephasing=0.0,
        detection_efficiency=0.0,
    )
    base.update(overrides)
    return SystemParams(**base)
