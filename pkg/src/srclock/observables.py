"""Physical observables of a moment state: photon number, collective spin,
and the mean ladder quantum numbers of the permutation-symmetric ensemble."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cumulant import CumulantState


class ClosureViolationWarning(RuntimeWarning):
    """The closed equations produced a state outside the physical ladder."""


def dicke_numbers(state: CumulantState, n_atoms: int) -> tuple[float, float]:
    """Mean collective quantum numbers (J_bar, M_bar).

    M_bar = N(<s22> - 1/2);  J_bar = sqrt(<J^2>) expressed through the pair
    correlations.  Tiny negative radicands (closure noise near the ground
    state) are clamped to zero; larger ones signal closure breakdown and
    raise ClosureViolationWarning.
    """
    n = float(n_atoms)
    s22 = state.s22.real
    m_bar = n * (s22 - 0.5)
    radicand = 0.75 * n + n * (n - 1.0) * (
        state.s21s12.real + state.s22s22.real - s22 + 0.25)
    if radicand < 0.0:
        if radicand < -1e-9 * n * n:
            warnings.warn(
                f"J_bar radicand {radicand:.3e} below closure tolerance",
                ClosureViolationWarning, stacklevel=2)
        radicand = 0.0
    return math.sqrt(radicand), m_bar


def spin_vector(state: CumulantState, n_atoms: int) -> tuple[float, float, float]:
    """Collective spin components (A_x, A_y, A_z); A_z equals M_bar."""
    n = float(n_atoms)
    s12 = state.s12
    a_x = n * s12.real                      # (N/2)(s12 + conj(s12))
    a_y = -n * s12.imag                     # (iN/2)(s12 - conj(s12))
    a_z = 0.5 * n * (2.0 * state.s22.real - 1.0)
    return a_x, a_y, a_z


@dataclass
class ObservableRecord:
    """Observables of one state at one time, raw and per-atom."""

    time: float
    photon_number: float
    j_bar: float
    m_bar: float
    a_x: float
    a_y: float
    a_z: float
    n_atoms: int

    @classmethod
    def from_state(cls, state: CumulantState, n_atoms: int,
                   time: float = 0.0) -> "ObservableRecord":
        j_bar, m_bar = dicke_numbers(state, n_atoms)
        a_x, a_y, a_z = spin_vector(state, n_atoms)
        return cls(time=time, photon_number=state.ada.real, j_bar=j_bar,
                   m_bar=m_bar, a_x=a_x, a_y=a_y, a_z=a_z, n_atoms=n_atoms)

    @property
    def j_bar_per_atom(self) -> float:
        return self.j_bar / self.n_atoms

    @property
    def m_bar_per_atom(self) -> float:
        return self.m_bar / self.n_atoms

    @property
    def spin_per_atom(self) -> tuple[float, float, float]:
        n = self.n_atoms
        return self.a_x / n, self.a_y / n, self.a_z / n

    @property
    def spin_length(self) -> float:
        return math.sqrt(self.a_x ** 2 + self.a_y ** 2 + self.a_z ** 2)


def pulse_metrics(times: np.ndarray, photon: np.ndarray) -> dict:
    """Peak time, height and full width at half maximum of a photon pulse."""
    ipk = int(np.argmax(photon))
    peak = float(photon[ipk])
    half = 0.5 * peak
    above = photon >= half
    lo = ipk
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = ipk
    while hi < len(photon) - 1 and above[hi + 1]:
        hi += 1
    return {
        "peak_time": float(times[ipk]),
        "peak_height": peak,
        "fwhm": float(times[hi] - times[lo]),
    }


def observable_series(states: np.ndarray, times: np.ndarray,
                      n_atoms: int) -> dict:
    """Vectorized observables along a recorded trajectory.

    `states` is the (n_times, 12) complex array of a TrajectoryRecord.
    """
    from .cumulant import A, ADA, S12, S21S12, S22, S22S22
    n = float(n_atoms)
    s22 = states[:, S22].real
    s12 = states[:, S12]
    radicand = 0.75 * n + n * (n - 1.0) * (
        states[:, S21S12].real + states[:, S22S22].real - s22 + 0.25)
    worst = radicand.min()
    if worst < -1e-9 * n * n:
        warnings.warn(f"J_bar radicand {worst:.3e} below closure tolerance",
                      ClosureViolationWarning, stacklevel=2)
    return {
        "time": times,
        "photon_number": states[:, ADA].real,
        "j_bar": np.sqrt(np.clip(radicand, 0.0, None)),
        "m_bar": n * (s22 - 0.5),
        "a_x": n * s12.real,
        "a_y": -n * s12.imag,
        "a_z": 0.5 * n * (2.0 * s22 - 1.0),
        "field_re": states[:, A].real,
        "field_im": states[:, A].imag,
    }
