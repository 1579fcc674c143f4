"""Closed second-order moment equations for N identical two-level atoms in a cavity.

The state is the minimal permutation-symmetric set of first- and second-order
moments of the cavity mode (annihilation operator a) and of representative
atoms (lowering operator s12 = |1><2|, excited projector s22 = |2><2|):

    a       <a>
    aa      <a a>
    ada     <adag a>            (real)
    s12     <s12_1>
    s22     <s22_1>             (real)
    ad_s12  <adag s12_1>
    a_s12   <a s12_1>
    a_s22   <a s22_1>
    s21s12  <s21_1 s12_2>       (real)
    s12s12  <s12_1 s12_2>
    s22s12  <s22_1 s12_2>
    s22s22  <s22_1 s22_2>       (real)

Conjugate moments (<adag>, <s21>, ...) are not stored; they are obtained by
complex conjugation, which enforces Hermiticity by construction.

Drift: adjoint Lindblad equation in the frame rotating at the cavity
frequency, with channels kappa (cavity loss), gamma (atomic decay),
eta (incoherent pump, top-hat window), chi (dephasing), plus an optional
coherent cavity drive of amplitude Omega and detuning delta_d.  Third-order
moments generated by the atom-cavity coupling are closed with the
second-order cumulant rule

    <xyz> -> <xy><z> + <xz><y> + <yz><x> - 2<x><y><z>.

Backaction: heterodyne measurement with local-oscillator detuning delta_l
and efficiency xi contributes, per moment o, a Wiener coefficient

    sqrt(xi*kappa/2) * [ e^{+i delta_l t} (<o a> - <o><a>)
                       + e^{-i delta_l t} (<adag o> - <adag><o>) ],

closed with the same cumulant rule.  For pair moments the closure reduces to
the bilinear form B[XY] = <X> B[Y] + <Y> B[X] used below.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .params import PumpSchedule, SystemParams

try:
    from numba import njit
except ImportError:                                      # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

# moment indices in the packed complex state vector
A, AA, ADA, S12, S22, AD_S12, A_S12, A_S22, S21S12, S12S12, S22S12, S22S22 = range(12)

NMOMENTS = 12
MOMENT_NAMES = ("a", "aa", "ada", "s12", "s22", "ad_s12", "a_s12", "a_s22",
                "s21s12", "s12s12", "s22s12", "s22s22")
REAL_MOMENTS = (ADA, S22, S21S12, S22S22)
IMAG_TOL = 1e-9


class DivergenceError(RuntimeError):
    """A moment became non-finite or unphysically large during evolution."""

    def __init__(self, moment: str, time: float, value=None):
        self.moment = moment
        self.time = time
        self.value = value
        msg = f"divergent moment '{moment}' at t = {time:.6e} s"
        if value is not None:
            msg += f" (value {value})"
        super().__init__(msg)


@dataclass
class CumulantState:
    """Container mirroring the packed moment vector; all entries complex."""

    a: complex = 0.0
    aa: complex = 0.0
    ada: complex = 0.0
    s12: complex = 0.0
    s22: complex = 0.0
    ad_s12: complex = 0.0
    a_s12: complex = 0.0
    a_s22: complex = 0.0
    s21s12: complex = 0.0
    s12s12: complex = 0.0
    s22s12: complex = 0.0
    s22s22: complex = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in MOMENT_NAMES],
                        dtype=np.complex128)

    @classmethod
    def from_array(cls, vec) -> "CumulantState":
        return cls(**{name: complex(vec[i]) for i, name in enumerate(MOMENT_NAMES)})


def _params_tuple(params: SystemParams, schedule: PumpSchedule | None = None):
    """Pack parameters into the flat float tuple consumed by the kernels."""
    sched = schedule or PumpSchedule.from_params(params)
    return (float(params.n_atoms), params.atom_detuning, params.cavity_loss,
            params.atom_decay, sched.pump_rate, sched.pump_duration,
            params.dephasing, params.coupling, sched.drive_strength,
            sched.drive_duration, params.drive_detuning,
            params.lo_detuning, params.detection_efficiency)


@njit
def drift_rhs(y, t, p):
    """Deterministic time derivative of the packed moment vector."""
    n, delta_a, kappa, gamma, eta0, pump_T, chi, g, omega0, drive_T, delta_d, _, _ = p
    eta = eta0 if t < pump_T else 0.0
    omega = omega0 if t < drive_T else 0.0

    a = y[A]
    aa = y[AA]
    ada = y[ADA]
    s12 = y[S12]
    s22 = y[S22]
    ad_s12 = y[AD_S12]
    a_s12 = y[A_S12]
    a_s22 = y[A_S22]
    s21s12 = y[S21S12]
    s12s12 = y[S12S12]
    s22s12 = y[S22S12]
    s22s22 = y[S22S22]

    ac = np.conj(a)
    s12c = np.conj(s12)
    ad_s12c = np.conj(ad_s12)
    a_s22c = np.conj(a_s22)

    # cumulant closures of the third-order moments produced by the coupling
    t_ada_s22 = ada * s22 + a_s22c * a + a_s22 * ac - 2.0 * ac * a * s22
    t_aa_s22 = aa * s22 + 2.0 * a_s22 * a - 2.0 * a * a * s22
    t_ada_s12 = ada * s12 + ad_s12 * a + a_s12 * ac - 2.0 * ac * a * s12
    t_aa_s21 = aa * s12c + 2.0 * ad_s12c * a - 2.0 * a * a * s12c
    t_ad_s22_s12 = a_s22c * s12 + ad_s12 * s22 + s22s12 * ac - 2.0 * ac * s22 * s12
    t_a_s21_s22 = np.conj(t_ad_s22_s12)
    t_a_s22_s12 = a_s22 * s12 + a_s12 * s22 + s22s12 * a - 2.0 * a * s22 * s12
    t_ad_s12_s12 = 2.0 * ad_s12 * s12 + s12s12 * ac - 2.0 * ac * s12 * s12
    t_a_s21_s12 = ad_s12c * s12 + a_s12 * s12c + s21s12 * a - 2.0 * a * s12c * s12
    t_a_s22_s22 = 2.0 * a_s22 * s22 + s22s22 * a - 2.0 * a * s22 * s22

    ig = 1j * g
    gam_eta = gamma + eta
    drv = 0.0j
    if omega != 0.0:
        drv = 1j * np.sqrt(kappa / 2.0) * omega * np.exp(-1j * delta_d * t)

    dy = np.empty(12, dtype=np.complex128)
    dy[A] = -0.5 * kappa * a - ig * n * s12 - drv
    dy[AA] = -kappa * aa - 2.0 * ig * n * a_s12 - 2.0 * drv * a
    dy[ADA] = -kappa * ada + ig * n * (ad_s12c - ad_s12) \
        - np.conj(drv) * a - drv * ac
    dy[S12] = -(1j * delta_a + 0.5 * gam_eta + chi) * s12 + ig * (2.0 * a_s22 - a)
    dy[S22] = eta - gam_eta * s22 + ig * (ad_s12 - ad_s12c)
    dy[AD_S12] = -(1j * delta_a + 0.5 * (kappa + gam_eta) + chi) * ad_s12 \
        + ig * (2.0 * t_ada_s22 - ada + s22 + (n - 1.0) * s21s12) \
        - np.conj(drv) * s12
    dy[A_S12] = -(1j * delta_a + 0.5 * (kappa + gam_eta) + chi) * a_s12 \
        + ig * (2.0 * t_aa_s22 - aa - (n - 1.0) * s12s12) - drv * s12
    dy[A_S22] = -(0.5 * kappa + gam_eta) * a_s22 + eta * a \
        + ig * (t_ada_s12 - t_aa_s21 - (n - 1.0) * s22s12) - drv * s22
    dy[S21S12] = -(gam_eta + 2.0 * chi) * s21s12 \
        + ig * (ad_s12 - ad_s12c + 2.0 * (t_a_s21_s22 - t_ad_s22_s12))
    dy[S12S12] = -(2j * delta_a + gam_eta + 2.0 * chi) * s12s12 \
        + ig * (4.0 * t_a_s22_s12 - 2.0 * a_s12)
    dy[S22S12] = -(1j * delta_a + 1.5 * gam_eta + chi) * s22s12 + eta * s12 \
        + ig * (t_ad_s12_s12 - t_a_s21_s12 + 2.0 * t_a_s22_s22 - a_s22)
    dy[S22S22] = -2.0 * gam_eta * s22s22 + 2.0 * eta * s22 \
        + 2.0 * ig * (t_ad_s22_s12 - t_a_s21_s22)
    return dy


@njit
def backaction_rhs(y, t, p):
    """Wiener-increment coefficient of the packed moment vector."""
    _, _, kappa, _, _, _, _, _, _, _, _, delta_l, xi = p
    out = np.zeros(12, dtype=np.complex128)
    if xi <= 0.0:
        return out

    a = y[A]
    aa = y[AA]
    ada = y[ADA]
    s12 = y[S12]
    s22 = y[S22]
    ad_s12 = y[AD_S12]
    a_s12 = y[A_S12]
    a_s22 = y[A_S22]

    ac = np.conj(a)
    s12c = np.conj(s12)

    amp = np.sqrt(xi * kappa / 2.0)
    ph = np.exp(1j * delta_l * t)
    phc = np.conj(ph)

    # first-order coefficients b[o] = amp*(ph*cov(o,a) + phc*cov(adag,o))
    b_a = amp * (ph * (aa - a * a) + phc * (ada - ac * a))
    b_s12 = amp * (ph * (a_s12 - s12 * a) + phc * (ad_s12 - ac * s12))
    b_s22 = amp * (ph * (a_s22 - s22 * a) + phc * (np.conj(a_s22) - ac * s22))

    out[A] = b_a
    out[S12] = b_s12
    out[S22] = b_s22
    # pair moments: closure makes the coefficient bilinear in the factors
    out[AA] = 2.0 * a * b_a
    out[ADA] = ac * b_a + a * np.conj(b_a)
    out[AD_S12] = ac * b_s12 + s12 * np.conj(b_a)
    out[A_S12] = a * b_s12 + s12 * b_a
    out[A_S22] = a * b_s22 + s22 * b_a
    out[S21S12] = s12c * b_s12 + s12 * np.conj(b_s12)
    out[S12S12] = 2.0 * s12 * b_s12
    out[S22S12] = s22 * b_s12 + s12 * b_s22
    out[S22S22] = 2.0 * s22 * b_s22
    return out


def _check_finite(vec: np.ndarray, t: float):
    if np.all(np.isfinite(vec)):
        return
    for i in range(NMOMENTS):
        if not np.isfinite(vec[i]):
            raise DivergenceError(MOMENT_NAMES[i], t, vec[i])


def drift(state: CumulantState, params: SystemParams, t: float,
          schedule: PumpSchedule | None = None) -> CumulantState:
    """Deterministic time derivative d<o>/dt of every moment."""
    vec = state.as_array()
    _check_finite(vec, t)
    return CumulantState.from_array(drift_rhs(vec, t, _params_tuple(params, schedule)))


def backaction(state: CumulantState, params: SystemParams, t: float) -> CumulantState:
    """Coefficient of the Wiener increment dW for every moment."""
    vec = state.as_array()
    _check_finite(vec, t)
    return CumulantState.from_array(backaction_rhs(vec, t, _params_tuple(params)))


def initial_state(kind: str = "ground", s22: float = 0.0,
                  s12: complex = 0.0) -> CumulantState:
    """Factorized (zero-cumulant) initial state with the field in vacuum.

    kind: 'ground', 'excited', or 'product' (uses the s22/s12 arguments).
    """
    if kind == "ground":
        s22, s12 = 0.0, 0.0j
    elif kind == "excited":
        s22, s12 = 1.0, 0.0j
    elif kind == "product":
        s12 = complex(s12)
        if not 0.0 <= s22 <= 1.0:
            raise ValueError(f"s22 must lie in [0, 1], got {s22}")
        if abs(s12) ** 2 > s22 * (1.0 - s22) + 1e-12:
            raise ValueError(
                f"unphysical product state: |s12|^2 = {abs(s12)**2:.3g} exceeds "
                f"s22(1-s22) = {s22 * (1.0 - s22):.3g}")
    else:
        raise ValueError(f"unknown initial state kind '{kind}'")
    s12 = complex(s12)
    return CumulantState(
        s12=s12, s22=s22,
        s21s12=abs(s12) ** 2, s12s12=s12 * s12,
        s22s12=s22 * s12, s22s22=s22 * s22,
    )
