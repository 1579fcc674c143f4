"""Brute-force reference solver: full Lindblad master equation for small N.

Represents the joint state of N two-level atoms and a photon mode truncated
at n_max in the full product space (dim = 2^N * (n_max+1)), and integrates
the master equation with a fixed-step classical RK4 scheme.  Used to validate
the closed moment equations; not a performance target.

Basis ordering: atoms little-endian (atom k is bit k of the atomic index,
bit value 1 = excited), Fock index outermost, i.e. basis state
|n> (x) |b_{N-1} ... b_0> sits at index n * 2^N + b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cumulant import CumulantState
from .params import PumpSchedule, SystemParams


class FockCutoffError(RuntimeError):
    """Top Fock level acquired non-negligible population; raise n_max."""


def default_n_max(n_atoms: int) -> int:
    return max(8, 4 * n_atoms)


def _atom_op(op2: np.ndarray, k: int, n_atoms: int, n_max: int) -> sp.csr_matrix:
    """Embed a single-atom 2x2 operator on atom k into the full space."""
    m = sp.identity(1, format="csr", dtype=np.complex128)
    for bit in range(n_atoms):
        factor = sp.csr_matrix(op2.astype(np.complex128)) if bit == k \
            else sp.identity(2, format="csr", dtype=np.complex128)
        # atom bit grows to the left (little-endian index)
        m = sp.kron(factor, m, format="csr")
    return sp.kron(sp.identity(n_max + 1, format="csr", dtype=np.complex128),
                   m, format="csr")


def _fock_annihilation(n_max: int) -> np.ndarray:
    a = np.zeros((n_max + 1, n_max + 1), dtype=np.complex128)
    for nph in range(1, n_max + 1):
        a[nph - 1, nph] = math.sqrt(nph)
    return a


# single-atom operators in the |1>, |2> = (ground, excited) basis
_S12 = np.array([[0, 1], [0, 0]], dtype=np.complex128)   # |1><2|
_S21 = _S12.T.conj()
_S22 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
_SZ = np.array([[-1, 0], [0, 1]], dtype=np.complex128)   # s22 - s11


@dataclass
class SystemOperators:
    """Sparse operators of the full atoms+mode space for a given (N, n_max)."""

    n_atoms: int
    n_max: int
    a: sp.csr_matrix = field(init=False)
    s12: list = field(init=False)
    s21: list = field(init=False)
    s22: list = field(init=False)
    sz: list = field(init=False)

    def __post_init__(self):
        n, n_max = self.n_atoms, self.n_max
        a_f = _fock_annihilation(n_max)
        dim_at = 2 ** n
        self.a = sp.kron(sp.csr_matrix(a_f),
                         sp.identity(dim_at, format="csr", dtype=np.complex128),
                         format="csr")
        self.s12 = [_atom_op(_S12, k, n, n_max) for k in range(n)]
        self.s21 = [_atom_op(_S21, k, n, n_max) for k in range(n)]
        self.s22 = [_atom_op(_S22, k, n, n_max) for k in range(n)]
        self.sz = [_atom_op(_SZ, k, n, n_max) for k in range(n)]

    @property
    def dim(self) -> int:
        return 2 ** self.n_atoms * (self.n_max + 1)


@dataclass
class DensityState:
    """Full density matrix plus the bookkeeping needed for validity checks."""

    rho: np.ndarray
    n_atoms: int
    n_max: int

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def trace(self) -> complex:
        return np.trace(self.rho)

    def top_fock_population(self) -> float:
        dim_at = 2 ** self.n_atoms
        start = self.n_max * dim_at
        return float(np.real(np.trace(self.rho[start:, start:])))

    def check(self, trace_tol=1e-9, herm_tol=1e-12, eig_tol=1e-9, fock_tol=1e-6):
        errs = []
        if abs(self.trace() - 1.0) > trace_tol:
            errs.append(f"trace deviates: {self.trace()}")
        if np.max(np.abs(self.rho - self.rho.conj().T)) > herm_tol:
            errs.append("not Hermitian")
        evals = np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))
        if evals.min() < -eig_tol:
            errs.append(f"negative eigenvalue {evals.min():.3e}")
        if self.top_fock_population() > fock_tol:
            errs.append(f"top Fock population {self.top_fock_population():.3e}")
        return errs


def ground_state(n_atoms: int, n_max: int | None = None) -> DensityState:
    n_max = default_n_max(n_atoms) if n_max is None else n_max
    dim = 2 ** n_atoms * (n_max + 1)
    rho = np.zeros((dim, dim), dtype=np.complex128)
    rho[0, 0] = 1.0
    return DensityState(rho=rho, n_atoms=n_atoms, n_max=n_max)


def pure_state(atom_vec: np.ndarray, n_atoms: int,
               n_max: int | None = None) -> DensityState:
    """Density matrix for (atomic pure state) x (field vacuum)."""
    n_max = default_n_max(n_atoms) if n_max is None else n_max
    dim_at = 2 ** n_atoms
    if atom_vec.shape != (dim_at,):
        raise ValueError(f"atomic state must have length {dim_at}")
    atom_vec = atom_vec / np.linalg.norm(atom_vec)
    full = np.zeros(dim_at * (n_max + 1), dtype=np.complex128)
    full[:dim_at] = atom_vec
    return DensityState(rho=np.outer(full, full.conj()),
                        n_atoms=n_atoms, n_max=n_max)


class LindbladRHS:
    """Right-hand side of the master equation, precomputed in sparse form."""

    def __init__(self, params: SystemParams, ops: SystemOperators,
                 schedule: PumpSchedule | None = None):
        self.params = params
        self.ops = ops
        self.schedule = schedule or PumpSchedule.from_params(params)
        p = params
        h0 = p.atom_detuning * sum(ops.s22)           # rotating frame at omega_c
        h0 = h0 + p.coupling * sum(
            ops.a.getH() @ ops.s12[k] + ops.s21[k] @ ops.a
            for k in range(ops.n_atoms))
        self.h0 = sp.csr_matrix(h0)
        # (rate, L, Ldag L) per channel; pump listed separately for the window
        self.channels = [(p.cavity_loss, ops.a)]
        self.channels += [(p.atom_decay, ops.s12[k]) for k in range(ops.n_atoms)]
        self.channels += [(0.5 * p.dephasing, ops.sz[k]) for k in range(ops.n_atoms)]
        self.pump_ops = [ops.s21[k] for k in range(ops.n_atoms)]
        self._prep = [(rate, L.toarray(), (L.getH() @ L).toarray())
                      for rate, L in self.channels if rate > 0.0]
        self._pump_prep = [(L.toarray(), (L.getH() @ L).toarray())
                           for L in self.pump_ops]
        self._adag = ops.a.getH().toarray()
        self._a = ops.a.toarray()
        self._h0 = self.h0.toarray()

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        p = self.params
        h = self._h0
        omega = self.schedule.drive_at(t)
        if omega != 0.0:
            phase = np.exp(1j * p.drive_detuning * t)
            amp = math.sqrt(p.cavity_loss / 2.0) * omega
            h = h + amp * (phase * self._a + np.conj(phase) * self._adag)
        out = -1j * (h @ rho - rho @ h)
        for rate, L, LdL in self._prep:
            out += rate * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
        eta = self.schedule.pump_at(t)
        if eta > 0.0:
            for L, LdL in self._pump_prep:
                out += eta * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
        return out


def evolve(rho0: DensityState, params: SystemParams, t_grid,
           dt_rk: float | None = None, schedule: PumpSchedule | None = None,
           check_cutoff: bool = True):
    """RK4 integration returning DensityStates at the requested grid times.

    t_grid must start at 0 and be increasing.  Raises FockCutoffError when the
    top Fock level exceeds 1e-6 population.  The raw trace drift is recorded
    on each returned state via the `trace()` method (no renormalization is
    applied to the stored matrices; renormalize for reporting only).
    """
    if params.n_atoms > 6:
        raise ValueError("exact solver limited to n_atoms <= 6")
    if rho0.n_max > 16:
        raise ValueError("exact solver limited to n_max <= 16")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must start at 0 and increase")
    ops = SystemOperators(rho0.n_atoms, rho0.n_max)
    rhs = LindbladRHS(params, ops, schedule)
    if dt_rk is None:
        fastest = max(params.max_rate(),
                      params.coupling * math.sqrt(params.n_atoms * rho0.n_max))
        dt_rk = 0.1 / fastest

    rho = rho0.rho.copy()
    out = [DensityState(rho=rho.copy(), n_atoms=rho0.n_atoms, n_max=rho0.n_max)]
    t = 0.0
    for t_target in t_grid[1:]:
        while t < t_target - 1e-15 * max(t_target, 1.0):
            h = min(dt_rk, t_target - t)
            k1 = rhs(t, rho)
            k2 = rhs(t + 0.5 * h, rho + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, rho + 0.5 * h * k2)
            k4 = rhs(t + h, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        state = DensityState(rho=rho.copy(), n_atoms=rho0.n_atoms, n_max=rho0.n_max)
        if check_cutoff and state.top_fock_population() > 1e-6:
            needed = rho0.n_max * 2
            raise FockCutoffError(
                f"top Fock population {state.top_fock_population():.2e} at "
                f"t = {t:.3e}; rerun with n_max >= {needed}")
        out.append(state)
    return out


def _expect(op, rho: np.ndarray) -> complex:
    return complex((op @ rho).diagonal().sum()) if sp.issparse(op) \
        else complex(np.trace(op @ rho))


def moments(state: DensityState, ops: SystemOperators | None = None,
            check_symmetry: bool = True) -> CumulantState:
    """Exact expectation values of the representative moment set.

    Permutation symmetry is verified by comparing the atom-0 and atom-1
    marginals; a broken-symmetry state raises ValueError.
    """
    ops = ops or SystemOperators(state.n_atoms, state.n_max)
    rho = state.rho
    n = state.n_atoms
    a = ops.a
    vals = CumulantState(
        a=_expect(a, rho),
        aa=_expect(a @ a, rho),
        ada=_expect(a.getH() @ a, rho),
        s12=_expect(ops.s12[0], rho),
        s22=_expect(ops.s22[0], rho),
        ad_s12=_expect(a.getH() @ ops.s12[0], rho),
        a_s12=_expect(a @ ops.s12[0], rho),
        a_s22=_expect(a @ ops.s22[0], rho),
    )
    if n >= 2:
        vals.s21s12 = _expect(ops.s21[0] @ ops.s12[1], rho)
        vals.s12s12 = _expect(ops.s12[0] @ ops.s12[1], rho)
        vals.s22s12 = _expect(ops.s22[0] @ ops.s12[1], rho)
        vals.s22s22 = _expect(ops.s22[0] @ ops.s22[1], rho)
    if check_symmetry and n >= 2:
        for name, op0, op1 in (("s22", ops.s22[0], ops.s22[1]),
                               ("s12", ops.s12[0], ops.s12[1])):
            d = abs(_expect(op0, rho) - _expect(op1, rho))
            if d > 1e-9:
                raise ValueError(
                    f"permutation symmetry broken: atom marginals of {name} "
                    f"differ by {d:.3e}")
    return vals


def derivative_moments(state: DensityState, params: SystemParams,
                       t: float = 0.0, ops: SystemOperators | None = None,
                       schedule: PumpSchedule | None = None) -> CumulantState:
    """Exact d<o>/dt of every representative moment, Tr[o * L(rho)]."""
    ops = ops or SystemOperators(state.n_atoms, state.n_max)
    rhs = LindbladRHS(params, ops, schedule)
    drho = DensityState(rho=rhs(t, state.rho), n_atoms=state.n_atoms,
                        n_max=state.n_max)
    return moments(drho, ops, check_symmetry=False)


_THIRD_ORDER = (
    # (label, factors as attribute spec) for the closures used in the drift
    ("ada_s22", ("ad", "a", "s22_1")),
    ("aa_s22", ("a", "a", "s22_1")),
    ("ada_s12", ("ad", "a", "s12_1")),
    ("aa_s21", ("a", "a", "s21_1")),
    ("ad_s22_s12", ("ad", "s22_1", "s12_2")),
    ("a_s21_s12", ("a", "s21_1", "s12_2")),
    ("a_s22_s12", ("a", "s22_1", "s12_2")),
    ("ad_s12_s12", ("ad", "s12_1", "s12_2")),
    ("a_s22_s22", ("a", "s22_1", "s22_2")),
)


def _factor_op(tag: str, ops: SystemOperators):
    kind, _, idx = tag.partition("_")
    if tag == "a":
        return ops.a
    if tag == "ad":
        return ops.a.getH()
    return {"s12": ops.s12, "s21": ops.s21, "s22": ops.s22}[kind][int(idx) - 1]


def third_cumulants(state: DensityState, ops: SystemOperators | None = None) -> dict:
    """Exact third-order cumulant magnitude for each closure used in the drift.

    Returns {label: |<xyz> - closure(<.>)|}; all zero on product states.
    """
    if state.n_atoms < 2:
        raise ValueError("third cumulants need n_atoms >= 2")
    ops = ops or SystemOperators(state.n_atoms, state.n_max)
    rho = state.rho
    out = {}
    for label, tags in _THIRD_ORDER:
        mats = [_factor_op(t, ops) for t in tags]
        triple = _expect(mats[0] @ mats[1] @ mats[2], rho)
        singles = [_expect(m, rho) for m in mats]
        pairs = [_expect(mats[i] @ mats[j], rho)
                 for i, j in ((0, 1), (0, 2), (1, 2))]
        closure = (pairs[0] * singles[2] + pairs[1] * singles[1]
                   + pairs[2] * singles[0]
                   - 2.0 * singles[0] * singles[1] * singles[2])
        out[label] = abs(triple - closure)
    return out


def second_moment_scale(vals: CumulantState) -> float:
    """Magnitude scale of the second-order moments, for closure-error gating."""
    return max(abs(vals.aa), abs(vals.ada), abs(vals.ad_s12), abs(vals.a_s12),
               abs(vals.a_s22), abs(vals.s21s12), abs(vals.s12s12),
               abs(vals.s22s12), abs(vals.s22s22))


def collective_spin_squared(state: DensityState,
                            ops: SystemOperators | None = None) -> float:
    """Exact <J^2> of the collective pseudo-spin."""
    ops = ops or SystemOperators(state.n_atoms, state.n_max)
    n = state.n_atoms
    jp = sum(ops.s21)
    jm = sum(ops.s12)
    jz = sum(ops.s22) - 0.5 * n * sp.identity(ops.dim, format="csr",
                                              dtype=np.complex128)
    j2 = jz @ jz + 0.5 * (jp @ jm + jm @ jp)
    return float(np.real(_expect(j2, state.rho)))
