"""Euler-Maruyama integration of the moment equations over seeded Wiener noise.

Trajectories are reproducible: the Wiener increments come from a counter-based
Philox stream keyed by (seed, trajectory index), so ensembles parallelize
without sequence overlap and identical inputs give bit-identical records.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cumulant import (A, ADA, IMAG_TOL, MOMENT_NAMES, NMOMENTS, REAL_MOMENTS,
                       S21S12, S22, S22S22, CumulantState, DivergenceError,
                       backaction_rhs, drift_rhs, _params_tuple, njit)
from .params import PumpSchedule, SystemParams

DEFAULT_DT = 1e-9
DT_RATE_CEILING = 0.02         # hard limit on dt * fastest rate
DIVERGENCE_FACTOR = 1e6        # |moment| > 1e6 * N aborts
POSITIVITY_FLAG_FACTOR = 1e-6  # negativity beyond 1e-6 * N flags the run

_REAL_IDX = np.array(REAL_MOMENTS, dtype=np.int64)

# status codes returned by the integration kernel
_OK, _NONFINITE, _DIVERGED = 0, 1, 2


def wiener_increments(n_steps: int, dt: float, seed: int, stream: int = 0) -> np.ndarray:
    """i.i.d. Normal(0, dt) increments from the (seed, stream) Philox key."""
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(n_steps) * np.sqrt(dt)


@njit
def _sanitize_real(y, tol_out):
    """Drop imaginary parts of real-tagged moments, tracking the worst excess."""
    for k in (ADA, S22, S21S12, S22S22):
        v = y[k]
        im = abs(v.imag)
        lim = IMAG_TOL * (1.0 + abs(v))
        if im > lim and im > tol_out[0]:
            tol_out[0] = im
        y[k] = complex(v.real, 0.0)


@njit
def _em_step(y, t, dt, dw, p, stochastic):
    dy = drift_rhs(y, t, p)
    if stochastic:
        b = backaction_rhs(y, t, p)
        return y + dy * dt + b * dw
    return y + dy * dt


@njit
def _integrate(y0, n_steps, dt, dws, p, record_every, out_states, out_field, diag):
    """Core loop.  Returns (status, failing step, failing moment index).

    diag[0]: worst imaginary excess on real-tagged moments
    diag[1]: most negative photon number seen
    diag[2]: most negative excited population seen
    diag[3]: largest excited population above one
    """
    n_atoms = p[0]
    xi = p[12]
    stochastic = xi > 0.0
    limit = DIVERGENCE_FACTOR * n_atoms
    y = y0.copy()
    out_states[0] = y
    out_field[0] = y[A]
    rec = 1
    for i in range(n_steps):
        t = i * dt
        y = _em_step(y, t, dt, dws[i], p, stochastic)
        for k in range(NMOMENTS):
            v = y[k]
            if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                return _NONFINITE, i, k
            if abs(v) > limit:
                return _DIVERGED, i, k
        _sanitize_real(y, diag)
        if y[ADA].real < diag[1]:
            diag[1] = y[ADA].real
        if y[S22].real < diag[2]:
            diag[2] = y[S22].real
        if y[S22].real - 1.0 > diag[3]:
            diag[3] = y[S22].real - 1.0
        out_field[i + 1] = y[A]
        if (i + 1) % record_every == 0:
            out_states[rec] = y
            rec += 1
    return _OK, n_steps, -1


def step(state: CumulantState, params: SystemParams, t: float, dt: float,
         dW: float, schedule: PumpSchedule | None = None) -> CumulantState:
    """One explicit Euler-Maruyama step: state + drift*dt + backaction*dW."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not np.isfinite(dW):
        raise ValueError("dW must be finite")
    p = _params_tuple(params, schedule)
    y = state.as_array()
    y = _em_step(y, t, dt, dW, p, p[12] > 0.0)
    for k in range(NMOMENTS):
        if not np.isfinite(y[k]):
            raise DivergenceError(MOMENT_NAMES[k], t + dt, y[k])
        if abs(y[k]) > DIVERGENCE_FACTOR * params.n_atoms:
            raise DivergenceError(MOMENT_NAMES[k], t + dt, y[k])
    diag = np.zeros(1)
    _sanitize_real(y, diag)
    if diag[0] > 0.0:
        warnings.warn(f"imaginary excess {diag[0]:.2e} on a real-tagged moment",
                      RuntimeWarning, stacklevel=2)
    return CumulantState.from_array(y)


@dataclass
class TrajectoryRecord:
    """One stochastic (or deterministic) run of the moment equations."""

    times: np.ndarray              # recorded times, spacing record_every*dt
    states: np.ndarray             # (len(times), 12) complex
    dWs: np.ndarray | None         # full-resolution increments, or None
    seed: int
    params: SystemParams
    dt: float
    record_every: int = 1
    field_amp: np.ndarray | None = None   # full-resolution <a>, always kept
    valid: bool = True
    diagnostics: dict = field(default_factory=dict)

    def moment(self, name: str) -> np.ndarray:
        return self.states[:, MOMENT_NAMES.index(name)]

    def state_at(self, i: int) -> CumulantState:
        return CumulantState.from_array(self.states[i])

    @property
    def n_steps(self) -> int:
        return len(self.field_amp) - 1


def _check_dt(params: SystemParams, dt: float):
    rate = params.max_rate()
    if dt * rate > DT_RATE_CEILING:
        raise ValueError(
            f"dt = {dt:.3e} does not resolve the fastest rate {rate:.3e} rad/s "
            f"(dt*rate = {dt * rate:.3f} > {DT_RATE_CEILING})")


def run_trajectory(params: SystemParams, schedule: PumpSchedule | None = None,
                   t_end: float = 150e-6, dt: float = DEFAULT_DT,
                   seed: int = 0, stream: int = 0, record_every: int = 1,
                   initial: CumulantState | None = None,
                   store_dws: bool = True) -> TrajectoryRecord:
    """Integrate one trajectory; bit-identical for identical inputs."""
    from .cumulant import initial_state
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    _check_dt(params, dt)
    schedule = schedule or PumpSchedule.from_params(params)
    y0 = (initial or initial_state("ground")).as_array()
    n_steps = int(round(t_end / dt))
    p = _params_tuple(params, schedule)
    dws = wiener_increments(n_steps, dt, seed, stream) if p[12] > 0.0 \
        else np.zeros(n_steps)
    n_rec = n_steps // record_every + 1
    out_states = np.empty((n_rec, NMOMENTS), dtype=np.complex128)
    out_field = np.empty(n_steps + 1, dtype=np.complex128)
    diag = np.zeros(4)
    status, istep, imoment = _integrate(
        y0, n_steps, dt, dws, p, record_every, out_states, out_field, diag)
    if status != _OK:
        raise DivergenceError(MOMENT_NAMES[imoment], (istep + 1) * dt)

    times = np.arange(n_rec) * (record_every * dt)
    diagnostics = {
        "imag_excess_max": diag[0],
        "min_photon_number": diag[1],
        "min_excited_population": diag[2],
        "excited_population_excess": diag[3],
    }
    valid = True
    neg_limit = POSITIVITY_FLAG_FACTOR * params.n_atoms
    if diag[1] < -neg_limit or diag[2] < -neg_limit or diag[3] > neg_limit:
        valid = False
        warnings.warn(
            f"positivity violation beyond {neg_limit:.1e}: {diagnostics}",
            RuntimeWarning, stacklevel=2)
    elif diag[1] < 0.0 or diag[2] < 0.0:
        diagnostics["positivity_note"] = "small closure negativity (within tolerance)"
    if diag[0] > 0.0:
        valid = False
        warnings.warn(f"imaginary excess {diag[0]:.2e} on real-tagged moment",
                      RuntimeWarning, stacklevel=2)
    return TrajectoryRecord(
        times=times, states=out_states,
        dWs=(dws if (store_dws and p[12] > 0.0) else None),
        seed=seed, params=params, dt=dt, record_every=record_every,
        field_amp=out_field, valid=valid, diagnostics=diagnostics)


@dataclass
class EnsembleResult:
    """Per-time mean and standard error over an ensemble of trajectories."""

    times: np.ndarray
    mean: np.ndarray               # (n_times, 12) complex
    se_real: np.ndarray            # (n_times, 12) standard error of Re
    se_imag: np.ndarray            # (n_times, 12) standard error of Im
    n_success: int
    n_failed: int
    failures: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)

    def moment_mean(self, name: str) -> np.ndarray:
        return self.mean[:, MOMENT_NAMES.index(name)]

    def moment_se(self, name: str) -> np.ndarray:
        i = MOMENT_NAMES.index(name)
        return self.se_real[:, i]


def run_ensemble(params: SystemParams, schedule: PumpSchedule | None = None,
                 t_end: float = 150e-6, dt: float = DEFAULT_DT,
                 n_traj: int = 1, base_seed: int = 0, record_every: int = 50,
                 initial: CumulantState | None = None,
                 keep_trajectories: bool = False) -> EnsembleResult:
    """Run n_traj independent trajectories and aggregate mean/SE per time.

    Trajectory i draws its noise from the (base_seed, i) stream, so the
    aggregation order cannot affect the result.  Failed trajectories are
    reported and excluded from the statistics.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    acc = acc2_re = acc2_im = None
    times = None
    kept, failures = [], []
    n_ok = 0
    for i in range(n_traj):
        try:
            rec = run_trajectory(params, schedule, t_end, dt, seed=base_seed,
                                 stream=i, record_every=record_every,
                                 initial=initial, store_dws=keep_trajectories)
        except DivergenceError as err:
            failures.append((i, str(err)))
            continue
        if times is None:
            times = rec.times
            acc = np.zeros_like(rec.states)
            acc2_re = np.zeros(rec.states.shape)
            acc2_im = np.zeros(rec.states.shape)
        acc += rec.states
        acc2_re += rec.states.real ** 2
        acc2_im += rec.states.imag ** 2
        n_ok += 1
        if keep_trajectories:
            kept.append(rec)
    if n_ok == 0:
        raise DivergenceError("all trajectories", t_end)
    mean = acc / n_ok
    if n_ok > 1:
        var_re = (acc2_re - n_ok * mean.real ** 2) / (n_ok - 1)
        var_im = (acc2_im - n_ok * mean.imag ** 2) / (n_ok - 1)
        se_re = np.sqrt(np.clip(var_re, 0.0, None) / n_ok)
        se_im = np.sqrt(np.clip(var_im, 0.0, None) / n_ok)
    else:
        se_re = np.zeros(mean.shape)
        se_im = np.zeros(mean.shape)
    return EnsembleResult(times=times, mean=mean, se_real=se_re, se_imag=se_im,
                          n_success=n_ok, n_failed=len(failures),
                          failures=failures, trajectories=kept)
