"""Heterodyne photocurrent, power spectra, line fits and Allan statistics.

The pipeline that turns one stochastic run into a clock reading:
photocurrent -> one-sided power spectrum -> Lorentzian fit of the beat peak
-> inferred optical frequency -> fractional frequency difference d_f.
Repeated cycles feed the two-sample (Allan) deviation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import SystemParams
from .sde import TrajectoryRecord, run_trajectory

DEFAULT_SPAN = 1e-4            # covers the ~0.05 ms signal plus margin
FIT_MAX_ITER = 200
FIT_RTOL = 1e-8


@dataclass
class PhotocurrentRecord:
    """Heterodyne detector current samples at the integration step."""

    times: np.ndarray
    current: np.ndarray
    dt: float

    def __post_init__(self):
        if len(self.times) != len(self.current):
            raise ValueError("times and current must have equal length")
        if not np.all(np.isfinite(self.current)):
            raise ValueError("photocurrent contains non-finite samples")


def photocurrent(traj: TrajectoryRecord, params: SystemParams,
                 shot_noise: bool = True) -> PhotocurrentRecord:
    """Detector current J(t_i) = sqrt(xi*kappa/2) Re[e^{-i dl t_i} <adag>(t_i)] + dW_i/dt.

    Uses the same increments dW_i that drove the state update at step i, so
    the record is consistent with the conditioned state.  `shot_noise=False`
    drops the dW/dt term (noise-free estimator harness).
    """
    if traj.field_amp is None:
        raise ValueError("trajectory lacks the full-resolution field amplitude")
    if shot_noise and (traj.dWs is None or len(traj.dWs) != traj.n_steps):
        raise ValueError("trajectory lacks the undecimated dW sequence "
                         "(rerun with store_dws=True and backaction enabled)")
    dt = traj.dt
    n = traj.n_steps
    t = np.arange(n) * dt
    adag = np.conj(traj.field_amp[:n])
    amp = math.sqrt(params.detection_efficiency * params.cavity_loss / 2.0)
    current = amp * np.real(np.exp(-1j * params.lo_detuning * t) * adag)
    if shot_noise:
        current = current + traj.dWs / dt
    return PhotocurrentRecord(times=t, current=current, dt=dt)


@dataclass
class PowerSpectrum:
    """One-sided power spectral density on a uniform frequency grid."""

    freqs: np.ndarray      # Hz, resolution 1/span
    power: np.ndarray
    span: float
    dt: float


def power_spectrum(record: PhotocurrentRecord, span: float | None = None,
                   window: str = "rectangular") -> PowerSpectrum:
    """One-sided magnitude-squared DFT of the current over [0, span].

    Normalized so that sum(power) * df equals the mean-square current
    (Parseval).  Only the rectangular window is supported.
    """
    if window != "rectangular":
        raise ValueError(f"unsupported window '{window}'")
    dt = record.dt
    if len(record.times) > 1:
        steps = np.diff(record.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("photocurrent sampling is not uniform")
    duration = len(record.current) * dt
    span = duration if span is None else span
    if span > duration * (1.0 + 1e-9):
        raise ValueError(f"span {span:.3e} exceeds record duration {duration:.3e}")
    m = int(round(span / dt))
    x = record.current[:m]
    spec = np.fft.rfft(x)
    power = (np.abs(spec) ** 2) * dt / m
    power[1:] *= 2.0
    if m % 2 == 0:
        power[-1] *= 0.5           # Nyquist bin is unpaired
    freqs = np.fft.rfftfreq(m, dt)
    return PowerSpectrum(freqs=freqs, power=power, span=m * dt, dt=dt)


def lorentzian(f, center, hwhm, amplitude, offset):
    return amplitude * hwhm ** 2 / ((f - center) ** 2 + hwhm ** 2) + offset


@dataclass
class SpectrumFit:
    """Lorentzian fit of the beat peak and the inferred clock numbers."""

    beat_freq: float               # fitted center, rad/s
    hwhm: float                    # fitted half width at half maximum, rad/s
    amplitude: float
    offset: float
    snr: float                     # amplitude / offset
    atom_freq_estimate: float      # omega_l - beat, rad/s
    fractional_diff: float         # (estimate - omega_a) / omega_a
    converged: bool
    residual_norm: float
    n_iterations: int = 0

    @property
    def beat_freq_hz(self) -> float:
        return self.beat_freq / (2.0 * math.pi)

    @property
    def fwhm(self) -> float:
        return 2.0 * self.hwhm


def _fit_lorentzian_core(freqs, power, p0):
    """Damped Gauss-Newton least squares with step-halving line search."""
    p = np.array(p0, dtype=float)

    def residuals(q):
        return lorentzian(freqs, *q) - power

    r = residuals(p)
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, FIT_MAX_ITER + 1):
        center, hwhm, amp, off = p
        d = (freqs - center) ** 2 + hwhm ** 2
        shape = hwhm ** 2 / d
        # Jacobian of the model in (center, hwhm, amplitude, offset)
        jac = np.empty((len(freqs), 4))
        jac[:, 0] = amp * hwhm ** 2 * 2.0 * (freqs - center) / d ** 2
        jac[:, 1] = amp * 2.0 * hwhm * (d - hwhm ** 2) / d ** 2
        jac[:, 2] = shape
        jac[:, 3] = 1.0
        g = jac.T @ r
        h = jac.T @ jac
        try:
            step_full = np.linalg.solve(h + 1e-12 * np.trace(h) * np.eye(4), -g)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        improved = False
        for _ in range(30):
            q = p + scale * step_full
            q[1] = abs(q[1])
            rq = residuals(q)
            cq = float(rq @ rq)
            if cq < cost:
                rel = np.max(np.abs(q - p) / (np.abs(p) + 1e-300))
                p, r, cost = q, rq, cq
                improved = True
                if rel < FIT_RTOL:
                    converged = True
                break
            scale *= 0.5
        if not improved:
            # line search exhausted: parameters no longer change
            converged = True
        if converged:
            break
    return p, math.sqrt(cost), converged, it


def lorentzian_fit(spec: PowerSpectrum, params: SystemParams | None = None,
                   skip_dc_bins: int = 1) -> SpectrumFit:
    """Fit L(f) = A w^2/((f-f0)^2 + w^2) + B to the one-sided spectrum.

    Initial guess: f0 at the maximum bin, B at the median, A = peak - median,
    w from the half-crossing around the peak.  A missing dominant peak
    (max < 3x median) or non-convergence is reported via `converged`, never
    silently.  When `params` is given the beat is mapped back to the optical
    frequency as omega_f = omega_l - omega_beat (valid for omega_l > omega_a).
    """
    freqs = spec.freqs[skip_dc_bins:]
    power = spec.power[skip_dc_bins:]
    if len(freqs) < 8:
        raise ValueError("spectrum must have at least 8 bins")
    med = float(np.median(power))
    ipk = int(np.argmax(power))
    peak = float(power[ipk])
    f0 = float(freqs[ipk])
    dominant = peak > 3.0 * med

    half = med + 0.5 * (peak - med)
    above = power >= half
    lo = ipk
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = ipk
    while hi < len(power) - 1 and above[hi + 1]:
        hi += 1
    df = freqs[1] - freqs[0]
    w0 = max(0.5 * (freqs[hi] - freqs[lo] + df), 0.5 * df)

    p0 = (f0, w0, max(peak - med, 1e-300), max(med, 1e-300))
    if dominant:
        p, resid, converged, n_it = _fit_lorentzian_core(freqs, power, p0)
    else:
        p, resid, converged, n_it = np.array(p0), float("nan"), False, 0

    center_hz, hwhm_hz, amp, off = p
    beat = 2.0 * math.pi * center_hz
    if params is not None:
        atom_est = params.lo_freq - beat
        d_f = (atom_est - params.atom_freq) / params.atom_freq
    else:
        atom_est = float("nan")
        d_f = float("nan")
    snr = amp / off if off > 0 else float("inf")
    return SpectrumFit(beat_freq=beat, hwhm=2.0 * math.pi * abs(hwhm_hz),
                       amplitude=amp, offset=off, snr=snr,
                       atom_freq_estimate=atom_est, fractional_diff=d_f,
                       converged=bool(converged and dominant),
                       residual_norm=resid, n_iterations=n_it)


@dataclass
class CycleResult:
    """Outcome of one measurement cycle; y is None when the fit is rejected."""

    seed: int
    y: float | None
    fit: SpectrumFit

    @property
    def accepted(self) -> bool:
        return self.y is not None


def measurement_cycle(params: SystemParams, seed: int, span: float = DEFAULT_SPAN,
                      dt: float = 1e-9, t_end: float | None = None,
                      stream: int = 0) -> CycleResult:
    """One full cycle: pump -> pulse -> heterodyne record -> spectrum -> fit.

    Returns the fractional-frequency sample y = d_f, or a rejected-cycle
    marker (y = None) when no dominant peak is found or the fit fails.
    """
    if params.detection_efficiency <= 0.0:
        raise ValueError("measurement cycles require detection_efficiency > 0")
    t_end = span if t_end is None else t_end
    if t_end < span:
        raise ValueError("t_end must cover the requested span")
    n_steps = int(round(t_end / dt))
    traj = run_trajectory(params, t_end=t_end, dt=dt, seed=seed, stream=stream,
                          record_every=max(1, n_steps // 1000))
    spec = power_spectrum(photocurrent(traj, params), span=span)
    fit = lorentzian_fit(spec, params)
    guard = abs(params.lo_detuning)
    if fit.converged and abs(fit.atom_freq_estimate - params.atom_freq) > guard:
        warnings.warn(
            "fitted line maps outside the unambiguous window "
            f"(|omega_f - omega_a| > {guard:.3e}); cycle rejected",
            RuntimeWarning, stacklevel=2)
        return CycleResult(seed=seed, y=None, fit=fit)
    return CycleResult(seed=seed, y=(fit.fractional_diff if fit.converged else None),
                       fit=fit)


def run_cycles(params: SystemParams, n_cycles: int, base_seed: int = 0,
               span: float = DEFAULT_SPAN, dt: float = 1e-9,
               t_end: float | None = None) -> tuple[np.ndarray, list[CycleResult]]:
    """Run repeated cycles on independent noise streams.

    Returns (accepted samples, all cycle results); the rejection rate is
    len(samples)/n_cycles away from one.
    """
    results = [measurement_cycle(params, base_seed, span=span, dt=dt,
                                 t_end=t_end, stream=i)
               for i in range(n_cycles)]
    samples = np.array([r.y for r in results if r.accepted])
    return samples, results


@dataclass
class AllanSeries:
    """Fractional-frequency samples and their two-sample deviation."""

    cycle_time: float
    y: np.ndarray
    taus: np.ndarray
    sigma: np.ndarray
    n_pairs: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def allan_deviation(y, cycle_time: float, max_m: int | None = None) -> AllanSeries:
    """Non-overlapping two-sample deviation of cycle samples y.

    sigma^2(m*T_c) = 1/2 <(ybar_{k+1} - ybar_k)^2> over adjacent blocks of m
    consecutive samples, for m = 1, 2, 4, ... while at least two block pairs
    (three blocks) remain.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 4:
        raise ValueError("need at least 4 samples")
    if cycle_time <= 0:
        raise ValueError("cycle_time must be positive")
    taus, sigmas, pairs = [], [], []
    m = 1
    while max_m is None or m <= max_m:
        n_blocks = len(y) // m
        if n_blocks < 3:
            break
        blocks = y[:n_blocks * m].reshape(n_blocks, m).mean(axis=1)
        diffs = np.diff(blocks)
        taus.append(m * cycle_time)
        sigmas.append(math.sqrt(0.5 * np.mean(diffs ** 2)))
        pairs.append(len(diffs))
        m *= 2
    return AllanSeries(cycle_time=cycle_time, y=y, taus=np.array(taus),
                       sigma=np.array(sigmas), n_pairs=np.array(pairs, dtype=int))


def fit_allan_power_law(series: AllanSeries) -> tuple[float, float]:
    """Weighted log-log fit sigma(tau) = A (tau/1s)^p; returns (A, p).

    Weights are the block-pair counts, approximating inverse variances of the
    log-deviation estimates.
    """
    mask = series.sigma > 0
    x = np.log(series.taus[mask])
    z = np.log(series.sigma[mask])
    w = series.n_pairs[mask].astype(float)
    if len(x) < 2:
        raise ValueError("need at least two tau points")
    wsum = w.sum()
    xb = (w * x).sum() / wsum
    zb = (w * z).sum() / wsum
    p = (w * (x - xb) * (z - zb)).sum() / (w * (x - xb) ** 2).sum()
    log_a = zb - p * xb
    return math.exp(log_a), p
