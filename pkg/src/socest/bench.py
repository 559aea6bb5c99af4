"""Monte Carlo benchmark harness: MAE metric, synthetic drive profiles, sweeps.

Ground truth comes from the toolkit's own cell simulator; the estimator is
handed independently perturbed parameters and noise-corrupted signals, so
model mismatch is present even though the truth model is the same family.
Trials are independent, each with its own RNG stream derived from the master
seed, the swept axis value and the trial index, which makes results
reproducible and invariant to axis reordering.
"""
from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ecm import CellState, EcmParams, OcvTable, Profile, simulate_arrays
from .filters import ESTIMATOR_KINDS, estimator_run, make_filter_state

__all__ = [
    "NoiseSpec",
    "SweepSpec",
    "TrialConfig",
    "BenchResult",
    "mae",
    "make_drive_profile",
    "perturb_params",
    "run_trial",
    "run_sweep",
]

SWEEP_AXES = ("window_size", "noise_power", "parameter_error")


@dataclass(frozen=True)
class NoiseSpec:
    """AWGN variances applied to the measured current and voltage."""

    current_noise_var: float = 1e-2  # A^2
    voltage_noise_var: float = 1e-2  # V^2
    seed: int = 0

    def __post_init__(self):
        if self.current_noise_var < 0 or self.voltage_noise_var < 0:
            raise ValueError("noise variances must be nonnegative")


@dataclass(frozen=True)
class TrialConfig:
    """Per-trial settings shared across a sweep.

    `init_soc_offset` is the error injected into every estimator's initial
    SoC; `parameter_error` is the relative perturbation applied uniformly to
    (r0, r1, r2, c1, c2) handed to the estimator.
    """

    z0_true: float = 0.9
    init_soc_offset: float = -0.1
    parameter_error: float = 0.0
    window: int = 128
    default_dt: float = 1.0


@dataclass(frozen=True)
class SweepSpec:
    """One benchmark sweep: an axis, its values, and the trial budget."""

    axis: str
    axis_values: tuple
    n_trials: int = 50
    base_noise: NoiseSpec = NoiseSpec()
    estimators: tuple[str, ...] = ESTIMATOR_KINDS
    master_seed: int = 0

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.axis_values:
            raise ValueError("axis_values must be non-empty")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATOR_KINDS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        object.__setattr__(self, "axis_values", tuple(self.axis_values))


@dataclass(frozen=True)
class BenchResult:
    """Tidy sweep output: one row per (axis value, estimator)."""

    axis: str
    rows: tuple[tuple, ...]  # (axis_value, estimator, mae_mean, ci_lo, ci_hi)

    def for_estimator(self, kind: str) -> list[tuple]:
        return [r for r in self.rows if r[1] == kind]


def mae(estimate, truth, mask=None) -> float:
    """Mean absolute SoC error in percent, optionally over selected samples."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must have the same length")
    err = np.abs(estimate - truth)
    if mask is not None:
        err = err[np.asarray(mask, dtype=bool)]
    if err.size == 0:
        raise ValueError("no samples selected for MAE evaluation")
    return float(err.mean() * 100.0)


def make_drive_profile(
    duration: float,
    dt: float = 1.0,
    seed: int = 0,
    max_current: float = 10.0,
    discharge_fraction: float = 0.7,
) -> Profile:
    """Reproducible piecewise-constant drive current, net-discharging on average.

    Mimics a standard drive cycle: the run is split into intensity phases
    (300-600 s, akin to low/medium/high speed sections), each built from
    mixed charge/discharge segments 10-120 s long with magnitudes up to the
    phase's share of `max_current`. Deterministic per seed.
    """
    if duration <= dt:
        raise ValueError("duration must exceed dt")
    rng = np.random.default_rng(seed)
    n = int(duration / dt)
    current = np.empty(n)
    k = 0
    while k < n:
        phase_end = min(k + int(rng.uniform(300.0, 600.0) / dt), n)
        intensity = rng.uniform(0.15, 1.0)
        while k < phase_end:
            seg = min(int(rng.uniform(10.0, 120.0) / dt) or 1, phase_end - k)
            magnitude = rng.uniform(0.0, max_current * intensity)
            sign = -1.0 if rng.random() < discharge_fraction else 1.0
            current[k : k + seg] = sign * magnitude
            k += seg
    return Profile.uniform(current, dt=dt)


def perturb_params(params: EcmParams, relative_error: float) -> EcmParams:
    """Uniform relative perturbation of the five passive components."""
    if relative_error <= -1.0:
        raise ValueError("relative_error must be > -1")
    f = 1.0 + relative_error
    return replace(
        params, r0=params.r0 * f, r1=params.r1 * f, c1=params.c1 * f,
        r2=params.r2 * f, c2=params.c2 * f,
    )


def run_trial(
    params_true: EcmParams,
    params_filter: EcmParams,
    profile: Profile,
    noise: NoiseSpec,
    kind: str,
    window: int = 128,
    trial: TrialConfig = TrialConfig(),
) -> float:
    """Simulate truth, corrupt the measured signals, estimate, score.

    The truth trajectory stays clean; noise only touches what the estimator
    sees. Returns the MAE in percent SoC.
    """
    z_true, _, _, v_true, _ = simulate_arrays(
        params_true, CellState(z=trial.z0_true), profile, trial.default_dt
    )
    rng = np.random.default_rng(noise.seed)
    i_meas = profile.i + rng.normal(0.0, np.sqrt(noise.current_noise_var), len(profile))
    v_meas = v_true + rng.normal(0.0, np.sqrt(noise.voltage_noise_var), len(profile))
    noisy = profile.with_signals(i=i_meas, v=v_meas)

    z0 = min(max(trial.z0_true + trial.init_soc_offset, 0.0), 1.0)
    init = make_filter_state(z0)
    estimate = estimator_run(
        kind, params_filter, noisy, init, window=window, default_dt=trial.default_dt
    )
    return mae(estimate, z_true)


def _trial_seed(master_seed: int, axis_value, trial_index: int) -> int:
    """Seed derived from (master seed, axis value, trial); reordering the
    axis values therefore cannot change any individual trial's result."""
    value_bits = struct.unpack("<Q", struct.pack("<d", float(axis_value)))[0]
    ss = np.random.SeedSequence([master_seed, value_bits, trial_index])
    return int(ss.generate_state(1)[0])


def _sweep_trial_args(spec, params_true, params_filter, profile, trial):
    for axis_value in spec.axis_values:
        noise = spec.base_noise
        cfg = trial
        window = trial.window
        p_filter = params_filter
        if spec.axis == "window_size":
            window = int(axis_value)
        elif spec.axis == "noise_power":
            noise = replace(
                noise,
                current_noise_var=noise.current_noise_var * axis_value,
                voltage_noise_var=noise.voltage_noise_var * axis_value,
            )
        else:  # parameter_error
            p_filter = perturb_params(params_filter, float(axis_value))
        for kind in spec.estimators:
            for t in range(spec.n_trials):
                seeded = replace(noise, seed=_trial_seed(spec.master_seed, axis_value, t))
                yield (axis_value, kind, t), (
                    params_true, p_filter, profile, seeded, kind, window, cfg,
                )


def _run_one(args):
    key, call = args
    return key, run_trial(*call)


def run_sweep(
    spec: SweepSpec,
    params_true: EcmParams,
    profile: Profile,
    params_filter: EcmParams | None = None,
    trial: TrialConfig = TrialConfig(),
    n_jobs: int = 1,
) -> BenchResult:
    """Run a full sweep; mean MAE with normal-approximation 95% CIs.

    Trials are embarrassingly parallel (`n_jobs` processes); results are
    reduced in (axis value, estimator, trial) order regardless of completion
    order, so the output is deterministic.
    """
    if params_filter is None:
        params_filter = params_true
    jobs = list(_sweep_trial_args(spec, params_true, params_filter, profile, trial))
    results: dict[tuple, float] = {}
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for key, value in pool.map(_run_one, jobs, chunksize=4):
                results[key] = value
    else:
        for job in jobs:
            key, value = _run_one(job)
            results[key] = value

    rows = []
    for axis_value in spec.axis_values:
        for kind in spec.estimators:
            values = np.array(
                [results[(axis_value, kind, t)] for t in range(spec.n_trials)]
            )
            mean = float(values.mean())
            half = (
                1.96 * float(values.std(ddof=1)) / np.sqrt(spec.n_trials)
                if spec.n_trials > 1
                else 0.0
            )
            rows.append((axis_value, kind, mean, mean - half, mean + half))
    return BenchResult(axis=spec.axis, rows=tuple(rows))
