"""SoC estimators: Coulomb counting, EKF, and two adaptive EKF variants.

The state is x = (z, v_r1, v_r2). The state transition is linear and
diagonal; only the output map is nonlinear (through the OCV curve), so the
EKF linearizes it with the row [OCV'(z), 1, 1]. The adaptive variants
re-estimate the noise covariances from a sliding window of residual
statistics held in circular buffers with running sums, so each step costs
O(1) regardless of the window size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .ecm import CellState, EcmParams, Profile, ocv_derivative, ocv_lookup

__all__ = [
    "NumericalFaultError",
    "LinearizedModel",
    "FilterState",
    "StepRecord",
    "WindowStats",
    "EstimatorKind",
    "coulomb_count_step",
    "linearize",
    "ekf_predict",
    "ekf_correct",
    "mle_adapt",
    "cm_adapt",
    "make_filter_state",
    "estimator_run",
]

EstimatorKind = Literal["cc", "ekf", "aekf-mle", "aekf-cm"]
ESTIMATOR_KINDS: tuple[str, ...] = ("cc", "ekf", "aekf-mle", "aekf-cm")

DEFAULT_SIGMA = (1e-7, 1e-8, 1e-8)  # initial process-noise diagonal
DEFAULT_SIGMA2 = 1e-3  # initial measurement-noise variance, V^2
DEFAULT_P0 = (1e-2, 1e-4, 1e-4)  # initial state-covariance diagonal
CM_VARIANCE_FLOOR = 1e-8  # V^2; keeps the matched R estimate positive


class NumericalFaultError(RuntimeError):
    """Covariance corruption detected (non-positive innovation variance)."""


@dataclass(frozen=True)
class LinearizedModel:
    """State-space matrices of the cell model at a fixed step size.

    A is diagonal: (1, exp(-dt/tau1), exp(-dt/tau2)). B routes the current
    into SoC and the RC branches. D is the ohmic feedthrough r0. The output
    row C depends on the linearization point and is computed per step.
    """

    a_diag: np.ndarray
    b_vector: np.ndarray
    d_scalar: float
    params: EcmParams
    dt: float

    def c_row(self, z: float) -> np.ndarray:
        return np.array([ocv_derivative(self.params.ocv, z), 1.0, 1.0])

    def output(self, x: np.ndarray, i: float) -> float:
        """Full nonlinear output map h(x) + D*i (OCV through the table)."""
        return ocv_lookup(self.params.ocv, x[0]) + self.d_scalar * i + x[1] + x[2]


def linearize(params: EcmParams, dt: float) -> LinearizedModel:
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    a1 = math.exp(-dt / (params.r1 * params.c1))
    a2 = math.exp(-dt / (params.r2 * params.c2))
    return LinearizedModel(
        a_diag=np.array([1.0, a1, a2]),
        b_vector=np.array([dt / params.q_max, params.r1 * (1 - a1), params.r2 * (1 - a2)]),
        d_scalar=params.r0,
        params=params,
        dt=dt,
    )


@dataclass
class FilterState:
    """Filter estimate: state vector, its covariance, and the noise covariances."""

    x: np.ndarray  # (z, v_r1, v_r2)
    p: np.ndarray  # 3x3 state covariance
    sigma: np.ndarray  # 3x3 process-noise covariance
    sigma2: float  # measurement-noise variance, V^2

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.p.copy(), self.sigma.copy(), self.sigma2)

    @property
    def cell_state(self) -> CellState:
        return CellState(float(self.x[0]), float(self.x[1]), float(self.x[2]))


@dataclass(frozen=True)
class StepRecord:
    """Residual statistics of one correction step, consumed by adaptation."""

    e_minus: float  # innovation (pre-fit residual), V
    e_plus: float  # post-fit residual, V
    k_gain: np.ndarray  # 3x1 Kalman gain
    cpc_term: float  # C P+ C^T, V^2
    cpc_minus: float  # C P- C^T, V^2 (used by covariance matching)


def make_filter_state(
    z0: float,
    p0_diag=DEFAULT_P0,
    sigma_diag=DEFAULT_SIGMA,
    sigma2: float = DEFAULT_SIGMA2,
) -> FilterState:
    """Generic initial filter state; adaptation overrides the noise terms."""
    return FilterState(
        x=np.array([z0, 0.0, 0.0]),
        p=np.diag(p0_diag).astype(float),
        sigma=np.diag(sigma_diag).astype(float),
        sigma2=float(sigma2),
    )


def coulomb_count_step(z: float, i: float, dt: float, q_max: float) -> float:
    """Pure current integration, clamped to [0, 1]."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return min(max(z + dt * i / q_max, 0.0), 1.0)


def ekf_predict(fs: FilterState, model: LinearizedModel, i: float) -> FilterState:
    """Time update: x <- A x + B i, P <- A P A^T + Sigma (P symmetrized)."""
    a = model.a_diag
    x = a * fs.x + model.b_vector * i
    x[0] = min(max(x[0], 0.0), 1.0)
    p = (a[:, None] * fs.p) * a[None, :] + fs.sigma
    p = 0.5 * (p + p.T)
    return FilterState(x, p, fs.sigma, fs.sigma2)


def ekf_correct(
    fs: FilterState, model: LinearizedModel, i: float, v_measured: float
) -> tuple[FilterState, StepRecord]:
    """Measurement update with Joseph-form covariance.

    Residuals use the full nonlinear output map; the linearization row C only
    enters the gain and covariance algebra.
    """
    c = model.c_row(float(fs.x[0]))
    pc = fs.p @ c
    cpc_minus = float(c @ pc)
    s = cpc_minus + fs.sigma2
    if s <= 0.0:
        raise NumericalFaultError(f"innovation variance {s!r} is not positive")
    k = pc / s
    e_minus = v_measured - model.output(fs.x, i)
    x = fs.x + k * e_minus
    x[0] = min(max(x[0], 0.0), 1.0)
    ikc = np.eye(3) - np.outer(k, c)
    p = ikc @ fs.p @ ikc.T + fs.sigma2 * np.outer(k, k)
    p = 0.5 * (p + p.T)
    e_plus = v_measured - model.output(x, i)
    cpc_term = float(c @ p @ c)
    new = FilterState(x, p, fs.sigma, fs.sigma2)
    return new, StepRecord(float(e_minus), float(e_plus), k, cpc_term, cpc_minus)


class WindowStats:
    """Fixed-capacity circular buffers of per-step residual summands.

    Channel a holds squared innovations e-^2; channel b holds e+^2 + C P+ C^T.
    Running sums give O(1) window means; they are recomputed exactly from the
    ring every RECOMPUTE_EVERY pushes to bound floating-point drift.
    """

    RECOMPUTE_EVERY = 4096

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._ring = np.zeros((capacity, 2))
        self._head = 0
        self.fill = 0
        self._sums = np.zeros(2)
        self._pushes = 0

    def push(self, e_minus_sq: float, e_plus_term: float) -> None:
        if self.fill == self.capacity:
            self._sums -= self._ring[self._head]
        else:
            self.fill += 1
        self._ring[self._head, 0] = e_minus_sq
        self._ring[self._head, 1] = e_plus_term
        self._sums[0] += e_minus_sq
        self._sums[1] += e_plus_term
        self._head = (self._head + 1) % self.capacity
        self._pushes += 1
        if self._pushes % self.RECOMPUTE_EVERY == 0:
            self._sums = self._ring[: self.fill].sum(axis=0) if self.fill else np.zeros(2)

    def push_record(self, rec: StepRecord) -> None:
        self.push(rec.e_minus**2, rec.e_plus**2 + rec.cpc_term)

    @property
    def mean_innovation_sq(self) -> float:
        return self._sums[0] / self.fill

    @property
    def mean_posterior_term(self) -> float:
        return self._sums[1] / self.fill


def mle_adapt(ws: WindowStats, last: StepRecord, fs: FilterState) -> FilterState:
    """Maximum-likelihood covariance update from windowed residuals.

    Sigma becomes the current gain sandwiching the window mean of squared
    innovations (rank-1 PSD); the measurement variance becomes the window
    mean of e+^2 + C P+ C^T. Before the window fills, means divide by the
    current fill count.
    """
    if ws.fill == 0:
        return fs
    sigma = np.outer(last.k_gain, last.k_gain) * ws.mean_innovation_sq
    return FilterState(fs.x, fs.p, sigma, float(ws.mean_posterior_term))


def cm_adapt(
    ws: WindowStats,
    last: StepRecord,
    fs: FilterState,
    variance_floor: float = CM_VARIANCE_FLOOR,
) -> FilterState:
    """Innovation-based covariance matching.

    The window mean of squared innovations estimates C P- C^T + sigma^2;
    subtracting the model term gives the measurement variance (floored to
    stay positive), and the same innovation covariance mapped through the
    gain gives the process noise.
    """
    if ws.fill == 0:
        return fs
    c_hat = ws.mean_innovation_sq
    sigma2 = max(c_hat - last.cpc_minus, variance_floor)
    sigma = np.outer(last.k_gain, last.k_gain) * c_hat
    return FilterState(fs.x, fs.p, sigma, float(sigma2))


def estimator_run(
    kind: str,
    params: EcmParams,
    profile: Profile,
    init: FilterState,
    window: int = 128,
    default_dt: float = 1.0,
    warmup: int | None = None,
    record_hook=None,
) -> np.ndarray:
    """Run one estimator over a full profile; returns the SoC estimate sequence.

    For the adaptive kinds the per-step order is predict, correct, window
    push, adapt; adapted covariances take effect on the next step. Adaptation
    is suppressed for the first `warmup` steps (default: the window size),
    when residuals still reflect initialization error rather than noise.

    `record_hook(k, fs, rec)` is called after each correction (test
    instrumentation; ignored by CC).
    """
    if kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    n = len(profile)
    dts = profile.dts(default_dt)
    out = np.empty(n)

    if kind == "cc":
        z = float(init.x[0])
        q_max = params.q_max
        cur = profile.i
        for k in range(n):
            z = coulomb_count_step(z, cur[k], dts[k], q_max)
            out[k] = z
        return out

    if not profile.has_voltage:
        raise ValueError(f"estimator {kind!r} requires a voltage column")
    adaptive = kind in ("aekf-mle", "aekf-cm")
    if adaptive and window < 1:
        raise ValueError("adaptive estimators need window >= 1")
    if warmup is None:
        warmup = window
    ws = WindowStats(window) if adaptive else None
    adapt = mle_adapt if kind == "aekf-mle" else cm_adapt

    fs = init.copy()
    cur, volt = profile.i, profile.v
    models: dict[float, LinearizedModel] = {}
    for k in range(n):
        dt = dts[k]
        model = models.get(dt)
        if model is None:
            model = models[dt] = linearize(params, dt)
        fs = ekf_predict(fs, model, cur[k])
        fs, rec = ekf_correct(fs, model, cur[k], volt[k])
        if adaptive:
            ws.push_record(rec)
            if k + 1 > warmup:
                fs = adapt(ws, rec, fs)
        if record_hook is not None:
            record_hook(k, fs, rec)
        out[k] = fs.x[0]
    return out
