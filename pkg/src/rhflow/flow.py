"""Time integration of the coupled metric / scalar-map flow.

The system evolved is

    d/dt a_i  = -2 Ric_ii + 2 alpha(t) (phi')^2 delta_{i1}
    d/dt phi  = lap_g phi

on the diagonal x1-dependent metric class, which the flow preserves.
Stepping is classical RK4 with a conservative parabolic step limit; the
coupling alpha(t) is positive and non-increasing.  Snapshots are 1D
profiles, so histories store them densely and interpolate linearly in
time for the downstream heat solvers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as gridmod
from .geometry import ReducedMetric, ScalarMap, coupled_quantities, laplacian
from .report import CheckReport, slice_row

__all__ = [
    "CouplingSchedule",
    "FlowState",
    "FlowHistory",
    "FlowBlowUpError",
    "cfl_limit",
    "step",
    "run",
    "evolution_identity_residual",
    "volume_identity_residual",
    "min_s_lower_bound",
]


class FlowBlowUpError(RuntimeError):
    """Raised when a coefficient leaves (0, inf) or a NaN appears.

    Carries the failure time and, when raised from :func:`run`, the
    truncated history of valid snapshots."""

    def __init__(self, message, time, history=None):
        super().__init__(message)
        self.time = time
        self.history = history


@dataclass(frozen=True)
class CouplingSchedule:
    """Positive non-increasing coupling alpha(t).

    ``constant`` keeps alpha0; ``linear-clipped`` follows
    alpha0 + slope*t (slope <= 0) until it reaches the floor alpha_bar > 0
    and stays there.
    """

    kind: str = "constant"
    alpha0: float = 1.0
    alpha_bar: float = 1.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear-clipped"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.alpha_bar <= 0:
            raise ValueError("coupling must stay positive: alpha_bar > 0 required")
        if self.alpha0 < self.alpha_bar:
            raise ValueError("alpha0 must be >= alpha_bar")
        if self.slope > 0:
            raise ValueError(
                "coupling slope must be <= 0: alpha(t) is positive non-increasing")
        if self.kind == "constant" and self.slope != 0.0:
            raise ValueError("constant schedule cannot have a slope")

    def alpha(self, t):
        if self.kind == "constant":
            return self.alpha0
        return max(self.alpha_bar, self.alpha0 + self.slope * t)

    def alpha_prime(self, t):
        if self.kind == "constant":
            return 0.0
        return self.slope if self.alpha0 + self.slope * t > self.alpha_bar else 0.0

    @property
    def is_constant(self):
        return self.kind == "constant" or self.slope == 0.0


@dataclass
class FlowState:
    time: float
    metric: ReducedMetric
    smap: ScalarMap

    @property
    def grid(self):
        return self.metric.grid


def _rhs(grid, coeffs, phi, alpha):
    metric = ReducedMetric(grid, coeffs)
    phi_x = gridmod.derivative(grid, phi, 0, 1)
    dcoeffs = -2.0 * metric.ricci_diag
    dcoeffs[0] = dcoeffs[0] + 2.0 * alpha * phi_x ** 2
    dphi = laplacian(metric, phi)
    return dcoeffs, dphi


def cfl_limit(state):
    """Conservative explicit step limit 0.2 h1^2 min(a) / max(1, |Ric|-scale)."""
    metric = state.metric
    h1 = metric.grid.spacings[0]
    curv = np.abs(metric.ricci_diag / metric.coeffs).max()
    return 0.2 * h1 ** 2 * metric.coeffs.min() / max(1.0, float(curv))


def step(state, schedule, dt):
    """One classical RK4 update of (a_1..a_n, phi)."""
    g = state.grid
    a0, p0 = state.metric.coeffs, state.smap.phi
    t = state.time
    try:
        k1a, k1p = _rhs(g, a0, p0, schedule.alpha(t))
        k2a, k2p = _rhs(g, a0 + 0.5 * dt * k1a, p0 + 0.5 * dt * k1p,
                        schedule.alpha(t + 0.5 * dt))
        k3a, k3p = _rhs(g, a0 + 0.5 * dt * k2a, p0 + 0.5 * dt * k2p,
                        schedule.alpha(t + 0.5 * dt))
        k4a, k4p = _rhs(g, a0 + dt * k3a, p0 + dt * k3p, schedule.alpha(t + dt))
    except ValueError as exc:
        raise FlowBlowUpError(f"flow left the admissible class at t={t:.6g}: {exc}",
                              time=t) from exc
    a1 = a0 + (dt / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    p1 = p0 + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(p1))):
        raise FlowBlowUpError(f"NaN detected at t={t:.6g}", time=t)
    if np.any(a1 <= 0.0):
        raise FlowBlowUpError(f"metric coefficient reached 0 at t={t + dt:.6g}",
                              time=t + dt)
    return FlowState(t + dt, ReducedMetric(g, a1), ScalarMap(g, p1))


@dataclass
class FlowHistory:
    """Uniformly spaced snapshots of the flow with linear interpolation."""

    grid: gridmod.PeriodicGrid
    schedule: CouplingSchedule
    times: np.ndarray
    coeffs: np.ndarray  # (n_snap, n, N1)
    phis: np.ndarray    # (n_snap, N1)
    dt: float
    cfl_margin: float
    _metric_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def ndim(self):
        return self.grid.ndim

    def alpha(self, t):
        return self.schedule.alpha(t)

    def alpha_prime(self, t):
        return self.schedule.alpha_prime(t)

    def profiles_at(self, t):
        """Linear-in-time interpolation of (coeffs, phi) at time t."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside history range [0, {self.T}]")
        t = min(max(t, times[0]), times[-1])
        j = int(np.searchsorted(times, t, side="right") - 1)
        j = min(j, len(times) - 2) if len(times) > 1 else 0
        if len(times) == 1:
            return self.coeffs[0].copy(), self.phis[0].copy()
        w = (t - times[j]) / (times[j + 1] - times[j])
        coeffs = (1 - w) * self.coeffs[j] + w * self.coeffs[j + 1]
        phi = (1 - w) * self.phis[j] + w * self.phis[j + 1]
        return coeffs, phi

    def metric_at(self, t):
        key = round(float(t), 14)
        hit = self._metric_cache.get(key)
        if hit is None:
            coeffs, _ = self.profiles_at(t)
            hit = ReducedMetric(self.grid, coeffs)
            if len(self._metric_cache) > 512:
                self._metric_cache.clear()
            self._metric_cache[key] = hit
        return hit

    def map_at(self, t):
        _, phi = self.profiles_at(t)
        return ScalarMap(self.grid, phi)

    def state_at(self, t):
        return FlowState(float(t), self.metric_at(t), self.map_at(t))

    def quantities_at(self, t):
        return coupled_quantities(self.metric_at(t), self.map_at(t), self.alpha(t))

    def s_profile(self, t):
        return self.quantities_at(t).s_scalar

    def curvature_bounds(self):
        """Suprema of the k1..k4 bounds over all snapshots."""
        k = np.zeros(4)
        for t in self.times:
            q = self.quantities_at(float(t))
            k = np.maximum(k, [q.k1, q.k2, q.k3, q.k4])
        return tuple(float(v) for v in k)

    def volume_series(self):
        out = []
        for i in range(len(self.times)):
            sqg = np.sqrt(np.prod(self.coeffs[i], axis=0))
            vol1d = sqg.sum() * self.grid.spacings[0]
            out.append(vol1d * np.prod([L for L in self.grid.lengths[1:]]))
        return np.asarray(out)

    def inf_s_series(self):
        return np.asarray([self.s_profile(float(t)).min() for t in self.times])


def run(initial, schedule, T, snapshot_every=None, dt=None):
    """Integrate the flow to time T with uniform snapshot spacing.

    On blow-up raises :class:`FlowBlowUpError` carrying the truncated
    history (never extrapolates past the last valid snapshot).
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    g = initial.grid
    snaps_c = [initial.metric.coeffs.copy()]
    snaps_p = [initial.smap.phi.copy()]
    times = [0.0]
    limit0 = cfl_limit(initial)
    if T == 0:
        return FlowHistory(g, schedule, np.asarray(times), np.asarray(snaps_c),
                           np.asarray(snaps_p), dt=0.0, cfl_margin=float("inf"))

    if snapshot_every is None:
        snapshot_every = T / 40.0
    n_snap = max(1, round(T / snapshot_every))
    snapshot_every = T / n_snap
    if dt is None:
        dt = 0.9 * limit0
    n_sub = max(1, math.ceil(snapshot_every / dt - 1e-12))
    dt = snapshot_every / n_sub

    state = initial
    margin = limit0 / dt
    for i_snap in range(n_snap):
        for _ in range(n_sub):
            limit = cfl_limit(state)
            margin = min(margin, limit / dt)
            if dt > limit:
                raise FlowBlowUpError(
                    f"step {dt:.3g} exceeds the parabolic limit {limit:.3g} "
                    f"at t={state.time:.6g}",
                    time=state.time,
                    history=FlowHistory(g, schedule, np.asarray(times),
                                        np.asarray(snaps_c), np.asarray(snaps_p),
                                        dt=dt, cfl_margin=margin))
            try:
                state = step(state, schedule, dt)
            except FlowBlowUpError as exc:
                exc.history = FlowHistory(g, schedule, np.asarray(times),
                                          np.asarray(snaps_c), np.asarray(snaps_p),
                                          dt=dt, cfl_margin=margin)
                raise
        t_snap = (i_snap + 1) * snapshot_every
        state = FlowState(t_snap, state.metric, state.smap)  # exact snapshot time
        times.append(t_snap)
        snaps_c.append(state.metric.coeffs.copy())
        snaps_p.append(state.smap.phi.copy())

    return FlowHistory(g, schedule, np.asarray(times), np.asarray(snaps_c),
                       np.asarray(snaps_p), dt=dt, cfl_margin=float(margin))


# ---------------------------------------------------------------------------
# structural identity checks along a history
# ---------------------------------------------------------------------------

def evolution_identity_residual(history, tol=np.inf):
    """Residual of the coupled scalar evolution identity.

    Along the flow, s = R - alpha |grad phi|^2 satisfies

        d/dt s = lap s + 2 alpha (lap_g phi)^2 + 2 |S_ij|^2
                 - alpha'(t) |grad phi|^2.

    The time derivative is a centered difference across snapshots; the
    report carries the sup-norm residual per interior snapshot.
    """
    times = history.times
    if len(times) < 3:
        raise ValueError("need at least 3 snapshots for the evolution residual")
    rows = []
    worst = 0.0
    for j in range(1, len(times) - 1):
        t = float(times[j])
        dt_c = float(times[j + 1] - times[j - 1])
        s_dot = (history.s_profile(float(times[j + 1]))
                 - history.s_profile(float(times[j - 1]))) / dt_c
        metric = history.metric_at(t)
        q = history.quantities_at(t)
        s_tensor_sq = np.sum((q.s_diag / metric.coeffs) ** 2, axis=0)
        rhs = (laplacian(metric, q.s_scalar)
               + 2.0 * history.alpha(t) * q.tension ** 2
               + 2.0 * s_tensor_sq
               - history.alpha_prime(t) * q.energy_density)
        resid = float(np.abs(s_dot - rhs).max())
        worst = max(worst, resid)
        rows.append(slice_row(t, resid, tol))
    return CheckReport("evolution_identity_residual", worst <= tol, tol, worst,
                       slices=rows)


def volume_identity_residual(history, tol=np.inf):
    """Residual of d/dt vol(M) = -int s dmu at interior snapshots."""
    times = history.times
    if len(times) < 3:
        raise ValueError("need at least 3 snapshots")
    vols = history.volume_series()
    rows = []
    worst = 0.0
    transverse = float(np.prod([L for L in history.grid.lengths[1:]]))
    for j in range(1, len(times) - 1):
        t = float(times[j])
        dvol = (vols[j + 1] - vols[j - 1]) / float(times[j + 1] - times[j - 1])
        metric = history.metric_at(t)
        s = history.s_profile(t)
        s_int = float((s * metric.sqrt_g).sum() * history.grid.spacings[0] * transverse)
        resid = abs(dvol + s_int)
        worst = max(worst, resid)
        rows.append(slice_row(t, resid, tol))
    return CheckReport("volume_identity_residual", worst <= tol, tol, worst,
                       slices=rows)


def min_s_lower_bound(history, tol=5e-3):
    """Maximum-principle lower envelope for the coupled scalar.

    With m0 = 1/inf s(0) and c_n = 2/n, comparison with the scalar ODE
    rho' = (2/n) rho^2 forces inf_M s(., tau) >= 1/(m0 - c_n tau).  When
    inf s(0) >= 0 the envelope is replaced by zero and the minimum of s
    must additionally be nondecreasing across snapshots.
    """
    n = history.ndim
    inf_series = history.inf_s_series()
    s0 = float(inf_series[0])
    rows = []
    worst = 0.0
    env_zero = s0 >= 0.0
    m0 = None if env_zero else 1.0 / s0
    c_n = 2.0 / n
    for j, t in enumerate(history.times):
        env = 0.0 if env_zero else 1.0 / (m0 - c_n * float(t))
        violation = max(0.0, env - float(inf_series[j]))
        worst = max(worst, violation)
        rows.append(slice_row(float(t), violation, tol))
    notes = {"inf_s0": s0, "envelope": "zero" if env_zero else "ode-comparison"}
    passed = worst <= tol
    if env_zero and len(inf_series) > 1:
        drops = np.diff(inf_series)
        mono_violation = max(0.0, float(-drops.min()))
        notes["min_s_monotonicity_violation"] = mono_violation
        passed = passed and mono_violation <= tol
        worst = max(worst, mono_violation)
    return CheckReport("min_s_lower_bound", passed, tol, worst, slices=rows,
                       notes=notes)
