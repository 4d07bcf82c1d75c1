"""Slowly-varying amplitude description of the two-membrane dynamics.

In a frame rotating at omega_ref (= omega_1 here) each mechanical mode is
described by a slow complex amplitude A_j.  Radiation pressure enters
through nonlinear coefficients d1, d2, d12 built from a Bessel series that
resums the frequency-modulated cavity response to all orders in the
oscillation amplitude. The zero of the effective damping
gamma1 + Im d1(|A1|) fixes the limit-cycle radius of the excited mode; the
unexcited mode is dragged toward synchronization by the cross coefficient
d12 while remaining thermally dominated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import jv

from .model import SystemParams, effective_detunings

TWO_PI = 2.0 * math.pi


class TruncationError(ValueError):
    """Bessel sum truncated below the guard for the requested amplitude."""


def default_truncation(xi) -> int:
    """J_n(xi) dies super-exponentially for n > xi; 3*xi + 20 is ample."""
    return int(np.ceil(3.0 * float(np.max(np.abs(xi))))) + 20


def _check_truncation(xi, trunc: int):
    need = int(np.ceil(3.0 * float(np.max(np.abs(xi))))) + 10
    if trunc < need:
        raise TruncationError(
            f"truncation order {trunc} too small for xi={float(np.max(np.abs(xi))):.3g}; "
            f"need at least {need}")


# ---------------------------------------------------------------------------
# Bessel building blocks
# ---------------------------------------------------------------------------

def sigma(xi, kappa: float, detuning: float, omega_ref: float,
          trunc: int | None = None):
    """Backaction sum S(xi; kappa, Delta).

    S = sum_n J_n(-xi) J_{n+1}(-xi) / ([i n w - W][-i (n+1) w - W*]),
    with W = i Delta - kappa.  E^2 * Im(S) is (up to g/|A|) the radiation
    pressure (anti)damping of a mode oscillating with modulation index xi.
    Vectorized over ``xi``.
    """
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if trunc is None:
        trunc = default_truncation(xi_arr)
    _check_truncation(xi_arr, trunc)
    n = np.arange(-trunc, trunc + 1)
    pole = 1j * detuning - kappa
    num = jv(n[:, None], -xi_arr[None, :]) * jv(n[:, None] + 1, -xi_arr[None, :])
    den = ((1j * n[:, None] * omega_ref - pole)
           * (-1j * (n[:, None] + 1) * omega_ref - np.conj(pole)))
    out = np.sum(num / den, axis=0)
    return out if np.ndim(xi) else complex(out[0])


def sigma_slope_origin(kappa: float, detuning: float, omega_ref: float) -> complex:
    """lim_{xi->0} S(xi)/xi, from the n = 0, -1 terms of the series."""
    w, d = omega_ref, detuning
    d0 = (kappa - 1j * d) * (kappa + 1j * (d - w))
    dm1 = (kappa - 1j * (w + d)) * (kappa + 1j * d)
    return 0.5 * (1.0 / dm1 - 1.0 / d0)


def bright_amplitude(a1: complex, a2: complex, g_m1: float, g_m2: float):
    """Bright-mode amplitude seen by one cavity mode, in polar form.

    A_b = (g_m1 A_1 + g_m2 A_2) / sqrt(g_m1^2 + g_m2^2); returns
    (|A_b|, arg A_b).
    """
    g_b = math.hypot(g_m1, g_m2)
    if g_b == 0.0:
        raise ValueError("bright amplitude undefined: both couplings vanish")
    ab = (g_m1 * a1 + g_m2 * a2) / g_b
    return abs(ab), math.atan2(ab.imag, ab.real)


def auxiliary_f(drive_rate: float, bright_mod: float, omega_ref: float,
                pole: complex, g_bright: float, trunc: int | None = None) -> complex:
    """Auxiliary response function F of one cavity mode.

    F = (E^2/|A_b|) * S(xi) with xi = 2 g_b |A_b| / omega_ref.  The 1/|A_b|
    singularity is removable (S ~ xi at small xi); below xi = 1e-8 the
    analytic limit E^2 (2 g_b/omega_ref) * lim S/xi is used.
    """
    if omega_ref <= 0.0:
        raise ValueError("omega_ref must be positive")
    kappa, detuning = -pole.real, pole.imag
    xi = 2.0 * g_bright * bright_mod / omega_ref
    if xi < 1e-8:
        slope = sigma_slope_origin(kappa, detuning, omega_ref)
        return drive_rate**2 * (2.0 * g_bright / omega_ref) * slope
    s = sigma(xi, kappa, detuning, omega_ref, trunc)
    return drive_rate**2 * s / bright_mod


@dataclass(frozen=True)
class NonlinearCoeffs:
    """Radiation-pressure coefficients of the amplitude equations [rad/s]."""

    d1: complex
    d2: complex
    d12: complex


def nonlinear_coeffs(a1: complex, a2: complex, params: SystemParams,
                     trunc: int | None = None,
                     pump_power: float | None = None) -> NonlinearCoeffs:
    """Assemble d1, d2, d12 at the instantaneous amplitudes (A1, A2).

    Optical modes with vanishing bright coupling contribute nothing (they
    exert no coherent force).  omega_ref = omega_1.
    """
    g = params.g_matrix()
    omega_ref = params.mech[0].omega
    deltas = effective_detunings(params, pump_power=pump_power)
    d1 = d2 = d12 = 0.0 + 0.0j
    for i in (0, 1):
        g_i1, g_i2 = g[i]
        g_b = math.hypot(g_i1, g_i2)
        if g_b == 0.0:
            continue
        power = params.opt[i].power if (pump_power is None or i == 1) else pump_power
        drive = params.opt[i].drive_rate_at(power)
        if drive == 0.0:
            continue
        bright_mod, _ = bright_amplitude(a1, a2, g_i1, g_i2)
        pole = 1j * deltas[i] - params.opt[i].kappa
        f_i = auxiliary_f(drive, bright_mod, omega_ref, pole, g_b, trunc)
        d1 += g_i1**2 * f_i / g_b
        d2 += g_i2**2 * f_i / g_b
        d12 += g_i1 * g_i2 * f_i / g_b
    return NonlinearCoeffs(d1=d1, d2=d2, d12=d12)


# ---------------------------------------------------------------------------
# effective damping / limit cycle of a single excited mode
# ---------------------------------------------------------------------------

def _drive_sum(xi, params: SystemParams, mode: int, trunc: int | None,
               pump_power: float | None):
    """sum_i (g_ij/g_ref) E_i^2 S(xi_i) for mechanical mode j=mode.

    g_ref is the mode's pump coupling, which defines its modulation index
    xi = 2 g_ref |A| / omega_j; per-cavity indices rescale as g_ij/g_ref.
    """
    g = params.g_matrix()
    omega = params.mech[mode].omega
    g_ref = g[0][mode]
    deltas = effective_detunings(params, pump_power=pump_power)
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    total = np.zeros_like(xi_arr, dtype=complex)
    for i in (0, 1):
        g_ij = g[i][mode]
        if g_ij == 0.0:
            continue
        power = params.opt[i].power if (pump_power is None or i == 1) else pump_power
        e2 = params.opt[i].drive_rate_at(power)**2
        if e2 == 0.0:
            continue
        xi_i = xi_arr * (g_ij / g_ref)
        total += (g_ij / g_ref) * e2 * sigma(xi_i, params.opt[i].kappa,
                                             deltas[i], omega, trunc)
    return total if np.ndim(xi) else complex(total[0])


def _drive_slope_origin(params: SystemParams, mode: int,
                        pump_power: float | None) -> complex:
    g = params.g_matrix()
    omega = params.mech[mode].omega
    g_ref = g[0][mode]
    deltas = effective_detunings(params, pump_power=pump_power)
    total = 0.0 + 0.0j
    for i in (0, 1):
        g_ij = g[i][mode]
        if g_ij == 0.0:
            continue
        power = params.opt[i].power if (pump_power is None or i == 1) else pump_power
        e2 = params.opt[i].drive_rate_at(power)**2
        total += (g_ij / g_ref)**2 * e2 * sigma_slope_origin(
            params.opt[i].kappa, deltas[i], omega)
    return total


def gamma_eff(xi, params: SystemParams, mode: int = 0,
              trunc: int | None = None, pump_power: float | None = None):
    """Effective amplitude decay rate of mechanical mode ``mode`` at index xi.

    gamma_eff = gamma_j + (g_j/|A_j|) Im[sum_i E_i^2 S_i], |A_j| = xi w_j/2g_j.
    The xi -> 0 limit is taken analytically.  Vectorized over xi.
    """
    mech = params.mech[mode]
    g_ref = params.g_matrix()[0][mode]
    if g_ref == 0.0:
        return np.full_like(np.atleast_1d(np.asarray(xi, float)), mech.gamma) \
            if np.ndim(xi) else mech.gamma
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty_like(xi_arr)
    small = xi_arr < 1e-8
    if np.any(~small):
        s = _drive_sum(xi_arr[~small], params, mode, trunc, pump_power)
        out[~small] = mech.gamma + (2.0 * g_ref**2 / (xi_arr[~small] * mech.omega)) \
            * np.imag(s)
    if np.any(small):
        slope = _drive_slope_origin(params, mode, pump_power)
        out[small] = mech.gamma + (2.0 * g_ref**2 / mech.omega) * slope.imag
    return out if np.ndim(xi) else float(out[0])


def gamma1_eff(xi, params: SystemParams, trunc: int | None = None,
               pump_power: float | None = None):
    """Effective damping of the first (excited) mode; see gamma_eff."""
    return gamma_eff(xi, params, mode=0, trunc=trunc, pump_power=pump_power)


@dataclass(frozen=True)
class LimitCycleSolution:
    """Roots of gamma_eff(xi) = 0 for the excited mode."""

    roots: tuple[tuple[float, bool], ...]  # (xi, stable)
    mode: int
    chosen: float | None          # smallest positive stable root
    radius: float | None          # I_st = xi w/2g (dimensionless amplitude)
    displacement: float | None    # q_st = 2 I_st x_zpf [m]
    freq_shift: float | None      # limit-cycle frequency pull Re d [rad/s]

    @property
    def has_cycle(self) -> bool:
        return self.chosen is not None


def _refine_root(f, lo: float, hi: float, rel_tol: float = 1e-8) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (hi - lo) <= rel_tol * max(1.0, abs(mid)):
            return mid
        fm = f(mid)
        if flo * fm <= 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def limit_cycle_solve(params: SystemParams, xi_max: float = 5.0,
                      trunc: int | None = None,
                      pump_power: float | None = None,
                      mode: int = 0, n_grid: int | None = None) -> LimitCycleSolution:
    """Locate all limit-cycle radii of one mode by bracketing + bisection.

    Scans gamma_eff on (0, xi_max], refines each sign change to 1e-8
    relative, classifies stability from the local slope (stable when
    d(gamma_eff)/dxi > 0), and selects the smallest positive stable root.
    An empty root list is a valid outcome (no limit cycle).
    """
    if xi_max <= 0.0:
        raise ValueError("xi_max must be positive")
    if trunc is None:
        trunc = default_truncation(xi_max)
    if n_grid is None:
        n_grid = max(800, int(600 * xi_max))
    grid = np.linspace(1e-6, xi_max, n_grid)
    vals = gamma_eff(grid, params, mode=mode, trunc=trunc, pump_power=pump_power)

    def f(x):
        return gamma_eff(x, params, mode=mode, trunc=trunc, pump_power=pump_power)

    roots = []
    sign_change = np.nonzero(np.diff(np.signbit(vals)))[0]
    for k in sign_change:
        root = _refine_root(f, grid[k], grid[k + 1])
        step = 1e-4
        slope = (f(root + step) - f(root - step)) / (2.0 * step)
        roots.append((root, slope > 0.0))

    chosen = next((r for r, stable in roots if stable and r > 0.0), None)
    mech = params.mech[mode]
    g_ref = params.g_matrix()[0][mode]
    if chosen is None:
        return LimitCycleSolution(tuple(roots), mode, None, None, None, None)
    radius = chosen * mech.omega / (2.0 * g_ref)
    displacement = 2.0 * radius * mech.x_zpf
    # Frequency pull of the cycle: the slow phase obeys dphi/dt = Re d.
    drive = _drive_sum(chosen, params, mode, trunc, pump_power)
    freq_shift = g_ref * drive.real / radius
    return LimitCycleSolution(tuple(roots), mode, chosen, radius,
                              displacement, freq_shift)


def _damping_tables(params: SystemParams, mode: int, grid: np.ndarray,
                    trunc: int | None):
    """Split gamma_eff(grid; P) = gamma + c_pump(grid) P + c_fixed(grid).

    The Bessel sums do not depend on the drive powers, so power scans reuse
    one table per optical mode.  c_pump is per watt of pump power.
    """
    g = params.g_matrix()
    mech = params.mech[mode]
    g_ref = g[0][mode]
    deltas = effective_detunings(params)
    pref = 2.0 * g_ref**2 / (grid * mech.omega)
    c_pump = np.zeros_like(grid)
    c_fixed = np.zeros_like(grid)
    for i in (0, 1):
        g_ij = g[i][mode]
        if g_ij == 0.0:
            continue
        xi_i = grid * (g_ij / g_ref)
        im_s = np.imag(sigma(xi_i, params.opt[i].kappa, deltas[i],
                             mech.omega, trunc))
        term = pref * (g_ij / g_ref) * im_s
        if i == 0:
            c_pump = term * params.opt[0].drive_rate_at(1.0)**2
        else:
            c_fixed = term * params.opt[1].drive_rate**2
    return mech.gamma, c_pump, c_fixed


def threshold_power(params: SystemParams, mode: int = 0,
                    trunc: int | None = None, xi_max: float = 5.0,
                    power_max: float = 1.0, rel_tol: float = 1e-3) -> float:
    """Minimum pump power at which the mode acquires a limit cycle.

    Bisection over pump power on the existence of a positive root of the
    effective damping.  Raises if no root exists below ``power_max`` (1 W).
    """
    if trunc is None:
        trunc = default_truncation(xi_max)
    grid = np.linspace(1e-4, xi_max, max(400, int(300 * xi_max)))
    gamma, c_pump, c_fixed = _damping_tables(params, mode, grid, trunc)

    def exists(power: float) -> bool:
        vals = gamma + power * c_pump + c_fixed
        return bool(vals[0] < 0.0 or np.any(np.diff(np.signbit(vals))))

    if not exists(power_max):
        raise ValueError(f"no limit-cycle threshold below {power_max} W")
    probe_power = 1e-9
    if exists(probe_power):
        return probe_power
    lo, hi = probe_power, power_max
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if exists(mid):
            hi = mid
        else:
            lo = mid
    return math.sqrt(lo * hi)


def multistability_boundary(params: SystemParams, power_lo: float,
                            power_hi: float, trunc: int | None = None,
                            xi_max: float = 16.0, n_scan: int = 60,
                            rel_tol: float = 1e-3) -> float | None:
    """Smallest pump power with at least two limit-cycle radii.

    Monotone log scan over [power_lo, power_hi] followed by bisection.
    Returns None when no multi-root power exists in the range.
    """
    if trunc is None:
        trunc = default_truncation(xi_max)
    grid = np.linspace(1e-4, xi_max, max(2000, int(500 * xi_max)))
    gamma, c_pump, c_fixed = _damping_tables(params, 0, grid, trunc)

    def n_roots(power: float) -> int:
        vals = gamma + power * c_pump + c_fixed
        return int(np.count_nonzero(np.diff(np.signbit(vals))))

    powers = np.geomspace(power_lo, power_hi, n_scan)
    multi = [p for p in powers if n_roots(p) >= 2]
    if not multi:
        return None
    hi = multi[0]
    below = powers[powers < hi]
    if len(below) == 0:
        return hi
    lo = below[-1]
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if n_roots(mid) >= 2:
            hi = mid
        else:
            lo = mid
    return math.sqrt(lo * hi)


# ---------------------------------------------------------------------------
# pre-synchronized second mode
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SecondModeSteady:
    """Stationary state of the unexcited mode while mode 1 holds a cycle."""

    sync_amplitude: float       # |A2| of the synchronized component
    sync_displacement: float    # 2 |A2| x_zpf2 [m]
    gamma2_eff: float           # [rad/s]
    dw2_eff: float              # Delta w - Re d2 [rad/s]
    dw2_bar_eff: float          # Delta w + Re(d1 - d2) [rad/s]
    thermal_amplitude: float    # q_th2 sqrt(gamma2/gamma2_eff) [m]
    fullsync_lhs: float         # |d12|^2 I1^2
    fullsync_rhs: float         # gamma2 * gamma2' * nbar2
    fully_synchronized: bool
    note: str = ("full-synchronization bound |d12|^2 I1^2 >> gamma2 gamma2' "
                 "nbar2 evaluated with gamma2' = |gamma2_eff + i "
                 "dw2_bar_eff|^2/gamma2_eff, the reading under which the "
                 "bound compares the synchronized and thermal amplitudes "
                 "(the bare rate gamma2' is otherwise undefined; it reduces "
                 "to gamma2_eff for dw2_bar_eff << gamma2_eff)")


class SecondModeUnstable(RuntimeError):
    """gamma2_eff <= 0: the second mode does not reach a damped steady state."""


def second_mode_steady(params: SystemParams, cycle: LimitCycleSolution,
                       trunc: int | None = None,
                       pump_power: float | None = None) -> SecondModeSteady:
    """Evaluate the pre-synchronized steady state of mode 2.

    Requires a stable limit-cycle solution of mode 1; coefficients are
    frozen at A1 = I_st, A2 = 0.
    """
    if not cycle.has_cycle:
        raise ValueError("no stable limit cycle available for mode 1")
    mech2 = params.mech[1]
    coeffs = nonlinear_coeffs(cycle.radius, 0.0, params, trunc=trunc,
                              pump_power=pump_power)
    gamma2_eff_val = mech2.gamma + coeffs.d2.imag
    if gamma2_eff_val <= 0.0:
        raise SecondModeUnstable(
            f"gamma2_eff = {gamma2_eff_val:.4g} rad/s <= 0; second mode unstable")
    dw = params.delta_omega
    dw2_bar = dw + (coeffs.d1.real - coeffs.d2.real)
    dw2 = dw - coeffs.d2.real
    sync_amp = abs(1j * coeffs.d12 * cycle.radius / (gamma2_eff_val + 1j * dw2_bar))
    thermal = mech2.q_thermal * math.sqrt(mech2.gamma / gamma2_eff_val)
    lhs = abs(coeffs.d12)**2 * cycle.radius**2
    gamma2_prime = (gamma2_eff_val**2 + dw2_bar**2) / gamma2_eff_val
    rhs = mech2.gamma * gamma2_prime * mech2.nbar
    return SecondModeSteady(
        sync_amplitude=sync_amp,
        sync_displacement=2.0 * sync_amp * mech2.x_zpf,
        gamma2_eff=gamma2_eff_val,
        dw2_eff=dw2,
        dw2_bar_eff=dw2_bar,
        thermal_amplitude=thermal,
        fullsync_lhs=lhs,
        fullsync_rhs=rhs,
        fully_synchronized=bool(lhs > rhs),
    )


# ---------------------------------------------------------------------------
# stochastic integration of the amplitude equations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlowTrajectory:
    """Sampled slow amplitudes in the omega_ref rotating frame."""

    t: np.ndarray        # [s]
    a1: np.ndarray       # complex
    a2: np.ndarray       # complex
    omega_ref: float     # [rad/s]
    seed: int

    def __post_init__(self):
        if not (np.all(np.isfinite(self.a1)) and np.all(np.isfinite(self.a2))):
            raise ValueError("non-finite slow amplitudes")

    def save(self, path) -> None:
        from .datafiles import write_columnar
        write_columnar(path, {
            "kind": "slow_trajectory", "omega_ref": self.omega_ref,
            "seed": self.seed,
        }, {
            "t": self.t,
            "re_a1": self.a1.real.copy(), "im_a1": self.a1.imag.copy(),
            "re_a2": self.a2.real.copy(), "im_a2": self.a2.imag.copy(),
        })

    @classmethod
    def load(cls, path) -> "SlowTrajectory":
        from .datafiles import read_columnar
        header, cols = read_columnar(path)
        if header.get("kind") != "slow_trajectory":
            raise ValueError(f"{path}: not a slow-trajectory file")
        return cls(t=cols["t"],
                   a1=cols["re_a1"] + 1j * cols["im_a1"],
                   a2=cols["re_a2"] + 1j * cols["im_a2"],
                   omega_ref=header["omega_ref"], seed=header["seed"])


def _thermal_init(rng: np.random.Generator, nbar: float, n: int = 1):
    scale = math.sqrt((nbar + 0.5) / 2.0)
    z = rng.normal(scale=scale, size=(2, n))
    return z[0] + 1j * z[1]


def _ou_kick_scale(gamma: float, nbar: float, re_lambda: float, dt: float) -> float:
    """Std dev per quadrature of the exact OU noise integral over one step."""
    x = 2.0 * re_lambda * dt
    if abs(x) < 1e-12:
        var_total = 2.0 * gamma * (nbar + 0.5) * dt
    else:
        var_total = 2.0 * gamma * (nbar + 0.5) * math.expm1(x) / (2.0 * re_lambda)
    return math.sqrt(max(var_total, 0.0) / 2.0)


def integrate_amplitude_eqs(params: SystemParams, a1_0: complex | None = None,
                            a2_0: complex | None = None, seed: int = 0,
                            dt: float = 1e-3, duration: float = 10.0,
                            trunc: int | None = None,
                            schedule=None,
                            decimation: int = 1,
                            include_noise: bool = True) -> SlowTrajectory:
    """Integrate the coupled slow-amplitude equations with thermal noise.

    Each step freezes the nonlinear coefficients at the current amplitudes,
    then advances each mode by the exact exponential of its frozen linear
    operator with variation-of-constants for the cross drive and an
    exactly-distributed Ornstein-Uhlenbeck noise kick.  ``schedule`` is an
    optional DriveSchedule for the pump power (piecewise constant).

    Initial amplitudes default to a thermal draw.  Optical noise input is
    kept as an always-zero hook.
    """
    m1, m2 = params.mech
    # 2% of the fastest damping period (rates are angular)
    if dt > 0.02 * TWO_PI / max(m1.gamma, m2.gamma):
        raise ValueError("dt too coarse for the mechanical decay rates")
    n_steps = int(round(duration / dt))
    rng = np.random.default_rng(seed)
    a1 = complex(_thermal_init(rng, m1.nbar)[0]) if a1_0 is None else complex(a1_0)
    a2 = complex(_thermal_init(rng, m2.nbar)[0]) if a2_0 is None else complex(a2_0)

    dw2 = params.delta_omega  # omega_ref = omega_1: mode 1 carries no rotation
    eta_opt = 0.0 + 0.0j      # optical noise hook, fixed to zero

    n_keep = n_steps // decimation
    t_out = np.empty(n_keep)
    a1_out = np.empty(n_keep, dtype=complex)
    a2_out = np.empty(n_keep, dtype=complex)

    kept = 0
    for step in range(n_steps):
        t = step * dt
        power = schedule.power_at(t) if schedule is not None else None
        coeffs = nonlinear_coeffs(a1, a2, params, trunc=trunc, pump_power=power)
        lam1 = -m1.gamma + 1j * coeffs.d1
        lam2 = -m2.gamma - 1j * dw2 + 1j * coeffs.d2
        drive1 = 1j * coeffs.d12 * a2 + eta_opt
        drive2 = 1j * coeffs.d12 * a1 + eta_opt
        e1 = np.exp(lam1 * dt)
        e2 = np.exp(lam2 * dt)
        a1 = e1 * a1 + ((e1 - 1.0) / lam1) * drive1
        a2 = e2 * a2 + ((e2 - 1.0) / lam2) * drive2
        if include_noise:
            s1 = _ou_kick_scale(m1.gamma, m1.nbar, lam1.real, dt)
            s2 = _ou_kick_scale(m2.gamma, m2.nbar, lam2.real, dt)
            z = rng.normal(size=4)
            a1 += s1 * (z[0] + 1j * z[1])
            a2 += s2 * (z[2] + 1j * z[3])
        if abs(a1) > 1e12 or abs(a2) > 1e12:
            raise RuntimeError(f"slow-flow divergence at t = {t:.6g} s")
        if (step + 1) % decimation == 0:
            t_out[kept] = (step + 1) * dt
            a1_out[kept] = a1
            a2_out[kept] = a2
            kept += 1

    return SlowTrajectory(t=t_out[:kept], a1=a1_out[:kept], a2=a2_out[:kept],
                          omega_ref=m1.omega, seed=seed)


def _coeffs_bundle(a1, a2, params, trunc, pump_power):
    """Vectorized nonlinear coefficients across a bundle of trajectories."""
    g = params.g_matrix()
    omega_ref = params.mech[0].omega
    deltas = effective_detunings(params, pump_power=pump_power)
    d1 = np.zeros_like(a1, dtype=complex)
    d2 = np.zeros_like(a1, dtype=complex)
    d12 = np.zeros_like(a1, dtype=complex)
    for i in (0, 1):
        g_i1, g_i2 = g[i]
        g_b = math.hypot(g_i1, g_i2)
        if g_b == 0.0:
            continue
        power = params.opt[i].power if (pump_power is None or i == 1) else pump_power
        e2 = params.opt[i].drive_rate_at(power)**2
        if e2 == 0.0:
            continue
        bright = np.abs(g_i1 * a1 + g_i2 * a2) / g_b
        xi = 2.0 * g_b * bright / omega_ref
        kappa = params.opt[i].kappa
        f_i = np.empty_like(d1)
        small = xi < 1e-8
        if np.any(~small):
            s = sigma(xi[~small], kappa, deltas[i], omega_ref, trunc)
            f_i[~small] = e2 * s / bright[~small]
        if np.any(small):
            slope = sigma_slope_origin(kappa, deltas[i], omega_ref)
            f_i[small] = e2 * (2.0 * g_b / omega_ref) * slope
        d1 += g_i1**2 * f_i / g_b
        d2 += g_i2**2 * f_i / g_b
        d12 += g_i1 * g_i2 * f_i / g_b
    return d1, d2, d12


def integrate_amplitude_bundle(params: SystemParams, n_traj: int,
                               seed: int = 0, dt: float = 1e-3,
                               duration: float = 10.0,
                               trunc: int | None = None,
                               schedule=None,
                               record_every: int = 1):
    """Integrate ``n_traj`` independent noisy slow-flow trajectories at once.

    Same stepping as integrate_amplitude_eqs with the Bessel sums evaluated
    vectorially across the bundle.  Returns (t, A1[n_traj, nt],
    A2[n_traj, nt]).  Bundle index m uses the noise stream of
    ``default_rng(seed)`` jointly, so individual rows are not comparable
    with single-trajectory runs seed-by-seed.
    """
    m1, m2 = params.mech
    # 2% of the fastest damping period (rates are angular)
    if dt > 0.02 * TWO_PI / max(m1.gamma, m2.gamma):
        raise ValueError("dt too coarse for the mechanical decay rates")
    if trunc is None:
        trunc = default_truncation(8.0)
    rng = np.random.default_rng(seed)
    a1 = _thermal_init(rng, m1.nbar, n_traj)
    a2 = _thermal_init(rng, m2.nbar, n_traj)
    dw2 = params.delta_omega
    n_steps = int(round(duration / dt))
    n_keep = n_steps // record_every
    t = np.empty(n_keep)
    rec1 = np.empty((n_traj, n_keep), dtype=complex)
    rec2 = np.empty((n_traj, n_keep), dtype=complex)
    kept = 0
    for step in range(n_steps):
        tcur = step * dt
        power = schedule.power_at(tcur) if schedule is not None else None
        d1, d2, d12 = _coeffs_bundle(a1, a2, params, trunc, power)
        lam1 = -m1.gamma + 1j * d1
        lam2 = -m2.gamma - 1j * dw2 + 1j * d2
        e1 = np.exp(lam1 * dt)
        e2 = np.exp(lam2 * dt)
        a1 = e1 * a1 + ((e1 - 1.0) / lam1) * (1j * d12 * a2)
        a2 = e2 * a2 + ((e2 - 1.0) / lam2) * (1j * d12 * a1)
        re1 = lam1.real
        re2 = lam2.real
        safe1 = np.where(np.abs(re1) < 1e-9, 1.0, 2.0 * re1)
        safe2 = np.where(np.abs(re2) < 1e-9, 1.0, 2.0 * re2)
        v1 = 2.0 * m1.gamma * (m1.nbar + 0.5) * np.where(
            np.abs(re1) < 1e-9, dt, np.expm1(2.0 * re1 * dt) / safe1)
        v2 = 2.0 * m2.gamma * (m2.nbar + 0.5) * np.where(
            np.abs(re2) < 1e-9, dt, np.expm1(2.0 * re2 * dt) / safe2)
        z = rng.normal(size=(4, n_traj))
        a1 = a1 + np.sqrt(np.maximum(v1, 0.0) / 2.0) * (z[0] + 1j * z[1])
        a2 = a2 + np.sqrt(np.maximum(v2, 0.0) / 2.0) * (z[2] + 1j * z[3])
        if np.any(np.abs(a1) > 1e12) or np.any(np.abs(a2) > 1e12):
            raise RuntimeError(f"slow-flow divergence at t = {tcur:.6g} s")
        if (step + 1) % record_every == 0:
            t[kept] = (step + 1) * dt
            rec1[:, kept] = a1
            rec2[:, kept] = a2
            kept += 1
    return t[:kept], rec1[:, :kept], rec2[:, :kept]


def integrate_amplitude_ensemble(params: SystemParams, n_traj: int,
                                 seed: int = 0, dt: float = 1e-3,
                                 duration: float = 10.0,
                                 record_every: int = 1):
    """Vectorized ensemble of uncoupled thermal slow-flow trajectories.

    Fast path for statistical checks: valid whenever the radiation-pressure
    coefficients vanish (all couplings or all drives zero), in which case
    each amplitude is an exact Ornstein-Uhlenbeck process.  Returns
    (t, A1[n_traj, nt], A2[n_traj, nt]) with stationary thermal initial
    conditions.
    """
    g = params.g_matrix()
    drives = (params.opt[0].drive_rate, params.opt[1].drive_rate)
    if any(any(gi) for gi in g) and any(drives):
        raise ValueError("ensemble fast path requires zero coupling or zero drive")
    m1, m2 = params.mech
    rng = np.random.default_rng(seed)
    n_steps = int(round(duration / dt))
    a1 = _thermal_init(rng, m1.nbar, n_traj)
    a2 = _thermal_init(rng, m2.nbar, n_traj)
    lam1 = -m1.gamma + 0.0j
    lam2 = -m2.gamma - 1j * params.delta_omega
    e1, e2 = np.exp(lam1 * dt), np.exp(lam2 * dt)
    s1 = _ou_kick_scale(m1.gamma, m1.nbar, lam1.real, dt)
    s2 = _ou_kick_scale(m2.gamma, m2.nbar, lam2.real, dt)
    n_keep = n_steps // record_every
    t = np.empty(n_keep)
    rec1 = np.empty((n_traj, n_keep), dtype=complex)
    rec2 = np.empty((n_traj, n_keep), dtype=complex)
    kept = 0
    for step in range(n_steps):
        a1 = e1 * a1 + s1 * (rng.normal(size=n_traj) + 1j * rng.normal(size=n_traj))
        a2 = e2 * a2 + s2 * (rng.normal(size=n_traj) + 1j * rng.normal(size=n_traj))
        if (step + 1) % record_every == 0:
            t[kept] = (step + 1) * dt
            rec1[:, kept] = a1
            rec2[:, kept] = a2
            kept += 1
    return t[:kept], rec1[:, :kept], rec2[:, :kept]


# ---------------------------------------------------------------------------
# synchronization measure
# ---------------------------------------------------------------------------

def sync_measure(theta1: np.ndarray, theta2: np.ndarray, window: int) -> np.ndarray:
    """Sliding-window mean of cos(theta1 - theta2).

    +1 phase-locked, -1 anti-phase locked, ~0 unsynchronized.  ``window``
    is the averaging length in samples (>= 10); output has
    len(theta) - window + 1 points, each in [-1, 1].
    """
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if theta1.shape != theta2.shape:
        raise ValueError("phase series must have equal length")
    if window < 10:
        raise ValueError("window must span at least 10 samples")
    if window > theta1.size:
        raise ValueError("window exceeds series length")
    c = np.cos(theta1 - theta2)
    csum = np.concatenate(([0.0], np.cumsum(c)))
    out = (csum[window:] - csum[:-window]) / window
    return np.clip(out, -1.0, 1.0)
