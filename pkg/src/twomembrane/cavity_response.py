"""Bessel-series response of the probe cavity to a large mechanical cycle.

The probe field sees its resonance frequency-modulated by the excited
membrane (modulation index xi = 2 g1 |A1| / omega_1), perturbed to first
order by the small second membrane (through the product g2 |A2|) and by
the input phase-modulation calibration tone of depth beta at omega_b.
The reflected field then carries six tones: DC, omega_1, omega_2,
omega_sm = 2 omega_1 - omega_2, omega_b and omega_sb = 2 omega_1 - omega_b,
whose complex amplitudes are evaluated here as truncated sums over cavity
sidebands.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import jv

from .model import SystemParams, effective_detunings
from .slowflow import TruncationError, default_truncation, _check_truncation


class ToneId(enum.Enum):
    DC = "dc"
    OMEGA_1 = "omega_1"
    OMEGA_2 = "omega_2"
    OMEGA_SM = "omega_sm"
    OMEGA_B = "omega_b"
    OMEGA_SB = "omega_sb"


def tone_frequency(params: SystemParams, tone: ToneId) -> float:
    """Beat-note frequency of a tone in the detected spectrum [rad/s]."""
    return params.tone_frequencies()[tone.value]


def probe_pole(params: SystemParams, pump_power: float | None = None) -> complex:
    """W = i Delta - kappa of the probe mode, with static shifts included."""
    delta = effective_detunings(params, pump_power=pump_power)[1]
    return 1j * delta - params.probe.kappa


def response_harmonic(xi: float, b: int, n: int, params: SystemParams,
                      trunc: int | None = None) -> complex:
    """Harmonic coefficient of the intracavity response.

    Coefficient of exp(i n (omega_1 t + phi_1)) in the response to the b-th
    calibration sideband of the input:

        C_b[n] = sum_m J_{m-n}(-xi) J_m(-xi) / (i (m omega_1 + b omega_b) - W).
    """
    if trunc is None:
        trunc = default_truncation(xi)
    if abs(n) > trunc:
        raise TruncationError(f"harmonic |n|={abs(n)} exceeds truncation {trunc}")
    _check_truncation(xi, trunc)
    w1 = params.mech[0].omega
    wb = params.modulation.omega_b
    pole = probe_pole(params)
    m = np.arange(-trunc, trunc + 1)
    num = jv(m - n, -xi) * jv(m, -xi)
    den = 1j * (m * w1 + b * wb) - pole
    return complex(np.sum(num / den))


@dataclass(frozen=True)
class _ToneSums:
    """Raw sideband sums entering the six reflection tones (kappa_in and
    Bessel prefactors stripped)."""

    dc: complex
    s1: tuple[complex, complex]    # omega_1, (+, -)
    s2: tuple[complex, complex]    # omega_2
    sm: tuple[complex, complex]    # omega_sm
    sb: tuple[complex, complex]    # omega_b
    ssb: tuple[complex, complex]   # omega_sb


def tone_sums(xi: float, params: SystemParams,
              trunc: int | None = None) -> _ToneSums:
    if trunc is None:
        trunc = default_truncation(xi)
    _check_truncation(xi, trunc)
    w1 = params.mech[0].omega
    w2 = params.mech[1].omega
    wb = params.modulation.omega_b
    pole = probe_pole(params)
    m = np.arange(-trunc, trunc + 1)
    jm = jv(m, -xi)
    jm_m1 = jv(m - 1, -xi)
    jm_p1 = jv(m + 1, -xi)
    jm_m2 = jv(m - 2, -xi)
    jm_p2 = jv(m + 2, -xi)
    den0 = 1j * m * w1 - pole

    dc = np.sum(jm * jm / den0)
    s1 = (np.sum(jm * jm_m1 / den0), np.sum(jm * jm_p1 / den0))
    s2 = (np.sum(jm**2 / (den0 * (1j * (m * w1 + w2) - pole))),
          np.sum(jm**2 / (den0 * (1j * (m * w1 - w2) - pole))))
    sm = (np.sum(jm * jm_m2 / (den0 * (1j * (m * w1 - w2) - pole))),
          np.sum(jm * jm_p2 / (den0 * (1j * (m * w1 + w2) - pole))))
    sb = (np.sum(jm**2 / (1j * (m * w1 + wb) - pole)),
          np.sum(jm**2 / (1j * (m * w1 - wb) - pole)))
    ssb = (np.sum(jm * jm_m2 / (1j * (m * w1 - wb) - pole)),
           np.sum(jm * jm_p2 / (1j * (m * w1 + wb) - pole)))
    return _ToneSums(dc=complex(dc),
                     s1=(complex(s1[0]), complex(s1[1])),
                     s2=(complex(s2[0]), complex(s2[1])),
                     sm=(complex(sm[0]), complex(sm[1])),
                     sb=(complex(sb[0]), complex(sb[1])),
                     ssb=(complex(ssb[0]), complex(ssb[1])))


@dataclass(frozen=True)
class ReflectionSet:
    """Complex reflection amplitudes (R+, R-) at the six detected tones."""

    tones: dict[ToneId, tuple[complex, complex]]
    xi: float
    g2a2: float        # g_2 |A_2| [rad/s-scale product, dimensionless amplitude]
    mod_depth: float

    def pair(self, tone: ToneId) -> tuple[complex, complex]:
        return self.tones[tone]


def reflection_set(xi: float, g2a2: float, params: SystemParams,
                   trunc: int | None = None) -> ReflectionSet:
    """Assemble the six reflection tone pairs.

    ``g2a2`` is the coupling-amplitude product of the second mode,
    normalized so that g2a2 = g_2 * Dq_2 / x_zpf2 with Dq_2 the rms
    displacement of the mode (for a deterministic oscillation of amplitude
    q this is g_2 * sqrt(2) * q / (2 x_zpf2)); the tones at omega_2 and
    omega_sm are linear in it (first-order perturbation).  The -1
    prompt-reflection term of the input-output relation appears at DC and
    omega_b.
    """
    s = tone_sums(xi, params, trunc)
    beta = params.modulation.mod_depth
    two_kin = 2.0 * params.probe.kappa_in
    j0 = jv(0, -beta)
    j1 = jv(1, -beta)     # J_{-1}(-beta) = -j1
    eps = 1j * g2a2 / math.sqrt(2.0)

    tones = {
        ToneId.DC: (j0 * (-1.0 + two_kin * s.dc),) * 2,
        ToneId.OMEGA_1: (j0 * two_kin * s.s1[0], j0 * two_kin * s.s1[1]),
        ToneId.OMEGA_2: (j0 * two_kin * eps * s.s2[0], j0 * two_kin * eps * s.s2[1]),
        ToneId.OMEGA_SM: (j0 * two_kin * eps * s.sm[0], j0 * two_kin * eps * s.sm[1]),
        ToneId.OMEGA_B: (j1 * (-1.0 + two_kin * s.sb[0]),
                         -j1 * (-1.0 + two_kin * s.sb[1])),
        ToneId.OMEGA_SB: (-j1 * two_kin * s.ssb[0], j1 * two_kin * s.ssb[1]),
    }
    return ReflectionSet(tones=tones, xi=xi, g2a2=g2a2, mod_depth=beta)


def reconstruct_reflection_time_series(rs: ReflectionSet, params: SystemParams,
                                       t: np.ndarray,
                                       phases: dict[ToneId, float] | None = None,
                                       ) -> np.ndarray:
    """Time-domain reflection R(t) from the six tone pairs.

    Tone phases default to zero (arbitrary in the stationary state); the
    calibration tone at omega_b carries no mechanical phase by construction.
    """
    t = np.asarray(t, dtype=float)
    phases = phases or {}
    freqs = params.tone_frequencies()
    out = np.full(t.shape, rs.pair(ToneId.DC)[0], dtype=complex)
    for tone in (ToneId.OMEGA_1, ToneId.OMEGA_2, ToneId.OMEGA_SM,
                 ToneId.OMEGA_B, ToneId.OMEGA_SB):
        rp, rm = rs.pair(tone)
        w = freqs[tone.value]
        phi = phases.get(tone, 0.0)
        out += rp * np.exp(1j * (w * t + phi)) + rm * np.exp(-1j * (w * t + phi))
    return out


def sweep_csv(params: SystemParams, xi_values, g2a2: float = 1.0,
              trunc: int | None = None) -> str:
    """CSV of tone amplitudes over a xi sweep: curves of the six tones."""
    buf = io.StringIO()
    buf.write("xi,tone,abs_r_plus,abs_r_minus,arg_r_plus,arg_r_minus\n")
    for xi in xi_values:
        rs = reflection_set(float(xi), g2a2, params, trunc)
        for tone in ToneId:
            rp, rm = rs.pair(tone)
            buf.write(f"{xi:.10g},{tone.value},{abs(rp):.12g},{abs(rm):.12g},"
                      f"{np.angle(rp):.12g},{np.angle(rm):.12g}\n")
    return buf.getvalue()
