"""Physical parameters of the two-membrane cavity optomechanical setup.

Conventions used throughout the package:

* all rates and frequencies are angular (rad/s); config files carry
  ordinary frequencies in Hz and are multiplied by 2*pi on load,
* mechanical and optical amplitudes are dimensionless: a mechanical
  complex amplitude A corresponds to the physical displacement
  q = 2*|A|*x_zpf,
* detunings are Delta = omega_laser - omega_cavity (blue positive),
* kappa, gamma are amplitude decay rates (the intensity linewidth of the
  cavity is 2*kappa = FSR/finesse).

Optical mode 1 is the pump, optical mode 2 the probe that carries the
phase-modulated calibration tone and feeds the homodyne detector.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

from scipy.constants import c as _c0
from scipy.constants import hbar as _hbar
from scipy.constants import k as _kB

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Raised for malformed, incomplete or inconsistent configuration input."""


@dataclass(frozen=True)
class MechanicalMode:
    """One membrane drum mode.

    g is the single-photon coupling rate per optical mode, one entry for
    the pump and one for the probe (g_pump, g_probe), in rad/s.
    """

    omega: float            # resonance [rad/s]
    gamma: float            # amplitude decay [rad/s]
    g: tuple[float, float]  # (pump, probe) couplings [rad/s]
    mass: float             # effective mass [kg]
    temperature: float      # bath temperature [K]

    def __post_init__(self):
        for name in ("omega", "gamma", "mass", "temperature"):
            v = getattr(self, name)
            if not v > 0.0:
                raise ConfigError(f"non-positive rate: {name}")
        if self.nbar < 100.0:
            warnings.warn(
                "mean thermal occupation below 100; classical treatment "
                "of the mechanical bath is questionable", stacklevel=2)

    @property
    def x_zpf(self) -> float:
        """Zero-point displacement spread sqrt(hbar / 2 m omega) [m]."""
        return math.sqrt(_hbar / (2.0 * self.mass * self.omega))

    @property
    def nbar(self) -> float:
        """Bose occupation of the bath at this mode frequency."""
        return 1.0 / math.expm1(_hbar * self.omega / (_kB * self.temperature))

    @property
    def q_thermal(self) -> float:
        """Thermal rms displacement sqrt(kB T / m omega^2) [m]."""
        return math.sqrt(_kB * self.temperature / (self.mass * self.omega**2))


@dataclass(frozen=True)
class OpticalMode:
    """One driven cavity mode (pump or probe).

    ``detuning`` is the effective detuning, i.e. it already contains the
    static radiation-pressure shifts of the membranes; ``detuning_is_bare``
    records whether the configured number was bare (in which case the
    effective value stored here was computed self-consistently).
    """

    detuning: float        # effective laser-cavity detuning [rad/s]
    kappa_in: float        # input-port amplitude decay [rad/s]
    kappa_ex: float        # amplitude decay through all other ports [rad/s]
    power: float           # input power [W]
    wavelength: float      # [m]
    detuning_is_bare: bool = False

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise ConfigError("non-positive rate: kappa")
        if self.kappa_in < 0.0 or self.kappa_ex < 0.0:
            raise ConfigError("non-positive rate: kappa_in/kappa_ex")
        if self.power < 0.0:
            raise ConfigError("negative power")
        if not self.wavelength > 0.0:
            raise ConfigError("non-positive wavelength")

    @property
    def kappa(self) -> float:
        return self.kappa_in + self.kappa_ex

    @property
    def omega_laser(self) -> float:
        return TWO_PI * _c0 / self.wavelength

    @property
    def drive_rate(self) -> float:
        """E = sqrt(2 kappa_in P / hbar omega_L)  [rad/s * sqrt(photons)]."""
        return math.sqrt(2.0 * self.kappa_in * self.power
                         / (_hbar * self.omega_laser))

    def drive_rate_at(self, power: float) -> float:
        """Drive rate for a different input power (pump scheduling)."""
        return math.sqrt(2.0 * self.kappa_in * power / (_hbar * self.omega_laser))

    @property
    def lorentzian_pole(self) -> complex:
        """W = i Delta - kappa, the pole of the driven cavity response."""
        return 1j * self.detuning - self.kappa


@dataclass(frozen=True)
class ProbeModulation:
    """Phase modulation of the probe input, used as calibration tone."""

    mod_depth: float   # modulation index beta [rad]
    omega_b: float     # modulation frequency [rad/s]

    def __post_init__(self):
        if self.mod_depth < 0.0:
            raise ConfigError("negative mod_depth")
        if not self.omega_b > 0.0:
            raise ConfigError("non-positive rate: omega_b")
        if self.mod_depth > 0.3:
            warnings.warn("mod_depth above 0.3: small-modulation treatment "
                          "of the calibration tone degrades", stacklevel=2)


@dataclass(frozen=True)
class DetectionChain:
    """Homodyne detector electronics parameters."""

    lo_power: float = 1.0e-3          # local oscillator power [W]
    pd_sensitivity: float = 1.0       # photodiode sensitivity S [A/W]
    transimpedance: float = 1.0e4     # g_T [V/A]
    termination: float = 50.0         # R0 [ohm]
    lo_phase: float | str = "auto"    # [rad] or "auto" (zero-DC lock)

    def __post_init__(self):
        if not self.lo_power > 0.0:
            raise ConfigError("non-positive lo_power")
        if isinstance(self.lo_phase, str) and self.lo_phase != "auto":
            raise ConfigError(f"lo_phase must be a number or 'auto', got {self.lo_phase!r}")


@dataclass(frozen=True)
class CavityGeometry:
    """Free spectral range / finesse block; length optional."""

    fsr: float                 # [rad/s]
    finesse: float
    cavity_length: float = 0.0  # [m], 0 = unknown
    kappa_loss: float = 0.0     # reported loss-port rate, metadata only [rad/s]

    def __post_init__(self):
        if not self.fsr > 0.0 or not self.finesse > 0.0:
            raise ConfigError("non-positive rate: fsr/finesse")


@dataclass(frozen=True)
class SystemParams:
    """Immutable parameter set of the full two-mode / two-membrane system."""

    mech: tuple[MechanicalMode, MechanicalMode]
    opt: tuple[OpticalMode, OpticalMode]   # (pump, probe)
    modulation: ProbeModulation
    detection: DetectionChain = field(default_factory=DetectionChain)
    geometry: CavityGeometry | None = None

    def __post_init__(self):
        if self.geometry is not None:
            kappa = self.opt[1].kappa
            expected = self.geometry.fsr / self.geometry.finesse  # = 2 kappa
            if abs(2.0 * kappa - expected) > 0.05 * expected:
                raise ConfigError(
                    "inconsistent geometry: 2*kappa deviates from FSR/finesse "
                    f"by more than 5% ({2 * kappa:.4g} vs {expected:.4g} rad/s)")

    # -- convenience views ------------------------------------------------
    @property
    def pump(self) -> OpticalMode:
        return self.opt[0]

    @property
    def probe(self) -> OpticalMode:
        return self.opt[1]

    def g_matrix(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """g[i][j]: coupling of optical mode i to mechanical mode j."""
        return ((self.mech[0].g[0], self.mech[1].g[0]),
                (self.mech[0].g[1], self.mech[1].g[1]))

    @property
    def delta_omega(self) -> float:
        """Mechanical frequency splitting omega_2 - omega_1 [rad/s]."""
        return self.mech[1].omega - self.mech[0].omega

    def tone_frequencies(self) -> dict[str, float]:
        """The six beat notes resolved in the probe spectrum [rad/s]."""
        w1, w2 = self.mech[0].omega, self.mech[1].omega
        wb = self.modulation.omega_b
        return {
            "dc": 0.0,
            "omega_1": w1,
            "omega_2": w2,
            "omega_sm": 2.0 * w1 - w2,
            "omega_b": wb,
            "omega_sb": 2.0 * w1 - wb,
        }


def membrane_effective_mass(density: float, side_x: float, side_y: float,
                            thickness: float) -> float:
    """Effective mass of the fundamental drum mode of a rectangular membrane.

    For the (1,1) mode the mode-shape integral gives one quarter of the
    total slab mass.
    """
    if min(density, side_x, side_y, thickness) <= 0.0:
        raise ValueError("membrane geometry values must be positive")
    return density * side_x * side_y * thickness / 4.0


# ---------------------------------------------------------------------------
# static radiation-pressure shifts
# ---------------------------------------------------------------------------

def static_shifts(params: SystemParams, pump_power: float | None = None,
                  tol: float = 1e-9, max_iter: int = 200):
    """DC membrane displacements beta_0j under the mean intracavity fields.

    Solves the time-averaged force balance

        beta_0j   = i sum_i g_ij n_i / (i omega_j + gamma_j),
        n_i       = |E_i / (kappa_i - i Delta_i^eff)|^2,
        Delta_i^eff = Delta_i^bare + sum_j 2 g_ij Re(beta_0j).

    Configured effective detunings already contain the shift, so they enter
    the photon numbers directly (single pass).  Bare detunings trigger the
    fixed-point iteration (relative tolerance ``tol``, at most ``max_iter``
    passes).  Returns (beta_01, beta_02), dimensionless.
    """
    g = params.g_matrix()
    mech = params.mech
    powers = (params.pump.power if pump_power is None else pump_power,
              params.probe.power)
    E2 = [params.opt[i].drive_rate_at(powers[i])**2 for i in (0, 1)]
    kappa = [m.kappa for m in params.opt]
    any_bare = any(m.detuning_is_bare for m in params.opt)

    b0 = [0.0 + 0.0j, 0.0 + 0.0j]
    for it in range(max_iter if any_bare else 1):
        delta_eff = []
        for i in (0, 1):
            d = params.opt[i].detuning
            if params.opt[i].detuning_is_bare:
                d += sum(2.0 * g[i][j] * b0[j].real for j in (0, 1))
            delta_eff.append(d)
        n_phot = [E2[i] / (kappa[i]**2 + delta_eff[i]**2) for i in (0, 1)]
        new = []
        for j in (0, 1):
            force = sum(g[i][j] * n_phot[i] for i in (0, 1))
            new.append(1j * force / (1j * mech[j].omega + mech[j].gamma))
        err = max(abs(new[j] - b0[j]) for j in (0, 1))
        b0 = new
        if err <= tol * max(1.0, max(abs(v) for v in b0)):
            break
    else:
        if any_bare:
            raise RuntimeError("static shift iteration did not converge")
    return tuple(b0)


def effective_detunings(params: SystemParams,
                        pump_power: float | None = None) -> tuple[float, float]:
    """Detunings including static radiation-pressure shifts [rad/s]."""
    if not any(m.detuning_is_bare for m in params.opt):
        return (params.opt[0].detuning, params.opt[1].detuning)
    b0 = static_shifts(params, pump_power=pump_power)
    g = params.g_matrix()
    out = []
    for i in (0, 1):
        d = params.opt[i].detuning
        if params.opt[i].detuning_is_bare:
            d += sum(2.0 * g[i][j] * b0[j].real for j in (0, 1))
        out.append(d)
    return tuple(out)


def bare_detunings(params: SystemParams,
                   pump_power: float | None = None) -> tuple[float, float]:
    """Bare detunings Delta_i^(0) [rad/s].

    The Langevin integrator drives the cavity at the bare detunings and the
    static shift then develops dynamically; configured effective values are
    corrected here so they are not counted twice.
    """
    b0 = static_shifts(params, pump_power=pump_power)
    g = params.g_matrix()
    out = []
    for i in (0, 1):
        d = params.opt[i].detuning
        if not params.opt[i].detuning_is_bare:
            d -= sum(2.0 * g[i][j] * b0[j].real for j in (0, 1))
        out.append(d)
    return tuple(out)


# ---------------------------------------------------------------------------
# derived-quantity report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivedReport:
    """Derived quantities of a parameter set, with units, for inspection."""

    rows: tuple[tuple[str, float, str], ...]  # (key, value, unit)

    def as_dict(self) -> dict[str, float]:
        return {k: v for k, v, _ in self.rows}

    def to_text(self) -> str:
        lines = [f"{k} = {v:.9g}" for k, v, _ in self.rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("key,value,unit\n")
        for k, v, u in self.rows:
            buf.write(f"{k},{v:.17g},{u}\n")
        return buf.getvalue()


def derived_params(params: SystemParams) -> DerivedReport:
    """Report the derived quantities of the parameter set.

    Includes the cavity response length lambda0/(2 F) and the modulation
    index xi_cav = (2 g1/omega1) * (lambda0/2F) / (2 x_zpf) a displacement
    oscillation of that amplitude would produce.
    """
    rows: list[tuple[str, float, str]] = []
    probe = params.opt[1]
    kappa = probe.kappa
    rows.append(("kappa", kappa, "rad/s"))
    rows.append(("kappa_hz", kappa / TWO_PI, "Hz"))
    for i, label in ((0, "pump"), (1, "probe")):
        rows.append((f"drive_rate_{label}", params.opt[i].drive_rate, "rad/s"))
    for j in (0, 1):
        m = params.mech[j]
        rows.append((f"x_zpf_{j + 1}", m.x_zpf, "m"))
        rows.append((f"nbar_{j + 1}", m.nbar, ""))
        rows.append((f"q_thermal_{j + 1}", m.q_thermal, "m"))
    if params.geometry is not None:
        finesse = params.geometry.finesse
        resp_len = probe.wavelength / (2.0 * finesse)
        rows.append(("finesse", finesse, ""))
        rows.append(("cavity_response_length", resp_len, "m"))
        m1 = params.mech[0]
        g1 = m1.g[0]
        xi_cav = (2.0 * g1 / m1.omega) * resp_len / (2.0 * m1.x_zpf)
        rows.append(("xi_cav", xi_cav, ""))
    b0 = static_shifts(params)
    for j in (0, 1):
        rows.append((f"static_shift_re_{j + 1}", b0[j].real, ""))
    return DerivedReport(tuple(rows))


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = (
    "omega_1_hz", "omega_2_hz", "gamma_1_hz", "gamma_2_hz",
    "g_1_hz", "g_2_hz", "mass_1_kg", "mass_2_kg",
    "kappa_in_hz", "kappa_ex_hz",
    "power_pump_w", "power_probe_w", "wavelength_m",
    "mod_depth_rad", "omega_b_hz",
)

_OPTIONAL_KEYS = (
    "temperature_1_k", "temperature_2_k",
    "detuning_pump_hz", "detuning_probe_hz",
    "detuning_pump_bare_hz", "detuning_probe_bare_hz",
    "kappa_loss_hz", "fsr_hz", "finesse", "cavity_length_m",
    "lo_power_w", "pd_sensitivity_a_per_w", "transimpedance_v_per_a",
    "termination_ohm", "lo_phase_rad",
)


def _parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"duplicate key: {key}")
        out[key] = value
    return out


def _get_float(kv: dict[str, str], key: str) -> float:
    try:
        return float(kv[key])
    except KeyError:
        raise ConfigError(f"missing key: {key}") from None
    except ValueError:
        raise ConfigError(f"unit violation: {key} = {kv[key]!r} is not a number") from None


def load_config(text: str) -> SystemParams:
    """Parse a flat key = value configuration document into SystemParams.

    Frequencies carry the ``_hz`` suffix and are converted to rad/s; other
    units are SI per suffix.  Unknown keys are rejected.  Detunings may be
    given as effective (``detuning_*_hz``) or bare (``detuning_*_bare_hz``).
    """
    kv = _parse_kv(text)
    known = set(_REQUIRED_KEYS) | set(_OPTIONAL_KEYS)
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")

    def hz(key):
        return TWO_PI * _get_float(kv, key)

    mech = []
    for j in (1, 2):
        temp = float(kv.get(f"temperature_{j}_k", "300"))
        gj = hz(f"g_{j}_hz")
        mode = MechanicalMode(
            omega=hz(f"omega_{j}_hz"),
            gamma=hz(f"gamma_{j}_hz"),
            g=(gj, gj),
            mass=_get_float(kv, f"mass_{j}_kg"),
            temperature=temp,
        )
        mech.append(mode)

    opt = []
    for label in ("pump", "probe"):
        eff_key = f"detuning_{label}_hz"
        bare_key = f"detuning_{label}_bare_hz"
        if eff_key in kv and bare_key in kv:
            raise ConfigError(f"both {eff_key} and {bare_key} given")
        if eff_key in kv:
            detuning, is_bare = TWO_PI * _get_float(kv, eff_key), False
        elif bare_key in kv:
            detuning, is_bare = TWO_PI * _get_float(kv, bare_key), True
        else:
            raise ConfigError(f"missing key: {eff_key}")
        opt.append(OpticalMode(
            detuning=detuning,
            kappa_in=hz("kappa_in_hz"),
            kappa_ex=hz("kappa_ex_hz"),
            power=_get_float(kv, f"power_{label}_w"),
            wavelength=_get_float(kv, "wavelength_m"),
            detuning_is_bare=is_bare,
        ))

    modulation = ProbeModulation(
        mod_depth=_get_float(kv, "mod_depth_rad"),
        omega_b=hz("omega_b_hz"),
    )

    det_kwargs = {}
    if "lo_power_w" in kv:
        det_kwargs["lo_power"] = _get_float(kv, "lo_power_w")
    if "pd_sensitivity_a_per_w" in kv:
        det_kwargs["pd_sensitivity"] = _get_float(kv, "pd_sensitivity_a_per_w")
    if "transimpedance_v_per_a" in kv:
        det_kwargs["transimpedance"] = _get_float(kv, "transimpedance_v_per_a")
    if "termination_ohm" in kv:
        det_kwargs["termination"] = _get_float(kv, "termination_ohm")
    if "lo_phase_rad" in kv:
        raw = kv["lo_phase_rad"]
        det_kwargs["lo_phase"] = raw if raw == "auto" else float(raw)
    detection = DetectionChain(**det_kwargs)

    geometry = None
    if "fsr_hz" in kv or "finesse" in kv:
        if not ("fsr_hz" in kv and "finesse" in kv):
            raise ConfigError("fsr_hz and finesse must be given together")
        geometry = CavityGeometry(
            fsr=hz("fsr_hz"),
            finesse=_get_float(kv, "finesse"),
            cavity_length=float(kv.get("cavity_length_m", "0")),
            kappa_loss=TWO_PI * float(kv.get("kappa_loss_hz", "0")),
        )

    return SystemParams(mech=(mech[0], mech[1]), opt=(opt[0], opt[1]),
                        modulation=modulation, detection=detection,
                        geometry=geometry)


def serialize(params: SystemParams) -> str:
    """Render SystemParams back to config text; load_config round-trips."""
    p = params
    lines = []
    for j in (0, 1):
        m = p.mech[j]
        lines += [
            f"omega_{j + 1}_hz = {m.omega / TWO_PI!r}",
            f"gamma_{j + 1}_hz = {m.gamma / TWO_PI!r}",
            f"g_{j + 1}_hz = {m.g[0] / TWO_PI!r}",
            f"mass_{j + 1}_kg = {m.mass!r}",
            f"temperature_{j + 1}_k = {m.temperature!r}",
        ]
    for i, label in ((0, "pump"), (1, "probe")):
        o = p.opt[i]
        key = f"detuning_{label}_bare_hz" if o.detuning_is_bare else f"detuning_{label}_hz"
        lines.append(f"{key} = {o.detuning / TWO_PI!r}")
        lines.append(f"power_{label}_w = {o.power!r}")
    lines += [
        f"kappa_in_hz = {p.probe.kappa_in / TWO_PI!r}",
        f"kappa_ex_hz = {p.probe.kappa_ex / TWO_PI!r}",
        f"wavelength_m = {p.probe.wavelength!r}",
        f"mod_depth_rad = {p.modulation.mod_depth!r}",
        f"omega_b_hz = {p.modulation.omega_b / TWO_PI!r}",
        f"lo_power_w = {p.detection.lo_power!r}",
        f"pd_sensitivity_a_per_w = {p.detection.pd_sensitivity!r}",
        f"transimpedance_v_per_a = {p.detection.transimpedance!r}",
        f"termination_ohm = {p.detection.termination!r}",
        f"lo_phase_rad = {p.detection.lo_phase}",
    ]
    if p.geometry is not None:
        lines += [
            f"fsr_hz = {p.geometry.fsr / TWO_PI!r}",
            f"finesse = {p.geometry.finesse!r}",
        ]
        if p.geometry.cavity_length:
            lines.append(f"cavity_length_m = {p.geometry.cavity_length!r}")
        if p.geometry.kappa_loss:
            lines.append(f"kappa_loss_hz = {p.geometry.kappa_loss / TWO_PI!r}")
    return "\n".join(lines) + "\n"
