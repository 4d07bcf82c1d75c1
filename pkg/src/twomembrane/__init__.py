"""Two-membrane cavity optomechanics: nonlinear dynamics and calibration.

Simulates the coupled stochastic dynamics of two membrane modes inside a
driven Fabry-Perot cavity, evolves the slowly-varying amplitude equations,
solves for mechanical limit cycles, models the nonlinear homodyne readout
through a Bessel-series cavity response, and computes the correction
factors that turn probe spectra into true membrane displacements.
"""

from .cavity_response import (ReflectionSet, ToneId,
                              reconstruct_reflection_time_series,
                              reflection_set, response_harmonic, tone_frequency)
from .detection import (CalibrationReport, ShotNoiseReport, calibrate,
                        correction_factors, detuning_from_variance_ratio,
                        homodyne_asn, infer_xi, lo_phase_lock, ratios,
                        shot_noise_sensitivity, tone_amplitude_from_psd,
                        voltage_signal)
from .langevin import (DriveSchedule, Trajectory, output_field, probe_input,
                       reflection_series, simulate_langevin,
                       simulate_langevin_ensemble, thermal_noise_stream)
from .model import (CavityGeometry, ConfigError, DetectionChain, DerivedReport,
                    MechanicalMode, OpticalMode, ProbeModulation, SystemParams,
                    bare_detunings, derived_params, effective_detunings,
                    load_config, membrane_effective_mass, serialize,
                    static_shifts)
from .slowflow import (LimitCycleSolution, NonlinearCoeffs, SecondModeSteady,
                       SecondModeUnstable, SlowTrajectory, TruncationError,
                       auxiliary_f, bright_amplitude, gamma1_eff, gamma_eff,
                       integrate_amplitude_ensemble, integrate_amplitude_eqs,
                       limit_cycle_solve, multistability_boundary,
                       nonlinear_coeffs, second_mode_steady, sigma,
                       sigma_slope_origin, sync_measure, threshold_power)
from .spectral import (QuadratureTrace, Spectrogram, band_variance, demodulate,
                       moving_average, spectrogram, welch_psd)

__version__ = "0.1.0"
