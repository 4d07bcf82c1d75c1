import dataclasses
import math
from pathlib import Path

import pytest

from twomembrane import load_config
from twomembrane.model import SystemParams

REPO = Path(__file__).resolve().parent.parent
CONFIG_PATH = REPO / "configs" / "membrane_sandwich.cfg"

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="session")
def config_text() -> str:
    return CONFIG_PATH.read_text()


@pytest.fixture(scope="session")
def params(config_text):
    """Canonical parameter set of the two-membrane setup."""
    return load_config(config_text)


def replace_mech(p: SystemParams, index: int, **kw) -> SystemParams:
    mech = list(p.mech)
    mech[index] = dataclasses.replace(mech[index], **kw)
    return dataclasses.replace(p, mech=tuple(mech))


def replace_opt(p: SystemParams, index: int, **kw) -> SystemParams:
    opt = list(p.opt)
    opt[index] = dataclasses.replace(opt[index], **kw)
    return dataclasses.replace(p, opt=tuple(opt))


def with_pump_power(p: SystemParams, power: float) -> SystemParams:
    return replace_opt(p, 0, power=power)


def decoupled(p: SystemParams, pump_off: bool = True,
              probe_resonant: bool = True) -> SystemParams:
    """Couplings to zero (and optionally pump off / probe on resonance)."""
    out = replace_mech(p, 0, g=(0.0, 0.0))
    out = replace_mech(out, 1, g=(0.0, 0.0))
    if pump_off:
        out = replace_opt(out, 0, power=0.0, detuning=0.0)
    if probe_resonant:
        out = replace_opt(out, 1, detuning=0.0)
    return out


def slow_mech_variant(p: SystemParams) -> SystemParams:
    """Scaled-down frequencies so the resolution guard allows coarse steps.

    Used for statistically heavy equilibrium property checks: the thermal
    equilibrium property is parameter-independent, and at omega ~ 2 pi
    * 6 kHz the step guard admits dt ~ 5 us instead of 0.15 us.
    """
    out = decoupled(p)
    out = replace_mech(out, 0, omega=TWO_PI * 6000.0)
    out = replace_mech(out, 1, omega=TWO_PI * 7300.0)
    kin, kex = TWO_PI * 400.0, TWO_PI * 2600.0
    opt = tuple(dataclasses.replace(o, kappa_in=kin, kappa_ex=kex)
                for o in out.opt)
    return dataclasses.replace(out, opt=opt, geometry=None)
