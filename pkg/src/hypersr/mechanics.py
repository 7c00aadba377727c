"""Closed-form kinematics and nominal stress kernels for incompressible
isotropic loading in uniaxial tension/compression and simple shear.

All functions accept floats or numpy arrays. Stress kernels take the
energy derivatives already evaluated at the state, so differentiation
happens once per candidate while evaluation runs per data point.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class NonPositiveStretch(ValueError):
    pass


class NegativeShear(ValueError):
    pass


class LoadingMode(Enum):
    UNIAXIAL_TENSION = "ut"
    UNIAXIAL_COMPRESSION = "uc"
    SIMPLE_SHEAR = "ss"

    @property
    def is_uniaxial(self) -> bool:
        return self is not LoadingMode.SIMPLE_SHEAR


@dataclass(frozen=True)
class KinematicState:
    """Deformation snapshot for one control value (or an array of them).

    Holds the invariants of C = F^T F, the principal stretches in
    descending order and the matching normal strains. The volume ratio is
    identically one.
    """

    mode: LoadingMode
    control: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    stretches: tuple[np.ndarray, np.ndarray, np.ndarray]
    strains: tuple[np.ndarray, np.ndarray, np.ndarray]
    J: np.ndarray


def kinematics_uniaxial(lam) -> KinematicState:
    """State for an unconfined uniaxial test at stretch ``lam``.

    The transverse directions contract as 1/sqrt(lam), so
    I1 = lam^2 + 2/lam and I2 = 2*lam + 1/lam^2.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise NonPositiveStretch("uniaxial stretch must be positive")
    trans = lam**-0.5
    I1 = lam**2 + 2.0 / lam
    I2 = 2.0 * lam + lam**-2
    mode = LoadingMode.UNIAXIAL_TENSION if np.all(lam >= 1.0) else LoadingMode.UNIAXIAL_COMPRESSION
    one = np.ones_like(lam)
    return KinematicState(
        mode=mode,
        control=lam,
        I1=I1,
        I2=I2,
        I3=one,
        stretches=(lam, trans, trans),
        strains=(lam - 1.0, trans - 1.0, trans - 1.0),
        J=one,
    )


def kinematics_shear(gamma) -> KinematicState:
    """State for simple shear of amount ``gamma`` in the 1-2 plane.

    Both invariants equal 3 + gamma^2; the in-plane principal stretches
    are (gamma +/- sqrt(4 + gamma^2))/2 and the out-of-plane one is 1.
    """
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0.0):
        raise NegativeShear("shear amount must be non-negative")
    root = np.sqrt(4.0 + gamma**2)
    l1 = (gamma + root) / 2.0
    l2 = (-gamma + root) / 2.0
    I = 3.0 + gamma**2
    one = np.ones_like(gamma)
    return KinematicState(
        mode=LoadingMode.SIMPLE_SHEAR,
        control=gamma,
        I1=I,
        I2=I.copy(),
        I3=one,
        stretches=(l1, l2, one),
        strains=(l1 - 1.0, l2 - 1.0, np.zeros_like(gamma)),
        J=one,
    )


@dataclass(frozen=True)
class InvariantDerivs:
    """dPsi/dI1 and dPsi/dI2 evaluated at a state."""

    dI1: np.ndarray
    dI2: np.ndarray


@dataclass(frozen=True)
class PrincipalDerivs:
    """dPsi/dlambda_i (equivalently dPsi/deps_i, the measures differ by a
    unit shift) evaluated at the first two principal values of a state."""

    d1: np.ndarray
    d2: np.ndarray


DerivativeBundle = InvariantDerivs | PrincipalDerivs


def stress_uniaxial(state: KinematicState, derivs: DerivativeBundle):
    """Nominal stress P11 for a uniaxial state.

    The transverse free-stress condition P22 = 0 fixes the hydrostatic
    pressure, leaving, for the invariant measure,
    ``P11 = 2 (dPsi/dI1 + dPsi/dI2 / lam) (lam - 1/lam^2)`` and, for the
    principal measures, ``P11 = d1 - (l2/l1) d2``.
    """
    if isinstance(derivs, InvariantDerivs):
        lam = state.control
        return 2.0 * (derivs.dI1 + derivs.dI2 / lam) * (lam - lam**-2)
    l1, l2, _ = state.stretches
    return derivs.d1 - (l2 / l1) * derivs.d2


def stress_shear(state: KinematicState, derivs: DerivativeBundle):
    """Nominal shear stress P12 for a simple-shear state.

    The pressure does not enter the 1-2 component:
    ``P12 = 2 (dPsi/dI1 + dPsi/dI2) gamma`` for the invariant measure and
    ``P12 = l1^2/(l1^2+1) d1 - l2^2/(l2^2+1) d2`` for the principal ones.
    """
    if isinstance(derivs, InvariantDerivs):
        return 2.0 * (derivs.dI1 + derivs.dI2) * state.control
    l1, l2, _ = state.stretches
    return (l1**2 / (l1**2 + 1.0)) * derivs.d1 - (l2**2 / (l2**2 + 1.0)) * derivs.d2


def kinematics_for(mode: LoadingMode, control) -> KinematicState:
    if mode.is_uniaxial:
        return kinematics_uniaxial(control)
    return kinematics_shear(control)


def stress_for(mode: LoadingMode, state: KinematicState, derivs: DerivativeBundle):
    if mode.is_uniaxial:
        return stress_uniaxial(state, derivs)
    return stress_shear(state, derivs)


def invariants_from_stretches(l1, l2, l3):
    """I1, I2 of C for an arbitrary principal stretch triple."""
    l1, l2, l3 = (np.asarray(x, dtype=float) for x in (l1, l2, l3))
    I1 = l1**2 + l2**2 + l3**2
    I2 = (l1 * l2) ** 2 + (l2 * l3) ** 2 + (l1 * l3) ** 2
    return I1, I2
