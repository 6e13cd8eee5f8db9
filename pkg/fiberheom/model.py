"""
Fiber-to-spin-boson model mapping.

Turns physical fiber parameters (wavelength, birefringence statistics,
correlation length) into the two-qubit dephasing model the hierarchy solver
integrates: the system Hamiltonian, the coupling operators and the
exponential bath correlation terms.

Units are microseconds, kilometres and rad/us throughout, with hbar = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fiberheom.linalg import (
    IDENTITY_2,
    SIGMA_Z,
    CMatrix,
    is_hermitian,
    kron,
)

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT_KM_PER_US = 0.299792458


class Topology(str, Enum):
    """How the two photons couple to birefringence noise."""

    INDEPENDENT = "independent"
    COLLECTIVE = "collective"


class BellState(str, Enum):
    PHI_PLUS = "phi_plus"
    PHI_MINUS = "phi_minus"
    PSI_PLUS = "psi_plus"
    PSI_MINUS = "psi_minus"


# -------------------------
# Configuration models
# -------------------------


class FiberParams(BaseModel):
    """Physical description of one fiber."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    wavelength_nm: float = Field(default=1550.0, gt=0)
    mean_birefringence: float = Field(gt=0)
    birefringence_std: float = Field(ge=0)
    correlation_length_km: float = Field(gt=0)
    group_index: float = Field(default=1.5, gt=1)

    @model_validator(mode="after")
    def _check_coupling_ratio(self) -> FiberParams:
        if self.birefringence_std > self.mean_birefringence:
            raise ValueError(
                f"birefringence_std ({self.birefringence_std}) must not exceed "
                f"mean_birefringence ({self.mean_birefringence})"
            )
        return self


class ExponentConfig(BaseModel):
    """One term c * exp(-nu * t) of an explicit bath correlation function."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    c_re: float
    c_im: float = 0.0
    nu_re: float = Field(gt=0)
    nu_im: float = 0.0

    @property
    def amplitude(self) -> complex:
        return complex(self.c_re, self.c_im)

    @property
    def rate(self) -> complex:
        return complex(self.nu_re, self.nu_im)


class ModelConfig(BaseModel):
    """
    Model section of a run configuration.

    omega_1/omega_2 default to the derived TLS frequency. When ``exponents``
    is given it replaces the single fiber correlation exponent on every bath.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    fiber: FiberParams
    topology: Topology = Field(default=Topology.INDEPENDENT)
    initial_state: BellState = Field(default=BellState.PHI_PLUS)
    omega_1: float | None = Field(default=None)
    omega_2: float | None = Field(default=None)
    exponents: list[ExponentConfig] | None = Field(default=None, min_length=1)


# -------------------------
# Derived quantities
# -------------------------


@dataclass(frozen=True)
class DerivedParams:
    v_f: float
    omega: float
    Omega: float
    eta: float
    gamma: float
    tau_c: float
    beat_length_m: float


@dataclass(frozen=True, eq=False)
class BathSpec:
    """
    A coupling operator Q and its correlation C(t) = sum_k c_k exp(-nu_k t).

    Each entry of ``exponents`` is a (c, nu) pair; every pair becomes one
    hierarchy mode.
    """

    coupling: CMatrix
    exponents: tuple[tuple[complex, complex], ...]

    def __post_init__(self):
        coupling = np.array(self.coupling, dtype=np.complex128)
        coupling.setflags(write=False)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(
            self, "exponents", tuple((complex(c), complex(nu)) for c, nu in self.exponents)
        )

        if coupling.shape != (4, 4):
            raise ValueError(f"BathSpec coupling must be 4x4, got {coupling.shape}")
        if not is_hermitian(coupling):
            raise ValueError("BathSpec coupling must be Hermitian")
        if not self.exponents:
            raise ValueError("BathSpec needs at least one exponent")
        for c, nu in self.exponents:
            if nu.real <= 0:
                raise ValueError(f"Correlation rate must have Re(nu) > 0, got nu={nu} (c={c})")

    @property
    def n_modes(self) -> int:
        return len(self.exponents)


def derive_params(fiber: FiberParams) -> DerivedParams:
    """
    Convert fiber parameters to solver units.

    Args:
        fiber: Physical fiber description

    Returns:
        DerivedParams with v_f in km/us, omega/Omega in 1/us and rad/us,
        gamma in 1/us, tau_c in us and beat length in metres

    Raises:
        ValueError: If any input is nonpositive
    """
    for name in ("wavelength_nm", "mean_birefringence", "correlation_length_km"):
        if getattr(fiber, name) <= 0:
            raise ValueError(f"{name} must be positive, got {getattr(fiber, name)}")
    if fiber.group_index <= 1:
        raise ValueError(f"group_index must exceed 1, got {fiber.group_index}")
    if fiber.birefringence_std < 0:
        raise ValueError(f"birefringence_std must be non-negative, got {fiber.birefringence_std}")

    wavelength_km = fiber.wavelength_nm * 1e-12
    v_f = SPEED_OF_LIGHT_KM_PER_US / fiber.group_index
    omega = SPEED_OF_LIGHT_KM_PER_US / wavelength_km
    tau_c = fiber.correlation_length_km / v_f

    return DerivedParams(
        v_f=v_f,
        omega=omega,
        Omega=omega * fiber.mean_birefringence,
        eta=fiber.birefringence_std / fiber.mean_birefringence,
        gamma=1.0 / tau_c,
        tau_c=tau_c,
        beat_length_m=fiber.wavelength_nm * 1e-9 / fiber.mean_birefringence,
    )


# -------------------------
# Operators
# -------------------------


def build_system_hamiltonian(cfg: ModelConfig) -> CMatrix:
    """H_S = (Omega_1 ZI + Omega_2 IZ) / 2."""
    omega_1, omega_2 = cfg.omega_1, cfg.omega_2
    if omega_1 is None or omega_2 is None:
        derived = derive_params(cfg.fiber).Omega
        omega_1 = derived if omega_1 is None else omega_1
        omega_2 = derived if omega_2 is None else omega_2
    return 0.5 * (omega_1 * kron(SIGMA_Z, IDENTITY_2) + omega_2 * kron(IDENTITY_2, SIGMA_Z))


def coupling_operators(topology: Topology) -> list[CMatrix]:
    """Coupling operators Q, one per bath, in bath order."""
    z1 = kron(SIGMA_Z, IDENTITY_2)
    z2 = kron(IDENTITY_2, SIGMA_Z)
    if Topology(topology) is Topology.INDEPENDENT:
        return [z1, z2]
    return [z1 + z2]


def build_baths(cfg: ModelConfig) -> list[BathSpec]:
    """
    Bath specifications for the configured topology.

    Every bath carries the fiber correlation eta * exp(-gamma t) unless the
    config supplies an explicit exponent list.
    """
    if cfg.exponents is not None:
        exponents = tuple((e.amplitude, e.rate) for e in cfg.exponents)
    else:
        derived = derive_params(cfg.fiber)
        exponents = ((complex(derived.eta), complex(derived.gamma)),)

    baths = [BathSpec(coupling=q, exponents=exponents) for q in coupling_operators(cfg.topology)]
    logger.debug(f"Built {len(baths)} {cfg.topology.value} bath(s) with exponents {exponents}")
    return baths


# -------------------------
# States & conversions
# -------------------------

_BELL_VECTORS = {
    BellState.PHI_PLUS: (1, 0, 0, 1),
    BellState.PHI_MINUS: (1, 0, 0, -1),
    BellState.PSI_PLUS: (0, 1, 1, 0),
    BellState.PSI_MINUS: (0, 1, -1, 0),
}


def bell_vector(kind: BellState | str) -> np.ndarray:
    """Normalized Bell state vector in the |HH>, |HV>, |VH>, |VV> basis."""
    return np.array(_BELL_VECTORS[BellState(kind)], dtype=np.complex128) / math.sqrt(2.0)


def bell_state(kind: BellState | str) -> CMatrix:
    """Rank-1 projector onto a Bell state."""
    psi = bell_vector(kind)
    return np.outer(psi, psi.conj())


def distance_to_time(distance_km: float, v_f: float) -> float:
    return distance_km / v_f


def time_to_distance(time_us: float, v_f: float) -> float:
    return v_f * time_us


def accumulated_phase(fiber: FiberParams, distance_km: float) -> float:
    """Relative H/V phase after ``distance_km`` of constant mean birefringence."""
    wavelength_km = fiber.wavelength_nm * 1e-12
    return 2.0 * math.pi * distance_km * fiber.mean_birefringence / wavelength_km


def free_rotation_state(kind: BellState | str, phi_1: float, phi_2: float) -> CMatrix:
    """
    Bell state after deterministic birefringent phases on each photon.

    Applies exp(-i phi_1 Z / 2) (x) exp(-i phi_2 Z / 2), which is the
    noiseless evolution under H_S for phi_i = Omega_i * t.
    """
    phases = np.array([1.0, -1.0])
    u1 = np.exp(-0.5j * phi_1 * phases)
    u2 = np.exp(-0.5j * phi_2 * phases)
    psi = np.kron(u1, u2) * bell_vector(kind)
    return np.outer(psi, psi.conj())

