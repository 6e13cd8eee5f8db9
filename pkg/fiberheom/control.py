"""
Dynamical-decoupling schedules.

CPMG and UDD pulse timings, the rectangular control envelope for finite-width
pulses, and instantaneous pulses applied to the whole hierarchy. Pulses act
as sigma_x (x) sigma_x on both photons at once (a pair of half-waveplates).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from fiberheom.linalg import SIGMA_X, CMatrix, kron

if TYPE_CHECKING:
    from fiberheom.heom import HierarchyState

logger = logging.getLogger(__name__)

DEFAULT_PULSE_WIDTH = 1e-3
PULSE_AREA = math.pi / 2
PULSE_AREA_TOL = 1e-12


class ScheduleError(ValueError):
    """Pulse schedule is inconsistent with the evolution window."""


class PulseKind(str, Enum):
    CPMG = "cpmg"
    UDD = "udd"


class PulseMode(str, Enum):
    IDEAL = "ideal"
    FINITE = "finite"


# -------------------------
# Timings
# -------------------------


def _check_window(n_pulses: int, total_time: float) -> None:
    if n_pulses < 1:
        raise ValueError(f"Pulse count must be >= 1, got {n_pulses}")
    if total_time <= 0:
        raise ValueError(f"Total time must be positive, got {total_time}")


def cpmg_times(n_pulses: int, total_time: float) -> npt.NDArray[np.float64]:
    """Uniform pulse centers t_j = (j - 1/2) T / N."""
    _check_window(n_pulses, total_time)
    j = np.arange(1, n_pulses + 1, dtype=np.float64)
    return (j - 0.5) * total_time / n_pulses


def udd_times(n_pulses: int, total_time: float) -> npt.NDArray[np.float64]:
    """Uhrig pulse centers t_j = T sin^2(j pi / (2 (N + 1)))."""
    _check_window(n_pulses, total_time)
    j = np.arange(1, n_pulses + 1, dtype=np.float64)
    return total_time * np.sin(j * np.pi / (2 * (n_pulses + 1))) ** 2


_TIMINGS = {
    PulseKind.CPMG: cpmg_times,
    PulseKind.UDD: udd_times,
}


# -------------------------
# Pulse sequence
# -------------------------


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """
    A decoupling schedule over [0, total_time].

    In finite mode each pulse is a rectangle of ``width`` and ``amplitude``
    centered on its time, with width * amplitude = pi/2. In ideal mode the
    pulses are instantaneous and ``width`` only records the nominal pulse.
    """

    kind: PulseKind
    n_pulses: int
    total_time: float
    width: float
    amplitude: float
    mode: PulseMode
    times: npt.NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "kind", PulseKind(self.kind))
        object.__setattr__(self, "mode", PulseMode(self.mode))
        self._validate()

    def _validate(self) -> None:
        if self.n_pulses < 1:
            raise ScheduleError(f"Pulse count must be >= 1, got {self.n_pulses}")
        if self.total_time <= 0:
            raise ScheduleError(f"Total time must be positive, got {self.total_time}")
        if self.times.shape != (self.n_pulses,):
            raise ScheduleError(
                f"Expected {self.n_pulses} pulse times, got array of shape {self.times.shape}"
            )
        if self.n_pulses > 1 and np.any(np.diff(self.times) <= 0):
            raise ScheduleError("Pulse times must be strictly increasing")

        half = 0.5 * self.width if self.mode is PulseMode.FINITE else 0.0
        if self.mode is PulseMode.FINITE:
            if self.width <= 0:
                raise ScheduleError(f"Finite pulse width must be positive, got {self.width}")
            area = self.width * self.amplitude
            if abs(area - PULSE_AREA) > PULSE_AREA_TOL:
                raise ScheduleError(f"Pulse area width*amplitude = {area!r}, expected pi/2")

        if self.times[0] - half <= 0 or self.times[-1] + half >= self.total_time:
            raise ScheduleError(
                f"Pulse supports must lie inside (0, {self.total_time}) us; "
                f"first starts at {self.times[0] - half}, last ends at {self.times[-1] + half}"
            )
        if self.n_pulses > 1 and np.any(np.diff(self.times) <= 2 * half):
            gap = float(np.min(np.diff(self.times)))
            raise ScheduleError(
                f"Pulses of width {self.width} us overlap (minimum spacing {gap} us)"
            )

    @property
    def starts(self) -> npt.NDArray[np.float64]:
        return self.times - 0.5 * self.width

    @property
    def ends(self) -> npt.NDArray[np.float64]:
        return self.times + 0.5 * self.width

    def spacings_km(self, v_f: float) -> npt.NDArray[np.float64]:
        """Distances between consecutive pulse centers (waveplate separations)."""
        return np.diff(self.times) * v_f


def build_sequence(
    kind: PulseKind | str,
    n_pulses: int,
    total_time: float,
    mode: PulseMode | str = PulseMode.IDEAL,
    width: float = DEFAULT_PULSE_WIDTH,
) -> PulseSequence:
    """
    Build a CPMG or UDD schedule with amplitude pi / (2 * width).

    Raises:
        ScheduleError: If pulses do not fit in (0, total_time) or overlap
    """
    kind = PulseKind(kind)
    try:
        times = _TIMINGS[kind](n_pulses, total_time)
    except ValueError as e:
        raise ScheduleError(str(e)) from e

    seq = PulseSequence(
        kind=kind,
        n_pulses=n_pulses,
        total_time=total_time,
        width=width,
        amplitude=PULSE_AREA / width,
        mode=PulseMode(mode),
        times=times,
    )
    logger.debug(
        f"Built {kind.value.upper()} schedule: {n_pulses} {seq.mode.value} pulses "
        f"over {total_time} us"
    )
    return seq


# -------------------------
# Control Hamiltonian
# -------------------------


def control_operator() -> CMatrix:
    """sigma_x (x) sigma_x, the operator multiplied by the envelope h(t)."""
    return kron(SIGMA_X, SIGMA_X)


def envelope(seq: PulseSequence, t: float) -> float:
    """
    Rectangular control amplitude h(t) in rad/us.

    Returns the pulse amplitude on any closed pulse support, zero elsewhere.

    Raises:
        ValueError: If the sequence is not in finite mode
    """
    if seq.mode is not PulseMode.FINITE:
        raise ValueError("envelope is only defined for finite-width pulses")
    idx = int(np.searchsorted(seq.times, t))
    half = 0.5 * seq.width
    for j in (idx - 1, idx):
        if 0 <= j < seq.n_pulses and abs(t - seq.times[j]) <= half:
            return seq.amplitude
    return 0.0


def pulses_applied(seq: PulseSequence, t: float) -> int:
    """Number of pulses completed by time t."""
    edges = seq.times if seq.mode is PulseMode.IDEAL else seq.ends
    return int(np.searchsorted(edges, t, side="right"))


def apply_ideal_pulse(state: HierarchyState) -> HierarchyState:
    """
    Instantaneous pi pulse on every ADM: rho_n <- U rho_n U^dagger, U = XX.

    The system unitary commutes with the bath-index structure, so the
    auxiliary matrices transform exactly like the physical one.
    """
    u = control_operator()
    return replace(state, adms=u @ state.adms @ u)
