"""
Hierarchical equations of motion for the two-qubit dephasing model.

The hierarchy holds one 4x4 auxiliary density matrix (ADM) per multi-index
n with sum(n) <= max_depth; position 0 is the physical reduced density
matrix. The generator is assembled once as a sparse superoperator acting on
the row-major flattening of all ADMs and integrated with fixed-step RK4.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse

from fiberheom.analysis import Trajectory, concurrence
from fiberheom.control import (
    PulseMode,
    PulseSequence,
    ScheduleError,
    apply_ideal_pulse,
    control_operator,
    envelope,
    pulses_applied,
)
from fiberheom.linalg import CMatrix, as_cmatrix, is_hermitian
from fiberheom.model import (
    BathSpec,
    ModelConfig,
    bell_state,
    build_baths,
    build_system_hamiltonian,
    derive_params,
)

logger = logging.getLogger(__name__)

NO_NEIGHBOR = -1
TARGET_SAMPLES = 250
SUBSTEPS_PER_PULSE = 100

_DIM = 4
_BLOCK = _DIM * _DIM


class NumericalBlowupError(RuntimeError):
    """An ADM became NaN or infinite during integration."""


# -------------------------
# Hierarchy layout
# -------------------------


def _compositions(total: int, n_parts: int) -> Iterator[tuple[int, ...]]:
    """Non-negative n_parts-tuples summing to total, descending lex order."""
    if n_parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, n_parts - 1):
            yield (first, *rest)


@dataclass(frozen=True, eq=False)
class HierarchyLayout:
    """Ordered multi-indices with raise/lower neighbor tables."""

    n_modes: int
    max_depth: int
    indices: tuple[tuple[int, ...], ...]
    neighbor_up: npt.NDArray[np.int64]
    neighbor_down: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return len(self.indices)

    def position(self, index: Iterable[int]) -> int:
        """Position of a multi-index; raises KeyError if truncated away."""
        return self._positions[tuple(index)]

    @property
    def _positions(self) -> dict[tuple[int, ...], int]:
        cached = self.__dict__.get("_position_cache")
        if cached is None:
            cached = {index: pos for pos, index in enumerate(self.indices)}
            object.__setattr__(self, "_position_cache", cached)
        return cached

    @property
    def occupations(self) -> npt.NDArray[np.int64]:
        """(n_adms, n_modes) array of the indices."""
        return np.array(self.indices, dtype=np.int64).reshape(len(self), self.n_modes)


def enumerate_hierarchy(n_modes: int, max_depth: int) -> HierarchyLayout:
    """
    Enumerate all multi-indices with sum <= max_depth.

    Graded order: by level (sum), then descending lexicographic, so the
    all-zeros index comes first and for two modes level 1 is (1,0), (0,1).

    Raises:
        ValueError: If n_modes < 1 or max_depth < 0
    """
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if max_depth < 0:
        raise ValueError(f"max_depth must be >= 0, got {max_depth}")

    indices = tuple(
        index for level in range(max_depth + 1) for index in _compositions(level, n_modes)
    )
    positions = {index: pos for pos, index in enumerate(indices)}

    up = np.full((len(indices), n_modes), NO_NEIGHBOR, dtype=np.int64)
    down = np.full((len(indices), n_modes), NO_NEIGHBOR, dtype=np.int64)
    for pos, index in enumerate(indices):
        for k in range(n_modes):
            raised = index[:k] + (index[k] + 1,) + index[k + 1 :]
            up[pos, k] = positions.get(raised, NO_NEIGHBOR)
            if index[k] > 0:
                lowered = index[:k] + (index[k] - 1,) + index[k + 1 :]
                down[pos, k] = positions[lowered]

    up.setflags(write=False)
    down.setflags(write=False)
    logger.debug(f"Hierarchy: {n_modes} modes, depth {max_depth}, {len(indices)} ADMs")
    return HierarchyLayout(
        n_modes=n_modes,
        max_depth=max_depth,
        indices=indices,
        neighbor_up=up,
        neighbor_down=down,
    )


@dataclass(frozen=True, eq=False)
class HierarchyState:
    """All ADMs at time t, shape (n_adms, 4, 4)."""

    layout: HierarchyLayout
    adms: npt.NDArray[np.complex128]
    t: float = 0.0

    def __post_init__(self):
        expected = (len(self.layout), _DIM, _DIM)
        if np.shape(self.adms) != expected:
            raise ValueError(
                f"HierarchyState adms shape {np.shape(self.adms)} does not match layout {expected}"
            )

    @classmethod
    def initial(cls, layout: HierarchyLayout, rho: CMatrix, t: float = 0.0) -> HierarchyState:
        """Physical state rho with every auxiliary matrix zero."""
        adms = np.zeros((len(layout), _DIM, _DIM), dtype=np.complex128)
        adms[0] = as_cmatrix(rho)
        return cls(layout=layout, adms=adms, t=t)

    @property
    def rdm(self) -> CMatrix:
        return self.adms[0]


class IntegratorConfig(BaseModel):
    """Fixed-step integration settings (times in us)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(default=1e-3, gt=0)
    sample_every: int | None = Field(default=None, ge=1)
    max_depth: int = Field(default=10, ge=0)
    pulse_substep: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_substep(self) -> IntegratorConfig:
        if self.pulse_substep is not None and self.pulse_substep > self.dt:
            raise ValueError(f"pulse_substep ({self.pulse_substep}) must not exceed dt ({self.dt})")
        return self

    def resolved_sample_every(self, total_time: float) -> int:
        if self.sample_every is not None:
            return self.sample_every
        n_steps = math.ceil(total_time / self.dt - 1e-9)
        return max(1, math.ceil(n_steps / TARGET_SAMPLES))

    def resolved_pulse_substep(self, width: float) -> float:
        if self.pulse_substep is not None:
            return self.pulse_substep
        return min(self.dt, width / SUBSTEPS_PER_PULSE)


# -------------------------
# Generator
# -------------------------


def _left(a: CMatrix) -> sparse.csr_matrix:
    """vec(A rho) for row-major vec."""
    return sparse.csr_matrix(np.kron(a, np.eye(_DIM)))


def _right(b: CMatrix) -> sparse.csr_matrix:
    """vec(rho B) for row-major vec."""
    return sparse.csr_matrix(np.kron(np.eye(_DIM), b.T))


def _commutator_super(a: CMatrix) -> sparse.csr_matrix:
    return _left(a) - _right(a)


def _anticommutator_super(a: CMatrix) -> sparse.csr_matrix:
    return _left(a) + _right(a)


def _modes(baths: list[BathSpec]) -> list[tuple[CMatrix, complex, complex]]:
    """(Q, c, nu) per hierarchy mode, bath-major."""
    return [(bath.coupling, c, nu) for bath in baths for c, nu in bath.exponents]


class HEOMGenerator:
    """
    Sparse HEOM superoperator for a fixed layout, Hamiltonian and bath set.

    For every multi-index n, with e_k the unit vector of mode k:

        d rho_n/dt = -i[H, rho_n] - (sum_k n_k nu_k) rho_n
                     - i sum_k [Q_k, rho_{n+e_k}]
                     - i sum_k n_k (Re c_k [Q_k, rho_{n-e_k}] + i Im c_k {Q_k, rho_{n-e_k}})

    Neighbors outside the hierarchy are zero. A time-dependent control term
    h(t) XX enters through ``matrix(amplitude)``.
    """

    def __init__(self, layout: HierarchyLayout, hamiltonian: CMatrix, baths: list[BathSpec]):
        hamiltonian = as_cmatrix(hamiltonian)
        if hamiltonian.shape != (_DIM, _DIM):
            raise ValueError(f"Hamiltonian must be 4x4, got {hamiltonian.shape}")
        if not is_hermitian(hamiltonian):
            raise ValueError("Hamiltonian must be Hermitian")

        modes = _modes(baths)
        if len(modes) != layout.n_modes:
            raise ValueError(
                f"Layout has {layout.n_modes} modes but baths provide {len(modes)} exponents"
            )

        self.layout = layout
        self.size = len(layout) * _BLOCK
        self.static = self._assemble(layout, hamiltonian, modes)
        identity = sparse.identity(len(layout), format="csr", dtype=np.complex128)
        self.control = sparse.kron(identity, -1j * _commutator_super(control_operator())).tocsr()
        self._cache: dict[float, sparse.csr_matrix] = {}

    @staticmethod
    def _assemble(
        layout: HierarchyLayout,
        hamiltonian: CMatrix,
        modes: list[tuple[CMatrix, complex, complex]],
    ) -> sparse.csr_matrix:
        n_adms = len(layout)
        occupations = layout.occupations
        rows = np.arange(n_adms)
        identity = sparse.identity(n_adms, format="csr", dtype=np.complex128)

        rates = occupations @ np.array([nu for _, _, nu in modes], dtype=np.complex128)
        generator = sparse.kron(identity, -1j * _commutator_super(hamiltonian))
        generator = generator - sparse.kron(
            sparse.diags(rates), sparse.identity(_BLOCK, dtype=np.complex128)
        )

        for k, (q, c, _) in enumerate(modes):
            comm_q = _commutator_super(q)

            up = layout.neighbor_up[:, k]
            has_up = up != NO_NEIGHBOR
            raise_map = sparse.csr_matrix(
                (np.ones(int(has_up.sum())), (rows[has_up], up[has_up])), shape=(n_adms, n_adms)
            )
            generator = generator + sparse.kron(raise_map, -1j * comm_q)

            # The lowering term carries n_k; Re c_k and Im c_k split into
            # commutator and anticommutator parts.
            down = layout.neighbor_down[:, k]
            has_down = down != NO_NEIGHBOR
            lower_map = sparse.csr_matrix(
                (occupations[has_down, k].astype(np.float64), (rows[has_down], down[has_down])),
                shape=(n_adms, n_adms),
            )
            lowering = -1j * (c.real * comm_q + 1j * c.imag * _anticommutator_super(q))
            generator = generator + sparse.kron(lower_map, lowering)

        generator = generator.tocsr()
        generator.eliminate_zeros()
        logger.debug(f"Assembled generator: size {generator.shape[0]}, nnz {generator.nnz}")
        return generator

    def matrix(self, amplitude: float = 0.0) -> sparse.csr_matrix:
        """Generator including the control term amplitude * (-i [XX, .])."""
        if amplitude == 0.0:
            return self.static
        cached = self._cache.get(amplitude)
        if cached is None:
            cached = (self.static + amplitude * self.control).tocsr()
            self._cache[amplitude] = cached
        return cached

    def apply(self, adms: npt.NDArray[np.complex128], amplitude: float = 0.0) -> np.ndarray:
        """Time derivative of all ADMs, same shape as ``adms``."""
        return (self.matrix(amplitude) @ adms.reshape(-1)).reshape(adms.shape)


def heom_rhs(
    layout: HierarchyLayout,
    hamiltonian: CMatrix,
    baths: list[BathSpec],
    state: HierarchyState,
) -> npt.NDArray[np.complex128]:
    """
    Evaluate the hierarchy right-hand side for one state.

    Returns:
        Array of shape (n_adms, 4, 4) with d rho_n / dt

    Raises:
        ValueError: If the state does not belong to the layout or the baths
            do not provide one exponent per mode
    """
    if len(state.layout) != len(layout) or state.layout.n_modes != layout.n_modes:
        raise ValueError(
            f"State layout ({len(state.layout)} ADMs, {state.layout.n_modes} modes) does not "
            f"match ({len(layout)} ADMs, {layout.n_modes} modes)"
        )
    return HEOMGenerator(layout, hamiltonian, baths).apply(state.adms)


# -------------------------
# Time stepping
# -------------------------


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.isfinite(y).all():
        raise NumericalBlowupError(f"Non-finite ADM entries at t = {t:.6f} us")


def _rk4_update(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    state: HierarchyState,
    dt: float,
) -> HierarchyState:
    """
    One classical fourth-order Runge-Kutta step of every ADM.

    Args:
        rhs: Callable (t, adms) -> d adms / dt
        state: Current hierarchy state
        dt: Step size (us)

    Raises:
        ValueError: If dt is not positive
        NumericalBlowupError: If any ADM becomes NaN or infinite
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    adms = _rk4_update(rhs, state.t, state.adms, dt)
    _check_finite(adms, state.t + dt)
    return replace(state, adms=adms, t=state.t + dt)


_PULSE, _EDGE, _SAMPLE = 0, 1, 2


def integrate(
    generator: HEOMGenerator,
    state: HierarchyState,
    t_end: float,
    icfg: IntegratorConfig,
    schedule: PulseSequence | None = None,
    sample_times: Iterable[float] = (),
    on_sample: Callable[[HierarchyState], None] | None = None,
) -> HierarchyState:
    """
    Integrate a hierarchy state to ``t_end``.

    The interval is cut at every sample time, ideal pulse and finite pulse
    edge. Each piece takes equal RK4 steps no longer than dt (pulse_substep
    inside finite pulses) with the control amplitude held at its value at
    the piece's midpoint. Ideal pulses are applied before a coinciding sample.

    Returns:
        State at ``t_end``
    """
    tol = 1e-12 * max(1.0, abs(t_end))
    events: list[tuple[float, int]] = [(float(s), _SAMPLE) for s in sample_times]
    substep = icfg.dt
    if schedule is not None:
        if schedule.mode is PulseMode.IDEAL:
            events += [(float(t), _PULSE) for t in schedule.times]
        else:
            events += [(float(t), _EDGE) for t in np.concatenate([schedule.starts, schedule.ends])]
            substep = icfg.resolved_pulse_substep(schedule.width)
    events.append((t_end, _EDGE))
    events.sort()

    layout = generator.layout
    t = state.t
    y = state.adms.reshape(-1).copy()

    for event_time, action in events:
        if event_time > t_end + tol:
            break
        if event_time - t > tol:
            amplitude = 0.0
            if schedule is not None and schedule.mode is PulseMode.FINITE:
                amplitude = envelope(schedule, 0.5 * (t + event_time))
            h_max = substep if amplitude else icfg.dt
            y = _advance(generator.matrix(amplitude), y, t, event_time, h_max)
            t = event_time

        if action == _PULSE:
            pulsed = apply_ideal_pulse(HierarchyState(layout, y.reshape(-1, 4, 4), t))
            y = pulsed.adms.reshape(-1)
        elif action == _SAMPLE and on_sample is not None:
            on_sample(HierarchyState(layout, y.reshape(-1, 4, 4).copy(), t))

    return HierarchyState(layout, y.reshape(-1, 4, 4), t)


def _advance(matrix: sparse.csr_matrix, y: np.ndarray, t0: float, t1: float, h_max: float):
    n_steps = max(1, math.ceil((t1 - t0) / h_max - 1e-9))
    h = (t1 - t0) / n_steps

    def f(_t: float, v: np.ndarray) -> np.ndarray:
        return matrix @ v

    for step in range(n_steps):
        y = _rk4_update(f, t0 + step * h, y, h)
        _check_finite(y, t0 + (step + 1) * h)
    return y


# -------------------------
# Trajectories
# -------------------------


def sample_times(icfg: IntegratorConfig, total_time: float) -> npt.NDArray[np.float64]:
    """t = 0, every sample_every * dt, and t = T."""
    stride = icfg.resolved_sample_every(total_time) * icfg.dt
    count = math.ceil(total_time / stride - 1e-9)
    times = np.arange(count, dtype=np.float64) * stride
    return np.append(times, total_time)


def evolve(
    cfg: ModelConfig,
    icfg: IntegratorConfig,
    total_time: float,
    schedule: PulseSequence | None = None,
) -> Trajectory:
    """
    Integrate the configured Bell state from t = 0 to total_time.

    Args:
        cfg: Model configuration
        icfg: Integrator settings
        total_time: Evolution time T (us)
        schedule: Optional decoupling schedule inside (0, T)

    Returns:
        Trajectory sampled at t = 0, every sample_every steps, and T

    Raises:
        ValueError: If total_time is not positive
        ScheduleError: If the schedule leaves (0, T)
        NumericalBlowupError: If the integration diverges
    """
    if total_time <= 0:
        raise ValueError(f"total_time must be positive, got {total_time}")
    if schedule is not None and schedule.total_time > total_time * (1 + 1e-12):
        raise ScheduleError(
            f"Schedule spans {schedule.total_time} us but the run stops at {total_time} us"
        )

    derived = derive_params(cfg.fiber)
    baths = build_baths(cfg)
    layout = enumerate_hierarchy(sum(bath.n_modes for bath in baths), icfg.max_depth)
    generator = HEOMGenerator(layout, build_system_hamiltonian(cfg), baths)

    start = time.perf_counter()
    samples: list[HierarchyState] = []
    integrate(
        generator,
        HierarchyState.initial(layout, bell_state(cfg.initial_state)),
        total_time,
        icfg,
        schedule=schedule,
        sample_times=sample_times(icfg, total_time),
        on_sample=samples.append,
    )

    times = np.array([s.t for s in samples])
    rdms = np.stack([s.rdm for s in samples])
    counts = None
    if schedule is not None:
        counts = np.array([pulses_applied(schedule, t) for t in times], dtype=np.int64)

    traj = Trajectory(
        times=times,
        distances=derived.v_f * times,
        concurrences=np.array([concurrence(rho) for rho in rdms]),
        rdms=rdms,
        pulses_applied=counts,
    )
    logger.info(
        f"Trajectory: eta={derived.eta:.4g}, lc_km={cfg.fiber.correlation_length_km:.4g}, "
        f"{len(layout)} ADMs, {len(traj)} samples, final C={traj.final_concurrence:.6f} "
        f"({time.perf_counter() - start:.2f}s)"
    )
    return traj


@dataclass(frozen=True)
class ConvergenceReport:
    max_depth: int
    reference_depth: int
    max_difference: float
    final_concurrence: float
    reference_final_concurrence: float


def convergence_check(
    cfg: ModelConfig,
    icfg: IntegratorConfig,
    total_time: float,
    schedule: PulseSequence | None = None,
) -> ConvergenceReport:
    """Compare concurrence traces at max_depth and max_depth + 2 (sup norm)."""
    reference_cfg = icfg.model_copy(update={"max_depth": icfg.max_depth + 2})
    base = evolve(cfg, icfg, total_time, schedule)
    reference = evolve(cfg, reference_cfg, total_time, schedule)

    difference = float(np.max(np.abs(base.concurrences - reference.concurrences)))
    logger.info(
        f"Convergence: depth {icfg.max_depth} vs {reference_cfg.max_depth}, "
        f"sup |dC| = {difference:.3e}"
    )
    return ConvergenceReport(
        max_depth=icfg.max_depth,
        reference_depth=reference_cfg.max_depth,
        max_difference=difference,
        final_concurrence=base.final_concurrence,
        reference_final_concurrence=reference.final_concurrence,
    )
