"""
Entanglement measures, sweep statistics and the pure-dephasing oracle.

The oracle is the exact Gaussian-dephasing solution for commuting couplings
and the real exponential fiber correlation eta * exp(-gamma |t|); it is
cross-checked here by quadrature and by an Ornstein-Uhlenbeck Monte Carlo,
and the hierarchy solver is validated against it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import integrate

from fiberheom.linalg import (
    SIGMA_Y,
    CMatrix,
    commutator,
    dagger,
    hermitian_eig,
    hermiticity_error,
    kron,
    psd_sqrt,
)
from fiberheom.model import (
    BathSpec,
    BellState,
    ModelConfig,
    Topology,
    bell_vector,
    build_baths,
    build_system_hamiltonian,
    coupling_operators,
    derive_params,
)

logger = logging.getLogger(__name__)

NOT_REACHED = math.inf
NOT_DEFINED = math.nan
SQUARE_CHOP = 1e-13
RHO_NEGATIVE_TOL = 1e-6

_SPIN_FLIP = kron(SIGMA_Y, SIGMA_Y)


# -------------------------
# Trajectories
# -------------------------


@dataclass
class Trajectory:
    """Sampled reduced dynamics of one run."""

    times: npt.NDArray[np.float64]
    distances: npt.NDArray[np.float64]
    concurrences: npt.NDArray[np.float64]
    rdms: npt.NDArray[np.complex128] | None = field(default=None, repr=False)
    pulses_applied: npt.NDArray[np.int64] | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        self.concurrences = np.asarray(self.concurrences, dtype=np.float64)
        n = self.times.shape[0]
        if self.distances.shape != (n,) or self.concurrences.shape != (n,):
            raise ValueError(
                f"Trajectory arrays disagree: times {self.times.shape}, "
                f"distances {self.distances.shape}, concurrences {self.concurrences.shape}"
            )
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("Trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def final_concurrence(self) -> float:
        return float(self.concurrences[-1])


@dataclass
class SweepResult:
    """
    Per-cell records of an (eta, L_c) grid.

    ``cells[i][j]`` is the record for eta_values[i] and lc_values[j].
    """

    eta_values: npt.NDArray[np.float64]
    lc_values: npt.NDArray[np.float64]
    cells: list[list[dict[str, Any]]]

    def __post_init__(self):
        self.eta_values = np.asarray(self.eta_values, dtype=np.float64)
        self.lc_values = np.asarray(self.lc_values, dtype=np.float64)
        n_eta, n_lc = self.eta_values.size, self.lc_values.size
        if len(self.cells) != n_eta or any(len(row) != n_lc for row in self.cells):
            raise ValueError(
                f"SweepResult cells do not match axes ({n_eta} x {n_lc})"
            )

    def rows(self) -> list[dict[str, Any]]:
        """Records flattened in ascending (eta, lc) order."""
        order = [
            (eta, lc, i, j)
            for i, eta in enumerate(self.eta_values)
            for j, lc in enumerate(self.lc_values)
        ]
        return [self.cells[i][j] for _, _, i, j in sorted(order)]


# -------------------------
# Concurrence
# -------------------------


def concurrence(rho: CMatrix) -> float:
    """
    Wootters concurrence of a two-qubit density matrix.

    Uses the Hermitian form eig(sqrt(rho) rho_tilde sqrt(rho)) with
    rho_tilde = (YY) rho* (YY). Eigenvalues of rho down to -1e-6 are clamped
    to zero here only.

    Raises:
        ValueError: If rho is not 4x4, not finite, not Hermitian, not unit
            trace or not positive within tolerance
    """
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (4, 4):
        raise ValueError(f"concurrence: expected a 4x4 matrix, got shape {rho.shape}")
    if not np.isfinite(rho).all():
        raise ValueError("concurrence: rho has non-finite entries")
    herm = hermiticity_error(rho)
    if herm > 1e-8:
        raise ValueError(f"concurrence: rho is not Hermitian (max|rho - rho^dagger| = {herm:.3e})")
    trace = np.trace(rho).real
    if abs(trace - 1.0) > 1e-6:
        raise ValueError(f"concurrence: trace of rho is {trace!r}, expected 1")

    try:
        sqrt_rho = psd_sqrt(0.5 * (rho + dagger(rho)), tol=RHO_NEGATIVE_TOL)
    except ValueError as e:
        raise ValueError(f"concurrence: {e}") from e

    clamped = sqrt_rho @ sqrt_rho
    rho_tilde = _SPIN_FLIP @ clamped.conj() @ _SPIN_FLIP

    product = sqrt_rho @ rho_tilde @ sqrt_rho
    squares, _ = hermitian_eig(0.5 * (product + dagger(product)))
    # Rounding noise in the squares is amplified by the square root.
    squares = np.where(squares < SQUARE_CHOP, 0.0, squares)
    lam = np.sqrt(squares)[::-1]

    value = lam[0] - lam[1] - lam[2] - lam[3]
    return float(min(1.0, max(0.0, value)))


# -------------------------
# Trajectory measures
# -------------------------


def non_markovianity(traj: Trajectory) -> float:
    """
    Revival measure: total variation of C minus its net decrease.

    Zero for monotone decay; positive only when entanglement revives.

    Raises:
        ValueError: If the trajectory has fewer than two samples
    """
    values = np.asarray(traj.concurrences, dtype=np.float64)
    if values.size < 2:
        raise ValueError("non_markovianity needs at least 2 samples")
    variation = float(np.sum(np.abs(np.diff(values))))
    measure = variation - (values[0] - values[-1])
    return max(0.0, measure)


def distance_to_threshold(traj: Trajectory, threshold: float = 0.1) -> float:
    """
    First distance at which concurrence falls to ``threshold``.

    Linear interpolation between the bracketing samples; NOT_REACHED (inf)
    when the concurrence stays above the threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")

    values = traj.concurrences
    below = np.flatnonzero(values <= threshold)
    if below.size == 0:
        return NOT_REACHED
    i = int(below[0])
    if i == 0:
        return float(traj.distances[0])

    c0, c1 = values[i - 1], values[i]
    d0, d1 = traj.distances[i - 1], traj.distances[i]
    return float(d0 + (c0 - threshold) / (c0 - c1) * (d1 - d0))


def dd_advantage(c_cpmg: float, c_udd: float) -> float:
    """Relative residual-concurrence difference (C_CPMG - C_UDD) / C_CPMG."""
    if not c_cpmg > 0:
        return NOT_DEFINED
    return (c_cpmg - c_udd) / c_cpmg


def is_monotone_nonincreasing(traj: Trajectory, tol: float = 1e-12) -> bool:
    return bool(np.all(np.diff(traj.concurrences) <= tol))


# -------------------------
# Pure-dephasing oracle
# -------------------------


def _coherence_pair(state: BellState) -> tuple[int, int]:
    support = np.flatnonzero(np.abs(bell_vector(state)) > 0)
    return int(support[0]), int(support[1])


def dephasing_prefactor(topology: Topology | str, state: BellState | str) -> int:
    """
    Integer K in C(t) = exp(-K * eta * g(t) / gamma^2).

    Sum over baths of (q_a - q_b)^2, where a, b span the Bell state and q are
    the diagonal entries of each coupling operator.
    """
    a, b = _coherence_pair(BellState(state))
    total = 0.0
    for q in coupling_operators(Topology(topology)):
        diag = np.real(np.diag(q))
        total += (diag[a] - diag[b]) ** 2
    return int(round(total))


def _memory_function(gamma: float, t: npt.ArrayLike) -> np.ndarray:
    """(gamma t - 1 + exp(-gamma t)) / gamma^2, stable for small gamma t."""
    t = np.asarray(t, dtype=np.float64)
    x = gamma * t
    return (x + np.expm1(-x)) / gamma**2


def dephasing_oracle(
    eta: float,
    gamma: float,
    t: npt.ArrayLike,
    topology: Topology | str = Topology.INDEPENDENT,
    state_kind: BellState | str = BellState.PHI_PLUS,
) -> np.ndarray | float:
    """
    Exact concurrence under Gaussian pure dephasing.

    C(t) = exp(-K * eta * (gamma t - 1 + exp(-gamma t)) / gamma^2), the
    second-order cumulant result, which is exact for Gaussian noise.

    Args:
        eta: Correlation amplitude (1/us^2)
        gamma: Correlation decay rate (1/us)
        t: Time or array of times (us)
        topology: Bath topology
        state_kind: Initial Bell state

    Returns:
        Concurrence with the shape of ``t``
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k = dephasing_prefactor(topology, state_kind)
    value = np.exp(-k * eta * _memory_function(gamma, t))
    return float(value) if np.ndim(value) == 0 else value


def require_pure_dephasing(hamiltonian: CMatrix, baths: list[BathSpec]) -> None:
    """
    Check that the oracle applies to a model.

    Raises:
        ValueError: If a coupling fails to commute with H or with another
            coupling, or a correlation amplitude is complex
    """
    couplings = [bath.coupling for bath in baths]
    for i, q in enumerate(couplings):
        if np.max(np.abs(commutator(hamiltonian, q))) > 1e-12:
            raise ValueError(f"Oracle invalid: coupling {i} does not commute with H_S")
        for j in range(i + 1, len(couplings)):
            if np.max(np.abs(commutator(q, couplings[j]))) > 1e-12:
                raise ValueError(f"Oracle invalid: couplings {i} and {j} do not commute")
    for bath in baths:
        for c, nu in bath.exponents:
            if c.imag != 0.0 or nu.imag != 0.0:
                raise ValueError(
                    f"Oracle invalid: complex correlation term (c={c}, nu={nu})"
                )


def oracle_for_model(cfg: ModelConfig, times: npt.ArrayLike) -> np.ndarray:
    """
    Oracle concurrence for a configured model at the given times.

    Raises:
        ValueError: If the model is outside the oracle's validity (explicit
            exponent lists or non-commuting operators)
    """
    if cfg.exponents is not None:
        raise ValueError("Oracle invalid: only the single fiber correlation exponent is supported")
    require_pure_dephasing(build_system_hamiltonian(cfg), build_baths(cfg))
    derived = derive_params(cfg.fiber)
    return np.atleast_1d(
        dephasing_oracle(derived.eta, derived.gamma, times, cfg.topology, cfg.initial_state)
    )


def phase_variance_quadrature(eta: float, gamma: float, t: float) -> float:
    """
    Ordered double integral of eta * exp(-gamma (t1 - t2)) over 0 < t2 < t1 < t.

    Half the accumulated phase variance per unit coupling; equals the closed
    form eta * (gamma t - 1 + exp(-gamma t)) / gamma^2.
    """
    if t <= 0:
        return 0.0
    value, abserr = integrate.dblquad(
        lambda t2, t1: eta * math.exp(-gamma * (t1 - t2)),
        0.0,
        t,
        0.0,
        lambda t1: t1,
        epsabs=1e-13,
        epsrel=1e-11,
    )
    logger.debug(f"Quadrature phase integral {value:.6e} (error estimate {abserr:.1e})")
    return value


def ou_dephasing_monte_carlo(
    eta: float,
    gamma: float,
    t: float,
    topology: Topology | str = Topology.INDEPENDENT,
    state_kind: BellState | str = BellState.PHI_PLUS,
    n_realizations: int = 10_000,
    n_steps: int | None = None,
    seed: int = 0,
) -> tuple[float, float]:
    """
    Classical-noise estimate of the dephasing concurrence.

    Each bath drives an Ornstein-Uhlenbeck frequency x(t) with stationary
    variance eta and correlation time 1/gamma, sampled with its exact
    one-step update. The phase of the Bell coherence is sum_b dq_b * int x_b,
    integrated with the trapezoid rule, and the concurrence is |<e^{i phi}>|,
    estimated as the mean of cos(phi).

    Args:
        eta: Noise variance (1/us^2)
        gamma: Inverse correlation time (1/us)
        t: Final time (us)
        topology: Bath topology
        state_kind: Initial Bell state
        n_realizations: Number of noise paths
        n_steps: Time steps per path (default resolves both t and 1/gamma)
        seed: Seed for numpy's default generator

    Returns:
        (mean concurrence, standard error of the mean)
    """
    if n_realizations < 2:
        raise ValueError(f"n_realizations must be >= 2, got {n_realizations}")
    if t <= 0:
        return 1.0, 0.0
    if n_steps is None:
        n_steps = max(200, math.ceil(gamma * t / 0.05))

    a, b = _coherence_pair(BellState(state_kind))
    weights = []
    for q in coupling_operators(Topology(topology)):
        diag = np.real(np.diag(q))
        weights.append(diag[a] - diag[b])

    rng = np.random.default_rng(seed)
    dt = t / n_steps
    decay = math.exp(-gamma * dt)
    kick = math.sqrt(eta * (1.0 - decay**2))

    phase = np.zeros(n_realizations)
    for weight in weights:
        x = math.sqrt(eta) * rng.standard_normal(n_realizations)
        integral = np.zeros(n_realizations)
        for _ in range(n_steps):
            x_next = x * decay + kick * rng.standard_normal(n_realizations)
            integral += 0.5 * dt * (x + x_next)
            x = x_next
        phase += weight * integral

    samples = np.cos(phase)
    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / math.sqrt(n_realizations))
    return mean, stderr
