#!/usr/bin/env python3
"""
Cross-check the pure-dephasing oracle.

Tabulates the closed-form concurrence against numerical quadrature of the
bath correlation and against an Ornstein-Uhlenbeck Monte Carlo.

Usage:
    # Default grid (eta in {0.01, 0.1}, L_c in {10 m, 100 m, 1 km})
    python scripts/check_oracle.py

    # Custom point, collective bath, more realizations
    python scripts/check_oracle.py --eta 0.05 --lc-km 0.2 --topology collective --realizations 20000

    # JSON output
    python scripts/check_oracle.py --json
"""

import argparse
import json
import math
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from fiberheom.analysis import (
    dephasing_oracle,
    dephasing_prefactor,
    ou_dephasing_monte_carlo,
    phase_variance_quadrature,
)
from fiberheom.model import BellState, FiberParams, Topology, derive_params


def print_section(title: str):
    """Print a section header."""
    print(f"\n{'=' * 78}")
    print(f"  {title}")
    print(f"{'=' * 78}\n")


def check_point(eta, lc_km, times, topology, state, realizations, seed):
    gamma = derive_params(
        FiberParams(mean_birefringence=1.0, birefringence_std=eta, correlation_length_km=lc_km)
    ).gamma
    k = dephasing_prefactor(topology, state)
    rows = []
    for t in times:
        closed = dephasing_oracle(eta, gamma, t, topology, state)
        quad = math.exp(-k * phase_variance_quadrature(eta, gamma, t))
        mc, stderr = ou_dephasing_monte_carlo(
            eta, gamma, t, topology, state, n_realizations=realizations, seed=seed
        )
        rows.append(
            {
                "eta": eta,
                "lc_km": lc_km,
                "gamma": gamma,
                "t_us": t,
                "oracle": closed,
                "quadrature": quad,
                "monte_carlo": mc,
                "stderr": stderr,
                "z": (mc - closed) / stderr if stderr > 0 else 0.0,
            }
        )
    return rows


def main():
    parser = argparse.ArgumentParser(
        description="Cross-check the pure-dephasing oracle",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--eta", type=float, nargs="+", default=[0.01, 0.1])
    parser.add_argument("--lc-km", type=float, nargs="+", default=[0.01, 0.1, 1.0])
    parser.add_argument("--times", type=float, nargs="+", default=[1.0, 5.0, 12.5, 25.0])
    parser.add_argument("--topology", choices=[t.value for t in Topology], default="independent")
    parser.add_argument("--state", choices=[s.value for s in BellState], default="phi_plus")
    parser.add_argument("--realizations", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="Output as JSON")
    args = parser.parse_args()

    rows = []
    for eta in args.eta:
        for lc in args.lc_km:
            rows.extend(
                check_point(
                    eta, lc, args.times, args.topology, args.state, args.realizations, args.seed
                )
            )

    if args.json:
        print(json.dumps(rows, indent=2))
        return

    print_section(
        f"Oracle check: {args.topology} baths, {args.state}, "
        f"K = {dephasing_prefactor(args.topology, args.state)}"
    )
    print(f"  {'eta':>6} {'L_c km':>7} {'t us':>6} {'oracle':>11} {'quad':>11} {'MC':>11} {'z':>6}")
    worst = 0.0
    for row in rows:
        worst = max(worst, abs(row["z"]))
        print(
            f"  {row['eta']:>6.3g} {row['lc_km']:>7.3g} {row['t_us']:>6.3g} "
            f"{row['oracle']:>11.4e} {row['quadrature']:>11.4e} {row['monte_carlo']:>11.4e} "
            f"{row['z']:>6.2f}"
        )
    verdict = "within" if worst <= 3 else "outside"
    print(f"\n  Largest |z| = {worst:.2f} ({verdict} 3 standard errors)")


if __name__ == "__main__":
    main()
