"""Phase diagrams over alpha against transmit power and antenna count; one CSV per diagram."""

import argparse
from pathlib import Path

import numpy as np

from replica_access.model import reference_correlated, reference_isotropic
from replica_access.replica.stationary import phase_diagram


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/phase"))
    ap.add_argument("--step", type=float, default=0.0125)
    ap.add_argument("--correlated", action="store_true", help="also sweep the correlated group")
    args = ap.parse_args()

    alphas = np.round(np.arange(0.5, 0.75 + 1e-9, args.step), 6)
    jobs = {
        "isotropic-power": (reference_isotropic(), "pt_dbm", (18.0, 23.0, 28.0, 33.0)),
        "isotropic-antennas": (reference_isotropic(), "n_antennas", (1, 2, 4, 8)),
    }
    for name, (scen, axis2, values) in jobs.items():
        d = phase_diagram(scen, alphas, axis2=axis2, values2=values)
        path = d.write(args.out / f"{name}.csv")
        for v in values:
            gaps = [c.alpha for c in d.cells if c.axis2 == v and c.gap]
            print(f"{name} {axis2}={v}: gap at {gaps or 'none'}, transitions {d.transitions(axis2=v)}")
        print(f"  -> {path}")
    if args.correlated:
        d = phase_diagram(reference_correlated(), np.round(np.arange(0.10, 0.20 + 1e-9, 0.005), 6))
        print(f"correlated: transitions {d.transitions()}  -> {d.write(args.out / 'correlated.csv')}")


if __name__ == "__main__":
    main()
