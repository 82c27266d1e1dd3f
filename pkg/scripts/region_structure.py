"""Stationary points of the free entropy for the five-group isotropic scenario at a few alphas."""

import argparse

from replica_access.model import reference_isotropic
from replica_access.replica.stationary import FreeEntropySpec, find_stationary_points


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.525, 0.55, 0.575, 0.6, 0.675])
    ap.add_argument("--antennas", type=int, default=2)
    ap.add_argument("--pt-dbm", type=float, default=33.0)
    ap.add_argument("--nodes", type=int, default=64)
    args = ap.parse_args()

    print(f"{'alpha':>7} {'maxima':>6} {'gap':>6}  local maxima (NMSE dB, free entropy)")
    for a in args.alphas:
        cfg = reference_isotropic(pt_dbm=args.pt_dbm, n_antennas=args.antennas, alpha=a).build()
        rep = find_stationary_points(FreeEntropySpec("isotropic", cfg, nodes=args.nodes))
        pts = ", ".join(f"({p.nmse_db:.2f}, {p.value:.6g})" for p in rep.points)
        print(f"{a:7.4f} {rep.n_maxima:6d} {str(rep.gap):>6}  {pts}")


if __name__ == "__main__":
    main()
