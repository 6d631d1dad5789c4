"""Asymptotic checks for optimal quadratic grids of N(0,1).

Usage: python scripts/quantizer_constants.py [--out DIR]
Prints N^2 times the distortion against pi*sqrt(3)/2 and writes the
local-behavior table for N=1000 on [-1, 1].
"""

import argparse
import math
from pathlib import Path

import numpy as np

from optquant.distrib import normal
from optquant.gridio import GridStore
from optquant.quantizer import local_behavior_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    store, law = GridStore(), normal()
    q2 = math.pi * math.sqrt(3) / 2
    print("N,N2_distortion,ratio_to_limit")
    for n in (10, 50, 100, 200, 400, 800, 1600):
        v = store.get(law, n).distortion * n * n
        print(f"{n},{v:.6f},{v / q2:.5f}")
    table = local_behavior_table(store.get(law, 1000), (-1.0, 1.0))
    c = law.density_power_integral(1 / 3)
    header = "x,N_p,N3_local,N_p_limit,N3_local_limit"
    limits = np.column_stack([c * law.pdf(table[:, 0]) ** (2 / 3), np.full(len(table), c**3 / 12)])
    np.savetxt(args.out / "local_behavior.csv", np.hstack([table[:, :3], limits]), delimiter=",", header=header, comments="", fmt="%.10g")
    print(f"local behavior table -> {args.out / 'local_behavior.csv'}")


if __name__ == "__main__":
    main()
