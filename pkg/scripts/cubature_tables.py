"""Weak-error tables for the vanilla call, put-on-call and exchange spread.

Usage: python scripts/cubature_tables.py [--out DIR]
Writes one CSV per (experiment, basis, method) and prints the fitted slopes.
"""

import argparse
from pathlib import Path

from optquant.cubature import rate_study
from optquant.gridio import GridStore
from optquant.varred import ExchangeSpread, PutOnCall, VanillaCall

LEVELS = [50, 100, 200, 300, 400, 500, 750, 1000]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    store = GridStore()
    cases = [
        ("call", VanillaCall(), ("gaussian", "lognormal")),
        ("put-on-call", PutOnCall(), ("gaussian", "lognormal")),
        ("exchange", ExchangeSpread(), ("gaussian",)),
    ]
    for name, exp, bases in cases:
        ref = exp.reference()
        print(f"{name}: reference {ref:.10f}")
        for basis in bases:
            law, f = exp.integrand(basis)
            for method in ("cubature", "rr"):
                study = rate_study(law, f, ref, LEVELS, method=method, store=store)
                path = args.out / f"{name}_{basis}_{method}.csv"
                path.write_text(study.to_csv())
                slope = "n/a" if study.fitted_slope is None else f"{study.fitted_slope:.3f}"
                print(f"  {basis:9s} {method:8s} slope {slope:>7s}  -> {path}")


if __name__ == "__main__":
    main()
