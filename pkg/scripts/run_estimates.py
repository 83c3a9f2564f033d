"""Smoothing-norm sweeps for the heat and wave models; prints fitted exponents."""

import argparse

from spde_hjb.config import ModelConfig
from spde_hjb.smoothing import fit_exponent
from spde_hjb.spectral import make_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-min", type=float, default=1e-4)
    ap.add_argument("--t-max", type=float, default=1e-2)
    ap.add_argument("--samples", type=int, default=24)
    args = ap.parse_args()
    for cfg in (ModelConfig(kind="heat"), ModelConfig(kind="wave", dim_h=8)):
        rep = fit_exponent(make_model(cfg), args.t_min, args.t_max, args.samples)
        line = f"{cfg.kind:5s} slope={rep.fitted_exponent:+.4f} R2={rep.fit_r2:.5f} kappa0={rep.kappa0:.3f}"
        if rep.unprojected_exponent is not None:
            line += f" unprojected slope={rep.unprojected_exponent:+.4f}"
        print(line)


if __name__ == "__main__":
    main()
