#!/usr/bin/env python3
"""Fit all four model variants to one simulated dataset and compare the
resulting profit curves with the ground truth.

    python3 scripts/misspecification.py --preset desk --seed 1
"""
import argparse
import dataclasses
import logging

import numpy as np

from pricefusion import pipeline
from pricefusion.config import PRESETS, preset
from pricefusion.model import ModelVariant


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=PRESETS, default="desk")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = dataclasses.replace(preset(args.preset), seed=args.seed)
    sim = pipeline.simulate(cfg)
    prices = sim.truth.prices
    print("price  " + "  ".join(f"{p:8.2f}" for p in prices))
    print("truth  " + "  ".join(f"{f:8.1f}" for f in sim.truth.profit))
    for variant in ModelVariant:
        curve = pipeline.optimize(cfg, sim, pipeline.fit(cfg, sim, variant=variant))
        gap = curve.mean - sim.truth.profit
        print(f"{variant.value:<22} modal {curve.modal_price:.2f}  mean bias {gap.mean():+8.1f}  "
              f"below 16 {np.mean(gap[prices < 16]):+8.1f}  above 16 {np.mean(gap[prices > 16]):+8.1f}")


if __name__ == "__main__":
    main()
