#!/usr/bin/env python3
"""Matched conv-vs-deconv latency comparison.

Runs the canned scenario (a 90x120x8 conv + max pool against a 45x60x8
2x deconvolution, both landing on the same output resolution) and prints
the cycle breakdown, the priming-latency gap and the end-to-end savings,
at the default clock and across a few alternatives.
"""
import argparse

from ucda import HwConfig, latency_scenario, peak_gops


def show(cfg: HwConfig) -> None:
    sc = latency_scenario(cfg)
    print(f"clock {cfg.clock_hz / 1e6:.0f} MHz, {cfg.tn}x{cfg.tm} PEs x"
          f" {cfg.arrays} array(s), peak {peak_gops(cfg):.2f} GOPS")
    for name, rep in (("conv+pool", sc.conv), ("deconv", sc.deconv)):
        print(f"  {name:<10} priming {rep.priming_cycles:>5}"
              f"  compute {rep.compute_cycles:>6}  drain {rep.drain_cycles:>4}"
              f"  weights {rep.weight_cycles:>4}  total {rep.total_cycles:>6}")
    print(f"  compute parity: {sc.conv.compute_cycles} ="
          f" {sc.deconv.compute_cycles}"
          f"  ({'yes' if sc.compute_match else 'NO'})")
    print(f"  priming gap {sc.priming_delta_cycles} cycles"
          f" = {1e6 * sc.priming_delta_seconds:.3f} us,"
          f" total savings {100 * sc.total_savings_fraction:.2f}%")
    print()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sweep", action="store_true",
                        help="also show 100/150/300 MHz clocks")
    args = parser.parse_args()
    show(HwConfig())
    if args.sweep:
        for mhz in (100, 150, 300):
            show(HwConfig(clock_hz=mhz * 1_000_000))


if __name__ == "__main__":
    main()
