#!/usr/bin/env python3
"""Run the 12-stage segmentation preset end to end.

Generates seeded random weights and input, executes the modeled datapath,
verifies the result against the straight-line reference chain, and prints
the per-layer cycle table with throughput figures.
"""
import argparse
import hashlib
import time

import numpy as np

from ucda import (
    BnParams,
    HwConfig,
    QTensor,
    compile_network,
    execute,
    pack_weights,
    perf_report,
    reference_composition,
    segnet_basic_preset,
    tensor_bytes,
)


def random_artifacts(net, seed: int):
    rng = np.random.default_rng(seed)
    h, w, c = net.input_shape
    x = QTensor(rng.integers(-128, 128, (h, w, c)).astype(np.int8),
                net.input_scale_exp)
    weights, bn, biases = [], [], []
    for spec, link in zip(net.layers, net.chain()):
        if spec.kind not in ("conv3x3", "deconv2x"):
            continue
        cin, cout = link[0][2], link[1][2]
        weights.append(rng.normal(0.0, 0.2, (cout, cin, 3, 3)))
        bn.append(BnParams(
            gamma=rng.uniform(0.5, 1.5, cout),
            beta=rng.uniform(-0.5, 0.5, cout),
            mean=rng.uniform(-0.2, 0.2, cout),
            var=rng.uniform(0.25, 1.0, cout)))
        biases.append(rng.uniform(-0.1, 0.1, cout))
    _, sets = pack_weights(net, weights, bn, biases)
    return x, sets


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--skip-check", action="store_true",
                        help="skip the reference-chain verification")
    args = parser.parse_args()

    net = segnet_basic_preset()
    cfg = HwConfig()
    x, sets = random_artifacts(net, args.seed)
    program = compile_network(net, cfg)
    print(f"{len(program.commands)} commands, {program.stages} stages,"
          f" input {x.height}x{x.width}x{x.channels}")

    t0 = time.perf_counter()
    trace = []
    out, total = execute(program, sets, x, cfg, trace=trace)
    dt = time.perf_counter() - t0
    digest = hashlib.sha256(tensor_bytes(out)).hexdigest()
    print(f"datapath done in {dt:.1f}s host time; output {out.shape},"
          f" sha256 {digest[:16]}…")

    print()
    print(perf_report(total, cfg, trace).to_table())

    if not args.skip_check:
        t0 = time.perf_counter()
        refs = reference_composition(net, sets, x)
        dt = time.perf_counter() - t0
        worst = max(int(np.abs(e.output.data.astype(np.int32)
                               - r.data.astype(np.int32)).max())
                    for e, r in zip(trace, refs))
        verdict = "bit-exact" if worst == 0 else f"MAX DIFF {worst}"
        print(f"reference chain done in {dt:.1f}s host time: {verdict}")


if __name__ == "__main__":
    main()
