"""Time the rasterization kernels on each available backend.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from sffsim import kernels
from sffsim.claimed import GridSpec, mollifier_kernel, policy_groups, sweep_hulls
from sffsim.procedure import default_procedure
from sffsim.world import ActorState, VehicleShape


def workload():
    proc = default_procedure()
    shape = VehicleShape(4.5, 1.9, 2.7)
    st = ActorState(0.0, 0.0, 0.4, 12.0)
    pts = sweep_hulls(st, shape, policy_groups(shape, proc), proc.horizon, proc.dt)
    spec = GridSpec.centered(0.0, 0.0, 60.0, 60.0, 0.125)  # 4x supersampled 0.5 m cells
    cells = np.ascontiguousarray(spec.to_cells(pts))
    occ = np.zeros(GridSpec.centered(0, 0, 60, 60, 0.5).shape)
    occ[40:80, 50:70] = 1.0
    taps = np.ascontiguousarray(mollifier_kernel(1.5, 0.5).taps)
    return spec, cells, occ, taps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    spec, cells, occ, taps = workload()
    print(f"{'backend':<8s} {'stamp_hulls':>14s} {'convolve':>14s}")
    for name in kernels.available_backends():
        be = kernels.load_backend(name)
        t_stamp = min(timeit.repeat(lambda: be.stamp_hulls(np.zeros(spec.shape, np.uint8), cells),
                                    number=1, repeat=args.repeat))
        t_conv = min(timeit.repeat(lambda: be.convolve_clamped(occ, taps), number=1,
                                   repeat=args.repeat))
        print(f"{name:<8s} {t_stamp * 1e3:11.3f} ms {t_conv * 1e3:11.3f} ms")


if __name__ == "__main__":
    main()
