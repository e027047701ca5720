"""Compare the numba kernels with the numpy fallback.

Each backend runs in its own interpreter, because the choice is made once at
import time from ``CCGEN_DISABLE_NUMBA``. Timings exclude JIT compilation
(one warm-up call per kernel).

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from ccgen import _kernels, factory
from ccgen.kinematics import default_arm, forward_kinematics, inverse_kinematics, jacobian, home_state, JointState
from ccgen.occupancy import capsule_voxels, box_voxels

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
model = default_arm()
qs = rng.uniform(model.lower, model.upper, size=(500, model.dof))
targets = [forward_kinematics(model, JointState(tuple(q), 0.0))[1] for q in qs[:50]]
caps = rng.uniform(-0.5, 0.5, size=(500, 2, 3))
boxes = rng.uniform(-0.3, 0.3, size=(200, 3)), np.repeat(np.eye(3)[None], 200, 0), rng.uniform(0.02, 0.15, (200, 3))

def fk():
    for q in qs:
        forward_kinematics(model, JointState(tuple(q), 0.0))

def jac():
    for q in qs:
        jacobian(model, q)

def ik():
    for T in targets:
        try:
            inverse_kinematics(model, T, home_state())
        except Exception:
            pass

def vox_capsule():
    for p0, p1 in caps:
        capsule_voxels(p0, p1)

def vox_box():
    box_voxels(*boxes)

def episode():
    factory.generate_episode("lift_barrier", 0)

out = {"backend": _kernels.BACKEND}
for name, fn in [("fk x500", fk), ("jacobian x500", jac), ("ik x50", ik),
                 ("capsule voxels x500", vox_capsule), ("box voxels x200", vox_box),
                 ("lift_barrier episode", episode)]:
    fn()  # warm-up and JIT
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env["CCGEN_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'kernel':<24} {fast['backend'] + ' [s]':>12} {slow['backend'] + ' [s]':>12} {'speed-up':>9}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<24} {fast[key]:>12.4f} {slow[key]:>12.4f} {slow[key] / fast[key]:>8.1f}x")
    print(f"(best of {args.repeat}; total wall time {time.perf_counter() - t0:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
