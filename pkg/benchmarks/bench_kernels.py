"""Compare the numba kernels with their numpy fallbacks.

Kernel timings call both implementations in one process. The end-to-end rows
run a short sampling job in a subprocess per backend, selected with
``SDESR_NUMBA``, so they include whatever dispatch the package does at import.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""

import argparse
import csv
import os
import subprocess
import sys
import timeit

import numpy as np

from sdesr import kernels
from sdesr.sde import make_rng

E2E_SNIPPET = """
import time, numpy as np
from sdesr.denoiser import DenoiserNet
from sdesr.samplers import SamplerConfig, pc_sample
from sdesr.sde import SdeModel, make_rng
sde = SdeModel("ve")
net = DenoiserNet(sde, seed=0)
y = make_rng(1).random((8, 32, 32, 1)).astype(np.float32)
cfg = SamplerConfig(n_steps=5)
pc_sample(sde, net, y, cfg, make_rng(2))
t0 = time.perf_counter()
pc_sample(sde, net, y, cfg, make_rng(2))
print(time.perf_counter() - t0)
"""


def cases():
    rng = make_rng(0)
    xp = rng.standard_normal((16, 18, 18, 64)).astype(np.float32)
    cols = rng.standard_normal((16, 16, 16, 9 * 64)).astype(np.float32)
    img = rng.random((32, 32))
    win = np.hanning(13)[1:-1]  # separable 1-D window, applied along both axes
    win /= win.sum()
    n_steps, n_paths = 1000, 10_000
    a = -np.linspace(0.05, 10, n_steps)
    g = np.sqrt(np.linspace(0.1, 20, n_steps))
    z = rng.standard_normal((n_steps, n_paths))
    x0 = np.ones(n_paths)
    save = np.array([250, 500, 1000])
    return [
        ("im2col3x3 16x16x16x64", "im2col3x3", (xp,)),
        ("col2im3x3 16x16x16x576", "col2im3x3", (cols,)),
        ("filter2d_valid 32x32 k11", "filter2d_valid", (img, win)),
        ("laplacian 32x32", "laplacian", (img,)),
        ("affine_em 1e4 paths x 1000", "affine_em", (x0, a, g, 1e-3, z, save)),
    ]


def time_call(fn, args, repeat):
    fn(*args)  # compile / warm caches
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def end_to_end(flag):
    env = dict(os.environ, SDESR_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--csv", help="also write the table here")
    p.add_argument("--skip-e2e", action="store_true", help="kernels only")
    args = p.parse_args(argv)

    rows = []
    for label, name, fargs in cases():
        t_nb = time_call(getattr(kernels, name + "_numba"), fargs, args.repeat)
        t_np = time_call(getattr(kernels, name + "_numpy"), fargs, args.repeat)
        rows.append((label, t_nb, t_np))
    if not args.skip_e2e:
        rows.append(("pc_sample 8x32x32, 5 steps", end_to_end("1"), end_to_end("0")))

    print(f"{'case':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, t_nb, t_np in rows:
        print(f"{label:32s} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("case", "numba_s", "numpy_s"))
            w.writerows(rows)


if __name__ == "__main__":
    main()
