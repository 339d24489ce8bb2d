"""Compare the compiled and NumPy kernel backends.

    python benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeat 5]

Prints one line per (kernel, mesh size, backend) with the best wall time
and the speedup of the compiled backend, after checking both agree.
"""
import argparse
import timeit

import numpy as np

from moserlab.geometry import structured_rectangle_mesh
from moserlab.kernels import backends


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--p", type=float, default=3.0)
    args = ap.parse_args(argv)
    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; only the NumPy timings are shown")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>6}{'elements':>10}{'backend':>9}{'best [ms]':>12}{'speedup':>9}")
    for n in args.sizes:
        mesh = structured_rectangle_mesh(1.0, 1.0, n, n)
        u = rng.standard_normal(mesh.n_nodes)
        cases = {
            "flux+jacobian": lambda k: k.flux_assembly(
                0, args.p, 0.0, 0.0, 1e-10, mesh.basis_gradients, mesh.areas, mesh.triangles, u, True),
            "log_power_sum": lambda k: k.log_power_sum(u, mesh.lumped_mass, 400.0),
        }
        for name, fn in cases.items():
            outs = {b: fn(k) for b, k in impls.items()}
            if len(outs) == 2:
                a, b = outs["python"], outs["cython"]
                if name == "flux+jacobian":
                    assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-12) and np.allclose(a[1], b[1], rtol=1e-12, atol=1e-12)
                else:
                    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
            times = {b: min(timeit.repeat(lambda k=k: fn(k), number=1, repeat=args.repeat)) for b, k in impls.items()}
            for b, t in times.items():
                sp = f"{times['python'] / t:8.1f}x" if b == "cython" else ""
                print(f"{name:<16}{n:>6}{mesh.n_triangles:>10}{b:>9}{1e3 * t:>12.3f}{sp:>9}")


if __name__ == "__main__":
    main()
