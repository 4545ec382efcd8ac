"""Time the compiled and numpy effective-process kernels on the same inputs.

    python3 benchmarks/bench_backends.py [--paths 2000] [--steps 100] [--repeat 3]

Also reports the largest difference between the two backends.
"""

import argparse
import time

import numpy as np

from sgdmft import kernels


def make_inputs(P, N, seed=0):
    rng = np.random.default_rng(seed)
    dt = 0.2
    A = np.tril(rng.normal(scale=0.05, size=(N, N)), -1) * dt
    c = rng.choice([-1.0, 1.0], size=P)
    return dict(
        dt=dt,
        lam=0.0,
        delta=0.5,
        lam_hat=rng.uniform(0, 0.3, N),
        A=A,
        m=np.linspace(0, 1, N + 1),
        c=c,
        y=c.copy(),
        h0=rng.standard_normal(P),
        h_init=0.1 * rng.standard_normal(P),
        s=(rng.random((P, N)) < 0.3).astype(float),
        xi=0.3 * rng.standard_normal((P, N)),
        y_shift=np.zeros(N),
        act=kernels.LINEAR,
        L=0.7,
    )


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    a = make_inputs(args.paths, args.steps)
    lpp = np.abs(np.random.default_rng(1).normal(size=(args.paths, args.steps)))

    cases = {
        "h_paths": (kernels.h_paths_nb, kernels.h_paths_np, tuple(a.values())),
        "response_paths": (
            kernels.response_paths_nb,
            kernels.response_paths_np,
            (a["dt"], a["lam"], a["delta"], a["lam_hat"], a["A"], a["s"], lpp),
        ),
        "w_paths": (
            kernels.w_paths_nb,
            kernels.w_paths_np,
            (a["dt"], a["lam"], a["lam_hat"], a["lam_hat"] * 0.5, a["A"], a["m"], a["h0"], a["h_init"], a["xi"]),
        ),
    }
    print(f"{args.paths} paths x {args.steps} steps, best of {args.repeat}")
    print(f"{'kernel':<16}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max diff':>11}")
    for name, (nb, np_, inputs) in cases.items():
        nb(*inputs)  # compile
        t_nb, out_nb = best_of(lambda: nb(*inputs), args.repeat)
        t_np, out_np = best_of(lambda: np_(*inputs), args.repeat)
        diff = np.max(np.abs(out_nb - out_np))
        print(f"{name:<16}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
