"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--T 500] [--repeat 5]

The problem sizes mirror one Gibbs sweep of a three-variable, two-lag model:
a 21-dimensional coefficient state observed through three equations, and
single-move volatility updates over one path.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from tvpsvar.kernels import compiled_available, get_backend


def problem(T: int, n: int = 3, lags: int = 2, seed: int = 0):
    rng = np.random.default_rng(seed)
    m = 1 + n * lags
    k = n * m
    X = np.column_stack([np.ones(T), rng.standard_normal((T, n * lags))])
    loading = np.zeros((T, n, k))
    for i in range(n):
        loading[:, i, i * m : (i + 1) * m] = X
    obs = rng.standard_normal((T, n))
    obs_cov = np.tile(np.eye(n), (T, 1, 1))
    trans_cov = 1e-4 * np.eye(k)
    init_mean = np.zeros(k)
    init_cov = np.eye(k)
    normals = rng.standard_normal((T, k))
    lnh = np.zeros(T)
    y2 = rng.standard_normal(T) ** 2
    sv_normals = rng.standard_normal(T)
    sv_unif = rng.random(T)
    return (obs, loading, obs_cov, trans_cov, init_mean, init_cov), normals, (lnh, y2, 0.0, 0.01, sv_normals, sv_unif)


def bench(mod, args, normals, sv_args, repeat: int) -> dict[str, float]:
    filt = mod.kalman_filter(*args)
    out = {}
    out["kalman_filter"] = min(timeit.repeat(lambda: mod.kalman_filter(*args), number=1, repeat=repeat))
    out["backward_sample"] = min(
        timeit.repeat(lambda: mod.backward_sample(filt[0], filt[1], args[3], normals), number=1, repeat=repeat)
    )
    out["sv_single_move"] = min(timeit.repeat(lambda: mod.sv_single_move(*sv_args), number=1, repeat=repeat))
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args(argv)
    args, normals, sv_args = problem(a.T)
    py = bench(get_backend("python"), args, normals, sv_args, a.repeat)
    if not compiled_available():
        print("compiled kernels not built; python timings only")
        for name, t in py.items():
            print(f"{name:16s} python {1e3 * t:9.2f} ms")
        return
    cy_mod = get_backend("cython")
    # same inputs, same answers
    fp, fc = get_backend("python").kalman_filter(*args), cy_mod.kalman_filter(*args)
    assert np.allclose(fp[0], fc[0], atol=1e-9), "backends disagree on filtered means"
    cy = bench(cy_mod, args, normals, sv_args, a.repeat)
    print(f"T={a.T}, best of {a.repeat}")
    print(f"{'kernel':16s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name in py:
        print(f"{name:16s} {1e3 * py[name]:9.2f} ms {1e3 * cy[name]:9.2f} ms {py[name] / cy[name]:7.1f}x")


if __name__ == "__main__":
    main()
