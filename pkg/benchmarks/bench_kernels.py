"""Compare the compiled Gaussian kernel against the numpy fallback.

Times the batch scoring path (per-class mixture log-likelihoods) over a
range of problem shapes and prints per-backend timings. Run from the repo
root:

    python3 benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from logitgmm._kernels import compiled_available, numpy_backend

try:
    from logitgmm._kernels import _gausskern
except ImportError:
    _gausskern = None

# (detections, classes, components, dimension)
SHAPES = [
    (1000, 15, 6, 15),    # the throughput acceptance shape
    (1000, 50, 6, 50),    # COCO-ish logit width
    (10000, 15, 6, 15),
    (100, 15, 1, 15),
]


def make_problem(rng, n, n_classes, m, d):
    x = rng.normal(scale=4.0, size=(n, d))
    class_params = []
    for _ in range(n_classes):
        means = rng.normal(scale=4.0, size=(m, d))
        covs = np.empty((m, d, d))
        for j in range(m):
            a = rng.normal(size=(d, d)) * 0.3
            covs[j] = a @ a.T + np.eye(d)
        class_params.append((means, np.linalg.cholesky(covs)))
    return x, class_params


def score_all(kernel, x, class_params):
    out = np.empty((x.shape[0], len(class_params)))
    log_w = None
    for i, (means, chols) in enumerate(class_params):
        dens = kernel(x, means, chols)
        if log_w is None or log_w.shape[0] != means.shape[0]:
            log_w = np.full(means.shape[0], -np.log(means.shape[0]))
        shifted = dens + log_w
        peak = shifted.max(axis=1, keepdims=True)
        out[:, i] = (peak + np.log(np.sum(np.exp(shifted - peak), axis=1, keepdims=True)))[:, 0]
    return out


def bench(kernel, x, class_params, repeats):
    score_all(kernel, x, class_params)  # warm-up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        score_all(kernel, x, class_params)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = [("python", numpy_backend.component_log_densities)]
    if compiled_available():
        backends.insert(0, ("compiled", _gausskern.component_log_densities))
    else:
        print("compiled kernel not built; benchmarking the fallback only\n")

    header = f"{'shape (n, classes, comps, dim)':32s}" + "".join(
        f"{name + ' ms':>14s}" for name, _ in backends)
    print(header)
    print("-" * len(header))
    for shape in SHAPES:
        x, class_params = make_problem(rng, *shape)
        cells = ""
        results = {}
        for name, kernel in backends:
            ms = bench(kernel, x, class_params, args.repeats)
            results[name] = ms
            cells += f"{ms:14.2f}"
        print(f"{str(shape):32s}{cells}")
        if len(results) == 2:
            ratio = results["python"] / results["compiled"]
            print(f"{'':32s}{'':14s}{f'({ratio:.2f}x)':>14s}")

    if len(backends) == 2:
        x, class_params = make_problem(rng, 500, 10, 4, 12)
        a = score_all(backends[0][1], x, class_params)
        b = score_all(backends[1][1], x, class_params)
        print(f"\nbackend agreement: max abs diff {np.max(np.abs(a - b)):.3e}")


if __name__ == "__main__":
    main()
