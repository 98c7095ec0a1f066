"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 200] [--json out.json]

Reports the best-of-``repeats`` time per call for an MLP forward+backward at
batch 100, for an Adam step, and for one full TD3 update, per backend.
"""

import argparse
import contextlib
import json
import timeit

import numpy as np

from autorl import _kernels_py, kernels
from autorl.envs import EnvSignature
from autorl.learners import Hyperparams, create_agent
from autorl.replay import Batch

try:
    from autorl import _ckernels
except ImportError:
    _ckernels = None

FUNCS = ("mlp_forward", "mlp_backward", "adam_update", "soft_update", "all_finite")


@contextlib.contextmanager
def backend(mod):
    saved = {f: getattr(kernels, f) for f in FUNCS}
    for f in FUNCS:
        setattr(kernels, f, getattr(mod, f))
    try:
        yield
    finally:
        for f, fn in saved.items():
            setattr(kernels, f, fn)


def best_time(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def bench_mlp(mod, sizes, act, repeats, rng):
    ws = [rng.normal(size=(o, i)) / np.sqrt(i) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(o) for o in sizes[1:]]
    gw = [np.zeros_like(w) for w in ws]
    gb = [np.zeros_like(b) for b in bs]
    x = rng.normal(size=(100, sizes[0]))
    dout = rng.normal(size=(100, sizes[-1]))

    def step():
        _, cache = mod.mlp_forward(ws, bs, x, act, kernels.IDENTITY, 1.0)
        mod.mlp_backward(ws, cache, dout, act, kernels.IDENTITY, 1.0, gw, gb, True)

    return best_time(step, repeats)


def bench_adam(mod, n, repeats, rng):
    p, g, m, v = rng.normal(size=n), rng.normal(size=n), np.zeros(n), np.zeros(n)
    return best_time(lambda: mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 5), repeats)


def bench_td3(mod, hidden, repeats, rng):
    sig = EnvSignature(3, "continuous", 200, 1, 2.0)
    agent = create_agent(sig, hidden, Hyperparams(), rng)
    b = Batch(rng.normal(size=(100, 3)), rng.uniform(-2, 2, (100, 1)), rng.normal(size=100),
              rng.normal(size=(100, 3)), np.zeros(100, bool), np.zeros(100, bool), np.zeros(100, int))
    counter = iter(range(1, 10**9))
    with backend(mod):
        return best_time(lambda: agent.train_batch(b, next(counter), rng), repeats)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    mods = {"numpy": _kernels_py}
    if _ckernels is not None:
        mods["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the numpy path only")

    results = []
    acts = {"relu": kernels.RELU, "tanh": kernels.TANH, "elu": kernels.ELU}
    for sizes in ([4, 128, 1], [4, 64, 64, 1], [4, 256, 256, 1]):
        for name, act in acts.items():
            row = {"case": f"mlp fwd+bwd {sizes} {name}"}
            for label, mod in mods.items():
                row[label] = bench_mlp(mod, sizes, act, args.repeats, rng)
            results.append(row)
    for n in (10_000, 200_000):
        row = {"case": f"adam step n={n}"}
        for label, mod in mods.items():
            row[label] = bench_adam(mod, n, args.repeats, rng)
        results.append(row)
    for hidden in ([64, 64], [128], [256, 256]):
        row = {"case": f"td3 update {hidden}"}
        for label, mod in mods.items():
            row[label] = bench_td3(mod, hidden, max(20, args.repeats // 4), rng)
        results.append(row)

    header = f"{'case':<36}" + "".join(f"{k:>12}" for k in mods) + ("     speedup" if len(mods) == 2 else "")
    print(header)
    for row in results:
        line = f"{row['case']:<36}" + "".join(f"{row[k] * 1e6:>10.1f}us" for k in mods)
        if len(mods) == 2:
            line += f"{row['numpy'] / row['cython']:>11.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
