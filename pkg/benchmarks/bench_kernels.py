"""Compare the compiled and numpy kernel backends on tiny-net sized workloads.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--ber 1e-3]
"""
import argparse
import timeit

import numpy as np

from r2f import kernels


def _workloads(rng, ber):
    x = rng.integers(-128, 128, (16, 8, 14, 14), dtype=np.int16).astype(np.int8)
    w = rng.integers(-128, 128, (16, 8, 3, 3), dtype=np.int16).astype(np.int8)
    b = rng.integers(-1000, 1000, 16).astype(np.int32)
    acc = kernels.python_backend.conv_acc(x, w, b, 1, 1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    n_macs = acc.size * w[0].size
    pos = np.sort(rng.choice(n_macs * 16, int(n_macs * 16 * ber), replace=False))
    events = (pos // 16, ((pos % 16) // 8).astype(np.uint8), (pos % 8).astype(np.uint8))
    inc = np.zeros(16 * 16 * 14 * 14, np.int16)
    hot = rng.choice(inc.size, inc.size // 100, replace=False)
    inc[hot] = rng.integers(-255, 256, hot.size)
    blob = kernels.python_backend.encode_sparse(inc)
    from r2f import zoo
    from r2f.faults import FaultConfig, FaultInjector
    from r2f.nn import quantize_model
    from r2f.nn.forward import model_forward

    qm = quantize_model(zoo.build("tiny-net", seed=0))
    img = rng.integers(-128, 128, (16, 1, 28, 28), dtype=np.int16).astype(np.int8)
    mac_faults = FaultInjector(FaultConfig(ber, 1, mode="per_mac"))

    def forward(k, hook=None):
        # route the model's kernel calls through backend k for the duration
        saved = kernels.conv_acc, kernels.permac_correct
        kernels.conv_acc, kernels.permac_correct = k.conv_acc, k.permac_correct
        try:
            return model_forward(qm, img, hook)[-1]
        finally:
            kernels.conv_acc, kernels.permac_correct = saved

    return {
        "tiny-net forward": forward,
        "tiny-net per-MAC forward": lambda k: forward(k, mac_faults),
        "conv_acc": lambda k: k.conv_acc(x, w, b, 1, 1),
        "permac_correct": lambda k: _corrected(k, acc, xp, w, events),
        "encode_sparse": lambda k: k.encode_sparse(inc),
        "decode_sparse": lambda k: k.decode_sparse(blob, inc.size),
    }


def _corrected(k, acc, xp, w, events):
    out = acc.copy()
    k.permac_correct(out, xp, w, 1, *events)
    return out


def _same(a, b):
    if isinstance(a, (bytes, bytearray)):
        return a == b
    if a is None:
        return b is None
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--ber", type=float, default=1e-3, help="per-MAC fault rate for permac_correct")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available()
    print(f"backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    work = _workloads(np.random.default_rng(args.seed), args.ber)
    names = list(backends)
    print("kernel\t" + "\t".join(f"{n}_ms" for n in names) + ("\tspeedup" if len(names) > 1 else ""))
    for kernel, fn in work.items():
        times, outs = [], []
        for n in names:
            outs.append(fn(backends[n]))
            t = min(timeit.repeat(lambda: fn(backends[n]), number=1, repeat=args.repeat))
            times.append(t * 1e3)
        line = f"{kernel}\t" + "\t".join(f"{t:.3f}" for t in times)
        if len(names) > 1:
            if not _same(outs[0], outs[1]):
                raise SystemExit(f"{kernel}: backends disagree")
            line += f"\t{times[0] / times[1]:.1f}x"
        print(line)


if __name__ == "__main__":
    main()
