"""Timing comparison of the compiled kernel core against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the hot kernels at the shapes the default training configuration
actually hits, plus one full forward+backward training step through each
backend.
"""

import argparse
import time

import numpy as np

from segcl._kernels import _numpy as knp

try:
    from segcl._kernels import _core as kcy
except ImportError:
    kcy = None

# layer shapes of the default network on 32x32 inputs
CONV_CASES = [
    ("enc1 conv 1->8 @32", (2, 1, 32, 32), (8, 1, 3, 3)),
    ("enc2 conv 8->16 @16", (2, 8, 16, 16), (16, 8, 3, 3)),
    ("bottleneck 16->32 @8", (2, 16, 8, 8), (32, 16, 3, 3)),
    ("dec2 conv 32->16 @16", (2, 32, 16, 16), (16, 32, 3, 3)),
    ("dec1 conv 16->8 @32", (2, 16, 32, 32), (8, 16, 3, 3)),
    ("head conv 8->4 @32", (2, 8, 32, 32), (4, 8, 1, 1)),
]


def _time(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e6  # microseconds


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, xs, ws in CONV_CASES:
        x, w = rng.normal(size=xs), rng.normal(size=ws)
        dout = rng.normal(size=(xs[0], ws[0], xs[2], xs[3]))
        for op, npfn, cyfn in (
            ("fwd", lambda: knp.conv2d_forward(x, w), lambda: kcy.conv2d_forward(x, w)),
            (
                "bwd",
                lambda: knp.conv2d_backward(x, w, dout),
                lambda: kcy.conv2d_backward(x, w, dout),
            ),
        ):
            t_np = _time(npfn, repeats)
            t_cy = _time(cyfn, repeats) if kcy is not None else float("nan")
            rows.append((f"{name} {op}", t_np, t_cy))

    x = rng.normal(size=(2, 16, 32, 32))
    rows.append(
        (
            "maxpool2x2 fwd @32",
            _time(lambda: knp.maxpool2x2_forward(x), repeats),
            _time(lambda: kcy.maxpool2x2_forward(x), repeats) if kcy else float("nan"),
        )
    )
    small = rng.normal(size=(2, 16, 16, 16))
    rows.append(
        (
            "upsample2x2 fwd @16",
            _time(lambda: knp.upsample2x2_forward(small), repeats),
            _time(lambda: kcy.upsample2x2_forward(small), repeats) if kcy else float("nan"),
        )
    )
    return rows


def bench_training_step(repeats):
    import segcl._kernels as K
    from segcl import tensor as T
    from segcl.network import SegNet, SegNetConfig

    rng = np.random.default_rng(1)
    x = rng.random((2, 1, 32, 32))
    labels = rng.integers(0, 4, size=(2, 32, 32))

    rows = []
    for label, impl in (("numpy", knp), ("cython", kcy)):
        if impl is None:
            continue
        saved = (K.conv2d_forward, K.conv2d_backward, K.maxpool2x2_forward,
                 K.maxpool2x2_backward, K.upsample2x2_forward, K.upsample2x2_backward)
        K.conv2d_forward = impl.conv2d_forward
        K.conv2d_backward = impl.conv2d_backward
        K.maxpool2x2_forward = impl.maxpool2x2_forward
        K.maxpool2x2_backward = impl.maxpool2x2_backward
        K.upsample2x2_forward = impl.upsample2x2_forward
        K.upsample2x2_backward = impl.upsample2x2_backward
        try:
            net = SegNet(SegNetConfig(), seed=0)

            def step():
                net.params.zero_grads()
                T.clear_graph()
                loss = T.cross_entropy_loss(net.forward_logits(T.Tensor(x)), labels)
                T.backward(loss)

            rows.append((label, _time(step, repeats)))
        finally:
            (K.conv2d_forward, K.conv2d_backward, K.maxpool2x2_forward,
             K.maxpool2x2_backward, K.upsample2x2_forward, K.upsample2x2_backward) = saved
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if kcy is None:
        print("compiled kernels not built; timing numpy fallback only\n")

    print(f"{'kernel':32s} {'numpy us':>12s} {'cython us':>12s} {'speedup':>9s}")
    for name, t_np, t_cy in bench_kernels(args.repeats):
        ratio = t_np / t_cy if t_cy == t_cy else float("nan")
        print(f"{name:32s} {t_np:12.1f} {t_cy:12.1f} {ratio:8.2f}x")

    print("\nfull forward+backward step (batch 2, default net, 32x32):")
    for label, t in bench_training_step(max(20, args.repeats // 10)):
        print(f"  {label:8s} {t / 1000:8.2f} ms")


if __name__ == "__main__":
    main()
