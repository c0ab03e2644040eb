"""Compare the compiled im2col/col2im kernels with the numpy fallback.

Run: python benchmarks/bench_kernels.py [--repeat N]

Shapes follow the backbone's layers on a batch of 32 (8, 32, 32) synthetic
patches. Both backends are checked for bitwise equality before timing.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from occurate.autodiff import _conv_py

try:
    from occurate.autodiff import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None

SHAPES = [
    # (N, C, H, W, k, stride, pad)
    (32, 8, 32, 32, 3, 2, 1),
    (32, 16, 16, 16, 3, 1, 1),
    (32, 32, 8, 8, 3, 1, 1),
    (32, 64, 4, 4, 3, 1, 1),
]


def bench(repeat: int) -> list[dict]:
    rows = []
    rng = np.random.default_rng(0)
    for n, c, h, w, k, s, p in SHAPES:
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        cols = _conv_py.im2col(x, k, k, s, p)
        row = {"shape": [n, c, h, w], "k": k, "stride": s, "pad": p}
        for name, mod in (("python", _conv_py), ("cython", _conv_ext)):
            if mod is None:
                continue
            if mod is _conv_ext:
                assert mod.im2col(x, k, k, s, p).tobytes() == cols.tobytes()
                assert mod.col2im(cols, x.shape, k, k, s, p).tobytes() == _conv_py.col2im(cols, x.shape, k, k, s, p).tobytes()
            t_fwd = min(timeit.repeat(lambda: mod.im2col(x, k, k, s, p), number=5, repeat=repeat)) / 5
            t_bwd = min(timeit.repeat(lambda: mod.col2im(cols, x.shape, k, k, s, p), number=5, repeat=repeat)) / 5
            row[f"{name}_im2col_ms"] = 1e3 * t_fwd
            row[f"{name}_col2im_ms"] = 1e3 * t_bwd
        if _conv_ext is not None:
            row["speedup_im2col"] = row["python_im2col_ms"] / row["cython_im2col_ms"]
            row["speedup_col2im"] = row["python_col2im_ms"] / row["cython_col2im_ms"]
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print raw JSON rows")
    args = ap.parse_args()
    rows = bench(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=1))
        return
    if _conv_ext is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'shape':<22}{'k/s/p':<8}{'im2col py':>11}{'im2col cy':>11}{'col2im py':>11}{'col2im cy':>11}")
    for r in rows:
        shape = "x".join(map(str, r["shape"]))
        ksp = f"{r['k']}/{r['stride']}/{r['pad']}"
        cy_f = f"{r.get('cython_im2col_ms', float('nan')):.2f}"
        cy_b = f"{r.get('cython_col2im_ms', float('nan')):.2f}"
        print(f"{shape:<22}{ksp:<8}{r['python_im2col_ms']:>11.2f}{cy_f:>11}{r['python_col2im_ms']:>11.2f}{cy_b:>11}")


if __name__ == "__main__":
    main()
