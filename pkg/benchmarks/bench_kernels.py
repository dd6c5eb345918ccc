"""Time the numba and numpy flavours of every kernel on workload-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Sizes follow what training and inference actually feed the kernels: one
window's anchors against a handful of events, a night's worth of NMS
candidates, a minibatch of first-block activations for max pooling.
Convolution is not listed: it runs as a BLAS matmul in both modes.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from dosed import kernels
from dosed._accel import _HAVE_NUMBA
from dosed.grid import build_grid


def _intervals(rng, n, span):
    start = rng.uniform(0, span, n)
    return start, start + rng.uniform(5, 60, n)


def workloads(rng):
    g = build_grid()
    ts, te = _intervals(rng, 4, 180.0)
    anchor_iou = kernels.iou_matrix_np(ts, te, g.starts, g.stops)
    cs, ce = _intervals(rng, 3000, 7200.0)
    order = np.argsort(-rng.uniform(size=3000)).astype(np.int64)
    ps, pe = _intervals(rng, 300, 7200.0)
    rs, re = _intervals(rng, 300, 7200.0)
    match_iou = kernels.iou_matrix_np(ps, pe, rs, re)
    x = rng.standard_normal((128, 8, 720))
    out, idx = kernels.maxpool2_forward_np(x)
    grad = rng.standard_normal(out.shape)
    return {
        "iou_matrix (4x92)": ("iou_matrix", (ts, te, g.starts, g.stops)),
        "iou_matrix (300x300)": ("iou_matrix", (ps, pe, rs, re)),
        "nms_keep (3000)": ("nms_keep", (cs, ce, order, 0.5)),
        "greedy_pairs (300x300)": ("greedy_pairs", (match_iou, 0.3)),
        "anchor_assign (4x92)": ("anchor_assign", (anchor_iou, 0.5)),
        "maxpool2_forward (128x8x720)": ("maxpool2_forward", (x,)),
        "maxpool2_backward (128x8x360)": ("maxpool2_backward", (grad, idx, 720)),
    }


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, triggers JIT compilation
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the results here")
    args = p.parse_args()
    if not _HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rows = []
    for label, (name, call_args) in workloads(np.random.default_rng(0)).items():
        t_np = best_time(getattr(kernels, f"{name}_np"), call_args, args.repeat)
        t_nb = best_time(getattr(kernels, f"{name}_nb"), call_args, args.repeat)
        rows.append({"kernel": label, "numpy_us": t_np * 1e6, "numba_us": t_nb * 1e6, "speedup": t_np / t_nb})

    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy us':>10}  {'numba us':>10}  {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['numpy_us']:>10.1f}  {r['numba_us']:>10.1f}  {r['speedup']:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
