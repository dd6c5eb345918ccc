"""Hot inner loops, each in a numba flavour (``*_nb``) and a numpy flavour (``*_np``).

The public names (``iou_matrix``, ``nms_keep``, ...) dispatch to one flavour
according to :data:`dosed._accel.USE_NUMBA`. Both flavours are required to
return identical results; ``tests/test_kernels.py`` checks that and
``benchmarks/bench_kernels.py`` times them against each other.

Intervals are passed as separate ``start``/``stop`` float64 arrays.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------- IoU matrix


def iou_matrix_np(a_start, a_stop, b_start, b_stop):
    a_start = np.asarray(a_start, dtype=np.float64)[:, None]
    a_stop = np.asarray(a_stop, dtype=np.float64)[:, None]
    b_start = np.asarray(b_start, dtype=np.float64)[None, :]
    b_stop = np.asarray(b_stop, dtype=np.float64)[None, :]
    inter = np.clip(np.minimum(a_stop, b_stop) - np.maximum(a_start, b_start), 0.0, None)
    # hull of two overlapping intervals = their union; exact ordering keeps IoU <= 1
    hull = np.maximum(a_stop, b_stop) - np.minimum(a_start, b_start)
    return np.divide(inter, hull, out=np.zeros(np.broadcast_shapes(inter.shape, hull.shape)), where=inter > 0)


@njit
def iou_matrix_nb(a_start, a_stop, b_start, b_stop):
    na = a_start.shape[0]
    nb = b_start.shape[0]
    out = np.zeros((na, nb))
    for i in range(na):
        for j in range(nb):
            inter = min(a_stop[i], b_stop[j]) - max(a_start[i], b_start[j])
            if inter > 0.0:
                out[i, j] = inter / (max(a_stop[i], b_stop[j]) - min(a_start[i], b_start[j]))
    return out


# ---------------------------------------------------------------------- NMS


def nms_keep_np(start, stop, order, max_iou):
    """Greedy NMS over ``order`` (indices, best first). Returns kept indices."""
    order = np.asarray(order, dtype=np.int64)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        ov = iou_matrix_np(start[i : i + 1], stop[i : i + 1], start[rest], stop[rest])[0]
        order = rest[ov <= max_iou]
    return np.asarray(keep, dtype=np.int64)


@njit
def nms_keep_nb(start, stop, order, max_iou):
    n = order.shape[0]
    removed = np.zeros(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    k = 0
    for p in range(n):
        if removed[p]:
            continue
        i = order[p]
        keep[k] = i
        k += 1
        for q in range(p + 1, n):
            if removed[q]:
                continue
            j = order[q]
            inter = min(stop[i], stop[j]) - max(start[i], start[j])
            if inter > 0.0:
                iou = inter / (max(stop[i], stop[j]) - min(start[i], start[j]))
                if iou > max_iou:
                    removed[q] = True
    return keep[:k]


# ------------------------------------------------------ greedy event pairing


def greedy_pairs_np(iou, threshold):
    """Pair rows with columns, highest IoU first, each used at most once.

    Ties are broken by smaller row index, then smaller column index. Pairs
    below ``threshold`` are never formed. Returns ``(rows, cols)``.
    """
    iou = np.asarray(iou, dtype=np.float64)
    rr, cc = np.nonzero(iou >= threshold)
    vals = iou[rr, cc]
    order = np.lexsort((cc, rr, -vals))
    used_r = np.zeros(iou.shape[0], dtype=bool)
    used_c = np.zeros(iou.shape[1], dtype=bool)
    rows, cols = [], []
    for k in order:
        r, c = rr[k], cc[k]
        if used_r[r] or used_c[c]:
            continue
        used_r[r] = used_c[c] = True
        rows.append(r)
        cols.append(c)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


@njit
def greedy_pairs_nb(iou, threshold):
    n, m = iou.shape
    cnt = 0
    for i in range(n):
        for j in range(m):
            if iou[i, j] >= threshold:
                cnt += 1
    rr = np.empty(cnt, dtype=np.int64)
    cc = np.empty(cnt, dtype=np.int64)
    neg = np.empty(cnt, dtype=np.float64)
    k = 0
    for i in range(n):
        for j in range(m):
            if iou[i, j] >= threshold:
                rr[k] = i
                cc[k] = j
                neg[k] = -iou[i, j]
                k += 1
    # candidates are in row-major order, so a stable sort keeps the (row, col) tie-break
    order = np.argsort(neg, kind="mergesort")
    used_r = np.zeros(n, dtype=np.bool_)
    used_c = np.zeros(m, dtype=np.bool_)
    kmax = min(n, m)
    rows = np.empty(kmax, dtype=np.int64)
    cols = np.empty(kmax, dtype=np.int64)
    k = 0
    for q in order:
        r, c = rr[q], cc[q]
        if used_r[r] or used_c[c]:
            continue
        used_r[r] = True
        used_c[c] = True
        rows[k] = r
        cols[k] = c
        k += 1
        if k == kmax:
            break
    return rows[:k], cols[:k]


# ------------------------------------------------------ anchor assignment


def anchor_assign_np(iou, gamma):
    """Assign truth events (rows) to anchors (columns).

    Returns ``assigned``: per anchor, the index of its matched truth event or
    -1. First a one-to-one pass gives every truth event its best free anchor
    (highest IoU overall first, ties to the smaller anchor index); then every
    remaining anchor whose best IoU reaches ``gamma`` takes its best truth
    event (ties to the smaller truth index).
    """
    iou = np.asarray(iou, dtype=np.float64)
    n_truth, n_anchor = iou.shape
    assigned = np.full(n_anchor, -1, dtype=np.int64)
    if n_truth == 0:
        return assigned
    # transpose so that flat argmax breaks ties on anchor index first
    work = iou.T.copy()
    for _ in range(min(n_truth, n_anchor)):
        flat = int(np.argmax(work))
        a, t = divmod(flat, n_truth)
        if work[a, t] <= 0.0:
            break
        assigned[a] = t
        work[a, :] = -1.0
        work[:, t] = -1.0
    best_t = np.argmax(iou, axis=0)
    best_v = iou[best_t, np.arange(n_anchor)]
    extra = (assigned < 0) & (best_v >= gamma)
    assigned[extra] = best_t[extra]
    return assigned


@njit
def anchor_assign_nb(iou, gamma):
    n_truth, n_anchor = iou.shape
    assigned = -np.ones(n_anchor, dtype=np.int64)
    if n_truth == 0:
        return assigned
    done_t = np.zeros(n_truth, dtype=np.bool_)
    for _ in range(min(n_truth, n_anchor)):
        best = 0.0
        ba = -1
        bt = -1
        for a in range(n_anchor):
            if assigned[a] >= 0:
                continue
            for t in range(n_truth):
                if done_t[t]:
                    continue
                if iou[t, a] > best:
                    best = iou[t, a]
                    ba = a
                    bt = t
        if ba < 0:
            break
        assigned[ba] = bt
        done_t[bt] = True
    for a in range(n_anchor):
        if assigned[a] >= 0:
            continue
        bt = 0
        for t in range(1, n_truth):
            if iou[t, a] > iou[bt, a]:
                bt = t
        if iou[bt, a] >= gamma:
            assigned[a] = bt
    return assigned


# ------------------------------------------------------------- max pooling


def maxpool2_forward_np(x):
    """Window 2, stride 2 over the last axis of ``x`` [B, C, L]; ties go to the first index."""
    b, c, length = x.shape
    lout = length // 2
    pairs = x[:, :, : 2 * lout].reshape(b, c, lout, 2)
    arg = np.argmax(pairs, axis=-1)
    out = np.take_along_axis(pairs, arg[..., None], axis=-1)[..., 0]
    idx = arg + 2 * np.arange(lout)[None, None, :]
    return out, idx.astype(np.int64)


def maxpool2_backward_np(grad_out, idx, length):
    b, c, _ = grad_out.shape
    g = np.zeros((b, c, length))
    np.put_along_axis(g, idx, grad_out, axis=-1)
    return g


@njit
def maxpool2_forward_nb(x):
    b, c, length = x.shape
    lout = length // 2
    out = np.empty((b, c, lout))
    idx = np.empty((b, c, lout), dtype=np.int64)
    for i in range(b):
        for j in range(c):
            for k in range(lout):
                p = 2 * k
                if x[i, j, p + 1] > x[i, j, p]:
                    p += 1
                out[i, j, k] = x[i, j, p]
                idx[i, j, k] = p
    return out, idx


@njit
def maxpool2_backward_nb(grad_out, idx, length):
    b, c, lout = grad_out.shape
    g = np.zeros((b, c, length))
    for i in range(b):
        for j in range(c):
            for k in range(lout):
                g[i, j, idx[i, j, k]] += grad_out[i, j, k]
    return g


# ---------------------------------------------------------------- dispatch

BACKEND = "numba" if USE_NUMBA else "numpy"

_impl = {
    name: globals()[f"{name}_{'nb' if USE_NUMBA else 'np'}"]
    for name in ("iou_matrix", "nms_keep", "greedy_pairs", "anchor_assign", "maxpool2_forward", "maxpool2_backward")
}


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def iou_matrix(a_start, a_stop, b_start, b_stop):
    return _impl["iou_matrix"](_f64(a_start), _f64(a_stop), _f64(b_start), _f64(b_stop))


def nms_keep(start, stop, order, max_iou):
    return _impl["nms_keep"](_f64(start), _f64(stop), np.ascontiguousarray(order, dtype=np.int64), float(max_iou))


def greedy_pairs(iou, threshold):
    return _impl["greedy_pairs"](_f64(iou).reshape(np.shape(iou)), float(threshold))


def anchor_assign(iou, gamma):
    return _impl["anchor_assign"](_f64(iou).reshape(np.shape(iou)), float(gamma))


def maxpool2_forward(x):
    return _impl["maxpool2_forward"](_f64(x))


def maxpool2_backward(grad_out, idx, length):
    return _impl["maxpool2_backward"](_f64(grad_out), np.ascontiguousarray(idx, dtype=np.int64), int(length))
