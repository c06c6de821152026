"""Slow, obviously-correct reference implementations used only by the tests.

None of these import the code paths they check.
"""

import math
from collections import deque

import numpy as np


def flood_fill_components(mask):
    """8-connected components by BFS, numbered in row-major first-pixel order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int64)
    label = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and out[r, c] == 0:
                label += 1
                out[r, c] = label
                queue = deque([(r, c)])
                while queue:
                    y, x = queue.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and out[ny, nx] == 0:
                                out[ny, nx] = label
                                queue.append((ny, nx))
    return out


def centroid_by_enumeration(m, instance_id):
    pts = [(r, c) for r in range(m.shape[0]) for c in range(m.shape[1]) if m[r, c] == instance_id]
    return sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts)


def direct_correlate(field, kernel):
    """Same-size cross-correlation with numpy 'symmetric' (edge-repeating) padding."""
    field = np.asarray(field, dtype=float)
    k = np.asarray(kernel, dtype=float)
    ph, pw = k.shape[0] // 2, k.shape[1] // 2
    padded = np.pad(field, ((ph, ph), (pw, pw)), mode="symmetric")
    out = np.zeros_like(field)
    for r in range(field.shape[0]):
        for c in range(field.shape[1]):
            acc = 0.0
            for i in range(k.shape[0]):
                for j in range(k.shape[1]):
                    acc += k[i, j] * padded[r + i, c + j]
            out[r, c] = acc
    return out


def sobel_5x5_x():
    """Textbook 5x5 Sobel-x coefficients: [1 4 6 4 1]^T * [-1 -2 0 2 1]."""
    return np.outer([1, 4, 6, 4, 1], [-1, -2, 0, 2, 1]).astype(float)


def majority_class(m, classes, instance_id):
    votes = {}
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            if m[r, c] == instance_id and classes[r, c] != 0:
                votes[int(classes[r, c])] = votes.get(int(classes[r, c]), 0) + 1
    if not votes:
        return None
    best = max(votes.values())
    return min(k for k, v in votes.items() if v == best)


def exhaustive_matches(gt, pred):
    """All (gt, pred, iou) with IoU > 0.5, found by checking every pair."""
    out = []
    for g in sorted(set(np.unique(gt).tolist()) - {0}):
        a = gt == g
        for p in sorted(set(np.unique(pred).tolist()) - {0}):
            b = pred == p
            inter = int(np.logical_and(a, b).sum())
            union = int(np.logical_or(a, b).sum())
            if union and inter / union > 0.5:
                out.append((g, p, inter / union))
    return out


def brute_force_metrics(dataset):
    """PQ per class, mPQ+, R² per class and mean for ``(gt, gt_cls, pred, pred_cls)`` items.

    Classes 1..6. Written from the definitions with plain loops.
    """
    tp = [0] * 7
    fp = [0] * 7
    fn = [0] * 7
    iou = [0.0] * 7
    gt_counts, pred_counts = [], []
    for gt, gt_cls, pred, pred_cls in dataset:
        for k in range(1, 7):
            g_ids = [i for i, c in gt_cls.items() if c == k]
            p_ids = [i for i, c in pred_cls.items() if c == k]
            g_map = np.where(np.isin(gt, g_ids), gt, 0)
            p_map = np.where(np.isin(pred, p_ids), pred, 0)
            matches = exhaustive_matches(g_map, p_map)
            tp[k] += len(matches)
            fp[k] += len(p_ids) - len(matches)
            fn[k] += len(g_ids) - len(matches)
            for _, _, v in matches:
                iou[k] += v
        gt_counts.append([sum(1 for c in gt_cls.values() if c == k) for k in range(1, 7)])
        pred_counts.append([sum(1 for c in pred_cls.values() if c == k) for k in range(1, 7)])
    pqs = []
    for k in range(1, 7):
        denom = tp[k] + 0.5 * fp[k] + 0.5 * fn[k]
        pqs.append(iou[k] / denom if denom else 0.0)
    r2s = []
    n = len(gt_counts)
    for k in range(6):
        g = [row[k] for row in gt_counts]
        p = [row[k] for row in pred_counts]
        mean = sum(g) / n
        ss_res = sum((a - b) ** 2 for a, b in zip(p, g))
        ss_tot = sum((a - mean) ** 2 for a in g)
        if ss_tot == 0:
            r2s.append(1.0 if ss_res == 0 else 0.0)
        else:
            r2s.append(1 - ss_res / ss_tot)
    return {"pq": pqs, "mpq": sum(pqs) / 6, "r2": r2s, "r2_mean": sum(r2s) / 6}


def iou_to_truth(truth, pred):
    """For each truth instance, best IoU with any predicted instance."""
    best = {}
    for g in sorted(set(np.unique(truth).tolist()) - {0}):
        a = truth == g
        score = 0.0
        for p in sorted(set(np.unique(pred[a]).tolist()) - {0}):
            b = pred == p
            score = max(score, np.logical_and(a, b).sum() / np.logical_or(a, b).sum())
        best[g] = score
    return best


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def se_oracle(x, w):
    c, h, wd = x.shape
    pooled = [sum(x[k, i, j] for i in range(h) for j in range(wd)) / (h * wd) for k in range(c)]
    hidden = [max(0.0, sum(w.w1[m, k] * pooled[k] for k in range(c)) + w.b1[m]) for m in range(w.w1.shape[0])]
    gate = [_sig(sum(w.w2[k, m] * hidden[m] for m in range(len(hidden))) + w.b2[k]) for k in range(c)]
    out = np.empty_like(x)
    for k in range(c):
        for i in range(h):
            for j in range(wd):
                out[k, i, j] = gate[k] * x[k, i, j]
    return out


def ca_oracle(x, w):
    c, h, wd = x.shape
    m = w.w_shared.shape[0]

    def hswish(z):
        return z * min(max(z + 3.0, 0.0), 6.0) / 6.0

    row_pool = [[sum(x[k, i, j] for j in range(wd)) / wd for i in range(h)] for k in range(c)]
    col_pool = [[sum(x[k, i, j] for i in range(h)) / h for j in range(wd)] for k in range(c)]
    a_h = np.empty((c, h))
    a_w = np.empty((c, wd))
    for i in range(h):
        hid = [hswish(sum(w.w_shared[q, k] * row_pool[k][i] for k in range(c)) + w.b_shared[q]) for q in range(m)]
        for k in range(c):
            a_h[k, i] = _sig(sum(w.w_h[k, q] * hid[q] for q in range(m)) + w.b_h[k])
    for j in range(wd):
        hid = [hswish(sum(w.w_shared[q, k] * col_pool[k][j] for k in range(c)) + w.b_shared[q]) for q in range(m)]
        for k in range(c):
            a_w[k, j] = _sig(sum(w.w_w[k, q] * hid[q] for q in range(m)) + w.b_w[k])
    out = np.empty_like(x)
    for k in range(c):
        for i in range(h):
            for j in range(wd):
                out[k, i, j] = x[k, i, j] * a_h[k, i] * a_w[k, j]
    return out, a_h, a_w


def conv_oracle(x, kernel, bias):
    c_in, h, w = x.shape
    out = np.zeros((kernel.shape[0], h, w))

    def reflect(i, n):
        # symmetric padding: index -1 -> 0, n -> n-1
        return -i - 1 if i < 0 else (2 * n - i - 1 if i >= n else i)

    for o in range(kernel.shape[0]):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for di in range(3):
                        for dj in range(3):
                            acc += kernel[o, c, di, dj] * x[c, reflect(i + di - 1, h), reflect(j + dj - 1, w)]
                out[o, i, j] = acc
    return out
