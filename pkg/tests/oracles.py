"""Brute-force reference implementations used by the metric tests.

Everything here loops over pixels with plain Python arithmetic so that it
shares no code path with the vectorised metrics under test.
"""

import math


def miou(logits, gt, k, ignore=255):
    inter = [0] * k
    pred_count = [0] * k
    gt_count = [0] * k
    for img, lab in zip(logits, gt):
        h, w = len(lab), len(lab[0])
        for y in range(h):
            for x in range(w):
                g = int(lab[y][x])
                if g == ignore:
                    continue
                scores = list(img[y][x])
                if len(scores) == 1:
                    p = 1 if scores[0] > 0 else 0
                else:
                    p = max(range(len(scores)), key=lambda c: (scores[c], -c))
                gt_count[g] += 1
                pred_count[p] += 1
                if p == g:
                    inter[g] += 1
    ious = []
    for c in range(k):
        if gt_count[c]:
            ious.append(inter[c] / (gt_count[c] + pred_count[c] - inter[c]))
    return sum(ious) / len(ious)


def rmse(preds, gts, masks):
    total, n = 0.0, 0
    for p, g, m in zip(preds, gts, masks):
        for y in range(len(g)):
            for x in range(len(g[0])):
                if m[y][x]:
                    total += (p[y][x] - g[y][x]) ** 2
                    n += 1
    return math.sqrt(total / n)


def mean_angle(preds, gts, masks):
    total, n = 0.0, 0
    for p, g, m in zip(preds, gts, masks):
        for y in range(len(g)):
            for x in range(len(g[0])):
                if not m[y][x]:
                    continue
                a, b = p[y][x], g[y][x]
                na = math.sqrt(sum(v * v for v in a))
                nb = math.sqrt(sum(v * v for v in b))
                if na == 0:
                    total += 90.0
                else:
                    c = sum(u * v for u, v in zip(a, b)) / (na * nb)
                    total += math.degrees(math.acos(max(-1.0, min(1.0, c))))
                n += 1
    return total / n


def _has_within(mask, y, x, r):
    h, w = len(mask), len(mask[0])
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and mask[yy][xx]:
                return True
    return False


def ods_f(probs, gts, thresholds, r=1):
    best = 0.0
    for t in thresholds:
        tp_p = n_p = tp_g = n_g = 0
        for prob, gt in zip(probs, gts):
            pb = [[v >= t for v in row] for row in prob]
            gb = [[v > 0.5 for v in row] for row in gt]
            for y in range(len(gb)):
                for x in range(len(gb[0])):
                    if pb[y][x]:
                        n_p += 1
                        tp_p += _has_within(gb, y, x, r)
                    if gb[y][x]:
                        n_g += 1
                        tp_g += _has_within(pb, y, x, r)
        prec = tp_p / n_p if n_p else 0.0
        rec = tp_g / n_g if n_g else 0.0
        if prec + rec > 0:
            best = max(best, 2 * prec * rec / (prec + rec))
    return best


def delta_m(rows):
    acc = 0.0
    for m, b, lower in rows:
        acc += (-1) ** int(lower) * (m - b) / b
    return 100.0 * acc / len(rows)


# random 8x8 instances shared by the metric tests and the acceptance suite

def random_instance(rng):
    n_img = int(rng.integers(1, 4))
    k = int(rng.integers(2, 5))
    labels = [rng.integers(0, k, size=(8, 8)) for _ in range(n_img)]
    for lab in labels:
        lab[rng.random((8, 8)) < 0.1] = 255
        lab[0, 0] = 0
    logits = [rng.normal(size=(8, 8, k)) for _ in range(n_img)]
    depth_p = [rng.normal(size=(8, 8)) for _ in range(n_img)]
    depth_g = [rng.normal(size=(8, 8)) for _ in range(n_img)]
    masks = [rng.random((8, 8)) < 0.8 for _ in range(n_img)]
    for m in masks:
        m[0, 0] = True
    normal_p = [rng.normal(size=(8, 8, 3)) for _ in range(n_img)]
    normal_p[0][1, 1] = 0.0
    normal_g = [rng.normal(size=(8, 8, 3)) for _ in range(n_img)]
    probs = [rng.random((8, 8)) for _ in range(n_img)]
    edges = [(rng.random((8, 8)) < 0.2).astype(float) for _ in range(n_img)]
    edges[0][4, 4] = 1.0
    rows = [(float(rng.uniform(0.1, 90)), float(rng.uniform(0.1, 90)), bool(rng.integers(2))) for _ in range(k)]
    return dict(k=k, labels=labels, logits=logits, dp=depth_p, dg=depth_g, masks=masks,
                np_=normal_p, ng=normal_g, probs=probs, edges=edges, rows=rows)
