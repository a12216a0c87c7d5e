"""Independent reference computations used by the tests.

Each oracle is written from the textbook definition with plain loops, sharing
no code with the package under test.
"""

from __future__ import annotations

import cmath
import math


def metrics_oracle(true, pred, k):
    """Per-class TP/FP/FN/TN by walking every sample; returns macro dict + accuracy."""
    per = []
    for c in range(1, k + 1):
        tp = fp = fn = tn = 0
        for t, p in zip(true, pred):
            if t == c and p == c:
                tp += 1
            elif t != c and p == c:
                fp += 1
            elif t == c and p != c:
                fn += 1
            else:
                tn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        sens = tp / (tp + fn) if tp + fn else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        f1 = 2 * prec * sens / (prec + sens) if prec + sens else 0.0
        per.append((prec, sens, spec, f1))
    correct = sum(1 for t, p in zip(true, pred) if t == p)
    return {
        "Precision": sum(x[0] for x in per) / k,
        "Sensitivity": sum(x[1] for x in per) / k,
        "Specificity": sum(x[2] for x in per) / k,
        "F1": sum(x[3] for x in per) / k,
        "Accuracy": correct / len(true),
    }


def labels_from_cm(cm):
    true, pred = [], []
    for i, row in enumerate(cm):
        for j, n in enumerate(row):
            true += [i + 1] * n
            pred += [j + 1] * n
    return true, pred


def dft2(grid):
    """Unshifted 2-D DFT straight from the definition."""
    h, w = len(grid), len(grid[0])
    out = [[0j] * w for _ in range(h)]
    for u in range(h):
        for v in range(w):
            s = 0j
            for y in range(h):
                for x in range(w):
                    s += grid[y][x] * cmath.exp(-2j * math.pi * (u * y / h + v * x / w))
            out[u][v] = s
    return out


def adversarial_oracle(real, fake):
    return sum(math.log(r) for r in real) / len(real) + sum(math.log(1 - f) for f in fake) / len(fake)


def nce_oracle(sim_pos, sim_negs, tau):
    num = math.exp(sim_pos / tau)
    return -math.log(num / (num + sum(math.exp(s / tau) for s in sim_negs)))


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def silhouette_oracle(points, labels):
    """Mean silhouette coefficient from the definition."""
    n = len(points)

    def d(i, j):
        return math.dist(points[i], points[j])

    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            continue
        a = sum(d(i, j) for j in same) / len(same)
        b = min(
            sum(d(i, j) for j in range(n) if labels[j] == other) / sum(1 for j in range(n) if labels[j] == other)
            for other in set(labels)
            if other != labels[i]
        )
        total += (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return total / n
