"""Slow, obviously-correct reference implementations used as test oracles."""

import itertools

import numpy as np

GRID = [round(0.1 * k, 1) for k in range(1, 10)]


def auroc_pairs(scores, labels):
    """Count every (positive, negative) pair: win 1, tie 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def average_precision_sweep(scores, labels):
    """Sweep each distinct threshold from high to low and add recall gain x precision."""
    n_pos = sum(labels)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return ap


def aupr_harmonic_sweep(scores, labels):
    a = average_precision_sweep(scores, labels)
    b = average_precision_sweep([1.0 - s for s in scores], [1 - y for y in labels])
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def labelled_multisets(length, grid=GRID):
    """Every multiset of (score, label) pairs of the given length.

    Both metrics ignore sample order, so this covers all inputs of that length
    up to permutation. Inputs with a single class are skipped.
    """
    items = [(s, y) for s in grid for y in (0, 1)]
    for combo in itertools.combinations_with_replacement(items, length):
        labels = [y for _, y in combo]
        if 0 < sum(labels) < length:
            yield [s for s, _ in combo], labels


def count_labelled_multisets(length, grid=GRID):
    return sum(1 for _ in labelled_multisets(length, grid))


def median_filter_loop(x, w):
    """Replicate-padded running median written out index by index."""
    n = len(x)
    out = []
    for i in range(n):
        window = [x[min(max(j, 0), n - 1)] for j in range(i - w, i + w + 1)]
        out.append(sorted(window)[w])
    return out


def mstd_loop(x, w):
    r = [a - b for a, b in zip(x, median_filter_loop(x, w))]
    mu = sum(r) / len(r)
    return (sum((v - mu) ** 2 for v in r) / len(r)) ** 0.5


def random_case(rng, length, grid=None):
    while True:
        scores = rng.choice(grid, length) if grid is not None else rng.random(length)
        labels = rng.integers(0, 2, length)
        if 0 < labels.sum() < length:
            return scores.tolist(), labels.tolist()
