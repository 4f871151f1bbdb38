"""Independent reference computations used to check the library.

Nothing here imports the code paths under test; each oracle is written the
slow, obvious way.
"""
from fractions import Fraction

import numpy as np


def brute_force_ap(ranked_relevance):
    """AP by enumerating precision at every rank and averaging over relevant ranks."""
    flags = [bool(x) for x in ranked_relevance]
    total_relevant = flags.count(True)
    precisions = []
    for r in range(1, len(flags) + 1):
        precision_at_r = flags[:r].count(True) / r
        if flags[r - 1]:
            precisions.append(precision_at_r)
    acc = 0.0
    for p in precisions:
        acc += p
    return acc / total_relevant


def exact_ap(ranked_relevance):
    flags = [bool(x) for x in ranked_relevance]
    hits, total = 0, Fraction(0)
    for r, f in enumerate(flags, start=1):
        if f:
            hits += 1
            total += Fraction(hits, r)
    return total / hits


def brute_force_ranking(distances):
    """Indices sorted by (distance, index), via plain Python sorting."""
    return sorted(range(len(distances)), key=lambda i: (distances[i], i))


def set_overlap_accuracy(gt_rows, pred_rows, alpha):
    """Mean |V ∩ top-|V| predicted| / |V| using Python sets and sorting."""
    scores = []
    for g, p in zip(gt_rows, pred_rows):
        relevant = {j for j, v in enumerate(g) if v >= alpha}
        if not relevant:
            continue
        ranked = sorted(range(len(p)), key=lambda j: (-p[j], j))
        top = set(ranked[:len(relevant)])
        scores.append(len(relevant & top) / len(relevant))
    acc = 0.0
    for s in scores:
        acc += s
    return acc / len(scores)


def top1_accuracy(onehot_rows, pred_rows):
    correct = 0
    for g, p in zip(onehot_rows, pred_rows):
        hot = list(g).index(1.0)
        best = max(range(len(p)), key=lambda j: (p[j], -j))
        correct += hot == best
    return correct / len(onehot_rows)


def finite_difference_grad(loss_fn, arrays, step=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of every array (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + step
            up = loss_fn()
            a[idx] = orig - step
            down = loss_fn()
            a[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def naive_forward(weights, biases, x, activation):
    """Layer-by-layer forward pass written with explicit loops."""
    h = list(x)
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = [sum(w[i][j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        if k < len(weights) - 1:
            h = [max(v, 0.0) for v in z]
        elif activation == "sigmoid":
            h = [1.0 / (1.0 + np.exp(-v)) for v in z]
        else:
            m = max(z)
            e = [np.exp(v - m) for v in z]
            s = sum(e)
            h = [v / s for v in e]
    return np.array(h)


def naive_loss(weights, biases, xs, ts, loss, eps=1e-7):
    total = 0.0
    for x, t in zip(xs, ts):
        p = np.clip(naive_forward(weights, biases, x, "softmax" if loss == "softmax_ce" else "sigmoid"),
                    eps, 1 - eps)
        if loss == "softmax_ce":
            total += -sum(tj * np.log(pj) for tj, pj in zip(t, p))
        else:
            total += -sum(tj * np.log(pj) + (1 - tj) * np.log(1 - pj) for tj, pj in zip(t, p)) / len(t)
    return total / len(xs)
