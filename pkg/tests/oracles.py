"""Independent reference computations shared by the test modules."""

import numpy as np

from vadmil.objective import pair_loss
from vadmil.scorer import Mode, ScoringNetwork, forward


def relative_error(a, b, floor=1e-12):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def _loss(net, x, weights, mode, mask_seed):
    score, _ = forward(net, x, mode, np.random.default_rng(mask_seed))
    return float(np.sum(weights * score))


def fd_gradients(net, x, weights, mode, mask_seed, h=1e-5):
    """Central differences of ``sum(weights * score)`` for every parameter entry."""
    grads = {}
    for name, p in net.parameters().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = _loss(net, x, weights, mode, mask_seed)
            p[idx] = orig - h
            down = _loss(net, x, weights, mode, mask_seed)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def smooth_random_case(seed, dim=4, mode=Mode.EVAL, hidden=(6, 5), kink=1e-3):
    """Random small net and input whose pre-activations all sit at least ``kink`` from 0.

    Returns (net, x, upstream weights, mask seed).  Train-mode cases use two
    bags of three segments so that shared per-bag masks are exercised.
    """
    rng = np.random.default_rng(seed)
    while True:
        h1, h2 = hidden
        net = ScoringNetwork(
            rng.normal(0, 0.7, (h1, dim)), rng.normal(0, 0.3, h1),
            rng.normal(0, 0.7, (h2, h1)), rng.normal(0, 0.3, h2),
            rng.normal(0, 0.7, (1, h2)), rng.normal(0, 0.3, 1),
            dropout_rate=0.4 if mode == Mode.TRAIN else 0.0,
        )
        shape = (2, 3, dim) if mode == Mode.TRAIN else (3, dim)
        x = rng.normal(size=shape)
        mask_seed = int(rng.integers(2**31))
        _, trace = forward(net, x, mode, np.random.default_rng(mask_seed))
        # 10x the step keeps every perturbed evaluation on the same side of each kink
        if np.abs(trace.z1).min() > max(kink, 10 * 1e-5) and np.abs(trace.z2).min() > max(kink, 10 * 1e-5):
            weights = rng.normal(size=shape[:-1])
            return net, x, weights, mask_seed


def fd_pair_gradients(pos, neg, cfg, h=1e-5):
    pos, neg = np.array(pos, dtype=np.float64), np.array(neg, dtype=np.float64)

    def total(p, n):
        return pair_loss(p, n, cfg).total

    def diff(vec, other, first):
        g = np.zeros_like(vec)
        for i in range(vec.size):
            up, down = vec.copy(), vec.copy()
            up[i] += h
            down[i] -= h
            if first:
                g[i] = (total(up, other) - total(down, other)) / (2 * h)
            else:
                g[i] = (total(other, up) - total(other, down)) / (2 * h)
        return g

    return diff(pos, neg, True), diff(neg, pos, False)


def smooth_pair_case(rng, n_pos, n_neg, kink=1e-3):
    """Scores in [0,1] with unique maxima and an active or inactive hinge, all away from kinks."""
    while True:
        pos = rng.uniform(0, 1, n_pos)
        neg = rng.uniform(0, 1, n_neg)
        margin = float(rng.uniform(0.05, 1.5))
        gaps_ok = all(
            np.sort(v)[-1] - np.sort(v)[-2] > kink if v.size > 1 else True for v in (pos, neg)
        )
        if gaps_ok and abs(margin - pos.max() + neg.max()) > kink:
            return pos, neg, margin


def brute_force_pair_total(pos, neg, margin, lambda1, lambda2):
    """Plain-Python evaluation of the ranking objective term by term."""
    hinge = max(0.0, margin - max(pos) + max(neg))
    sparsity = lambda1 * sum(pos)
    smooth = lambda2 * sum((pos[i] - pos[i + 1]) ** 2 for i in range(len(pos) - 1))
    return hinge, sparsity, smooth
