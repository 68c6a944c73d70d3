"""Independent reference computations used to check the library.

Everything here is written with plain Python loops, ``math.fsum`` or brute-force
enumeration, and shares no code with ``genbound`` beyond numpy arrays.
"""

import itertools
import math

import numpy as np


def linear_loss_grad(w, x, y):
    r = math.fsum(wi * xi for wi, xi in zip(w, x)) - y
    return 0.5 * r * r, [r * xi for xi in x]


def relu_loss_grad(w, signs, d0, x, y):
    m = len(signs)
    rows = [w[r * d0:(r + 1) * d0] for r in range(m)]
    pre = [math.fsum(a * b for a, b in zip(row, x)) for row in rows]
    f = math.fsum(signs[r] * max(pre[r], 0.0) for r in range(m)) / math.sqrt(m)
    res = f - y
    grad = []
    for r in range(m):
        active = 1.0 if pre[r] >= 0 else 0.0
        grad.extend(res * signs[r] * active / math.sqrt(m) * xi for xi in x)
    return 0.5 * res * res, grad, sum(1 for p in pre if p >= 0)


def expected_dispersion(G, b):
    """E ||mean(G[B]) - mean(G)||^2 over uniform size-b subsets, in closed form."""
    n = len(G)
    gbar = [math.fsum(col) / n for col in zip(*G)]
    s2 = math.fsum(math.fsum((gi - gb) ** 2 for gi, gb in zip(g, gbar)) for g in G) / n
    return (n - b) / (b * (n - 1)) * s2


def enumerate_dispersion(G, b):
    """The same expectation by averaging over every size-b subset."""
    n = len(G)
    gbar = [math.fsum(col) / n for col in zip(*G)]
    vals = []
    for B in itertools.combinations(range(n), b):
        mean = [math.fsum(G[i][j] for i in B) / b for j in range(len(gbar))]
        vals.append(math.fsum((a - c) ** 2 for a, c in zip(mean, gbar)))
    return math.fsum(vals) / len(vals)


def chunked_batch_frequencies(n, b):
    """Frequency of each batch (as a sorted tuple) over all shuffles chunked into size-b blocks."""
    counts = {}
    total = 0
    for perm in itertools.permutations(range(n)):
        for k in range(n // b):
            key = tuple(sorted(perm[k * b:(k + 1) * b]))
            counts[key] = counts.get(key, 0) + 1
            total += 1
    return {k: v / total for k, v in counts.items()}


def grid_minimum(A, B, center, points=400, span=10.0):
    """min over log-spaced sigma in [center/span, center*span] of A/sigma + B sigma^2."""
    grid = np.logspace(math.log10(center / span), math.log10(center * span), points)
    return float(np.min(A / grid + B * grid ** 2))


def enumerated_hutchinson(H):
    """Mean of v^T H v over all 2^d Rademacher vectors."""
    d = H.shape[0]
    vals = []
    for signs in itertools.product((-1.0, 1.0), repeat=d):
        v = np.array(signs)
        vals.append(float(v @ H @ v))
    return math.fsum(vals) / len(vals)


def linear_psi(X, cum_var):
    """E ||C zeta||^2 for zeta ~ N(0, cum_var I), C = X^T X / n (linear-model mean-gradient shift)."""
    C = X.T @ X / X.shape[0]
    return cum_var * float(np.trace(C @ C))


def log_term(R, d, n, lrs, vs, sigmas):
    s = math.fsum(math.log(lr * lr * v / (d * sg * sg) + 1.0) for lr, v, sg in zip(lrs, vs, sigmas))
    return math.sqrt(R * R * d / n * s)


def cube_root_total(R, n, lrs, vs, trace):
    T = len(lrs)
    return 1.5 * (R * R * T / n * math.fsum(lr * lr * v for lr, v in zip(lrs, vs)) * trace) ** (1 / 3)


def auxiliary_walk(w0, updates, noises):
    """Run W~ and W + Delta side by side with scalar loops; return the max gap."""
    w = list(w0)
    wt = list(w0)
    delta = [0.0] * len(w0)
    worst = 0.0
    for upd, nz in zip(updates, noises):
        w = [a + u for a, u in zip(w, upd)]
        wt = [a + u + e for a, u, e in zip(wt, upd, nz)]
        delta = [a + e for a, e in zip(delta, nz)]
        worst = max(worst, max(abs(a - (b + c)) for a, b, c in zip(wt, w, delta)))
    return worst


def smooth(values, window=5):
    """Trailing-free centered moving average (valid part only)."""
    v = np.asarray(values, dtype=float)
    return np.convolve(v, np.ones(window) / window, mode="valid")
