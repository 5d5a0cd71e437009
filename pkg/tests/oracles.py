"""Independent reference computations the test-suite checks the package against.

None of these share code paths with ``mfrec``: high-precision SVD via mpmath,
brute-force partition enumeration, and plain-Python metric loops.
"""

import math

import mpmath


def best_rank_k_error(x, k, dps=30):
    """Frobenius error of the best rank-k approximation, from 30-digit singular values."""
    with mpmath.workdps(dps):
        sv = mpmath.svd_r(mpmath.matrix(x.tolist()), compute_uv=False)
        tail = sorted((sv[i] for i in range(len(sv))), reverse=True)[k:]
        return float(mpmath.sqrt(mpmath.fsum(s * s for s in tail)))


def singular_values(x, dps=30):
    with mpmath.workdps(dps):
        sv = mpmath.svd_r(mpmath.matrix(x.tolist()), compute_uv=False)
        return sorted((float(sv[i]) for i in range(len(sv))), reverse=True)


def _sse(points):
    dim = len(points[0])
    centre = [math.fsum(p[d] for p in points) / len(points) for d in range(dim)]
    return math.fsum((p[d] - centre[d]) ** 2 for p in points for d in range(dim))


def optimal_two_partition(points):
    """Minimum inertia over every split of ``points`` into two non-empty groups."""
    points = [tuple(map(float, p)) for p in points]
    n = len(points)
    best = math.inf
    # Fix point 0 in group A to skip mirror-image partitions.
    for mask in range(0, 2 ** (n - 1)):
        a = [points[0]] + [points[i] for i in range(1, n) if mask >> (i - 1) & 1]
        b = [points[i] for i in range(1, n) if not mask >> (i - 1) & 1]
        if not b:
            continue
        best = min(best, _sse(a) + _sse(b))
    return best


def brute_metrics(predicted, actual):
    diffs = [float(p) - float(a) for p, a in zip(predicted, actual)]
    rmse = math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))
    mae = math.fsum(abs(d) for d in diffs) / len(diffs)
    return rmse, mae


def gradient_descent_rank1(x, steps=20000, lr=0.01):
    """Full-batch gradient descent on ||X - p q^T||^2 in plain Python floats."""
    n, m = len(x), len(x[0])
    p = [0.1] * n
    q = [0.1] * m
    for _ in range(steps):
        err = [[x[i][j] - p[i] * q[j] for j in range(m)] for i in range(n)]
        gp = [math.fsum(err[i][j] * q[j] for j in range(m)) for i in range(n)]
        gq = [math.fsum(err[i][j] * p[i] for i in range(n)) for j in range(m)]
        p = [p[i] + lr * gp[i] for i in range(n)]
        q = [q[j] + lr * gq[j] for j in range(m)]
    sq = math.fsum((x[i][j] - p[i] * q[j]) ** 2 for i in range(n) for j in range(m))
    return math.sqrt(sq / (n * m))

