"""Independent dense references used as test oracles.

Deliberately written with plain Python loops and math.exp (no shared code
with the package) so they stay independent of the implementations they
check.
"""

import math

import numpy as np


def dense_masked_reference(q, k, v, allowed):
    """Softmax(scores + mask) @ V with an explicit -inf mask, plain loops."""
    n, d = q.shape
    d_v = v.shape[1]
    out = np.zeros((n, d_v))
    for i in range(n):
        scores = []
        for j in range(n):
            if allowed[i][j]:
                scores.append(sum(float(q[i, t]) * float(k[j, t]) for t in range(d)))
            else:
                scores.append(float("-inf"))
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        z = sum(weights)
        for col in range(d_v):
            out[i, col] = sum(weights[j] * float(v[j, col]) for j in range(n)) / z
    return out


def dense_causal_reference(q, k, v, scale=False):
    """Causal special case: key j allowed for query i iff j <= i."""
    if scale:
        q = np.asarray(q) * (1.0 / math.sqrt(q.shape[1]))
    n = q.shape[0]
    allowed = [[j <= i for j in range(n)] for i in range(n)]
    return dense_masked_reference(q, k, v, allowed)
