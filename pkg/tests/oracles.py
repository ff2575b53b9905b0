"""Plain-Python reference implementations used as test oracles."""
import math


def brute_nearest(x_phys, designs, x_ind, y_diff, y_weight):
    """Double loop over quadrature points and stored samples; strict '<' keeps the first slot."""
    out = []
    for t in range(len(y_diff)):
        best, arg = math.inf, -1
        for i, des in enumerate(designs):
            d = math.sqrt(sum((a - b) ** 2 for a, b in zip(x_phys, des)))
            d += y_weight * y_diff[t][x_ind[i]]
            if d < best:
                best, arg = d, i
        out.append(arg)
    return out


def brute_weights(nearest, w, k):
    alpha = [0.0] * k
    for t, i in enumerate(nearest):
        alpha[i] += w[t]
    return alpha


def oracle_evict(alpha, birth, bsz=1, tol=1e-8):
    """Sort the weights, filter the near-ties of the bsz-th smallest, take the oldest."""
    threshold = sorted(alpha)[bsz - 1]
    cand = [i for i, a in enumerate(alpha) if a - threshold < tol]
    cand.sort(key=lambda i: (birth[i], i))
    return cand[:bsz]
