"""O(n^2) brute-force oracle for ratio-margin mining.

Deliberately loop-based: every cosine, neighbourhood and argmax is computed
pair by pair so it shares no code path with the vectorised miner.
"""

import math


def _cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def brute_force_mine(A, B, k=4):
    """Return ``(scores, pairs)``: the full margin table and the intersect pair set.

    ``A`` and ``B`` are lists of vectors (lists of floats).
    """
    A = [list(map(float, a)) for a in A]
    B = [list(map(float, b)) for b in B]
    cos = [[_cos(a, b) for b in B] for a in A]
    kk_a = min(k, len(B))
    kk_b = min(k, len(A))
    fwd = [sum(sorted(row, reverse=True)[:kk_a]) / kk_a for row in cos]
    bwd = [sum(sorted((cos[i][j] for i in range(len(A))), reverse=True)[:kk_b]) / kk_b for j in range(len(B))]
    scores = [[cos[i][j] / (fwd[i] / 2 + bwd[j] / 2) for j in range(len(B))] for i in range(len(A))]

    def argmax(values):
        best, best_i = -math.inf, -1
        for i, v in enumerate(values):
            if v > best:
                best, best_i = v, i
        return best_i

    best_b = [argmax(scores[i]) for i in range(len(A))]
    best_a = [argmax([scores[i][j] for i in range(len(A))]) for j in range(len(B))]
    pairs = {(i, best_b[i]) for i in range(len(A)) if best_a[best_b[i]] == i}
    return scores, pairs
