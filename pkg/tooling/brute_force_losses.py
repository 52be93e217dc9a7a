"""Hand-arithmetic oracle for the two loss examples, using only ``math``.

Run directly to print the reference values:

    python tooling/brute_force_losses.py
"""

import math


def kl(p, q):
    """KL(p || q) over p's support."""
    return sum(pi * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q) if pi > 0)


def bag_distribution(tokens, vocab):
    return [tokens.count(w) / len(tokens) for w in vocab]


def info_nce(cos, temperature):
    """Symmetric in-batch InfoNCE on a square cosine matrix (list of rows)."""
    n = len(cos)
    total = 0.0
    for j in range(n):
        row = [math.exp(cos[j][k] / temperature) for k in range(n)]
        col = [math.exp(cos[k][j] / temperature) for k in range(n)]
        pos = math.exp(cos[j][j] / temperature)
        total -= math.log(pos / sum(row)) + math.log(pos / sum(col))
    return total


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))


def kl_example():
    """Target sentence [a, b] against q = (0.5, 0.25, 0.25) over {a, b, c}."""
    p = bag_distribution(["a", "b"], ["a", "b", "c"])
    return kl(p, [0.5, 0.25, 0.25])


def contrastive_example():
    """B = 2, cosine matrix = identity (c = 1 on the diagonal), T = 1."""
    return info_nce([[1.0, 0.0], [0.0, 1.0]], 1.0)


if __name__ == "__main__":
    print(f"KL direction loss      {kl_example():.6f}")
    print(f"contrastive 2x2 loss   {contrastive_example():.6f}")
    print(f"closed form 4 log(1+e^-1) = {4 * math.log(1 + math.exp(-1)):.6f}")
