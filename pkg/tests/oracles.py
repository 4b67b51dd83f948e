"""Independent reference implementations used only by the tests."""
import itertools
import math

import numpy as np


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting, written out by hand."""
    A = [list(map(float, row)) + [float(v)] for row, v in zip(A, b)]
    n = len(A)
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(A[r][c]))
        A[c], A[piv] = A[piv], A[c]
        for r in range(c + 1, n):
            f = A[r][c] / A[c][c]
            for k in range(c, n + 1):
                A[r][k] -= f * A[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (A[r][n] - sum(A[r][k] * x[k] for k in range(r + 1, n))) / A[r][r]
    return np.array(x)


def gauss_inverse(A):
    n = len(A)
    return np.column_stack([gauss_solve(A, np.eye(n)[:, i]) for i in range(n)])


def normal_equations(X, y):
    X = np.asarray(X)
    xtx = [[sum(X[r, i] * X[r, j] for r in range(len(X))) for j in range(X.shape[1])] for i in range(X.shape[1])]
    xty = [sum(X[r, i] * y[r] for r in range(len(X))) for i in range(X.shape[1])]
    return gauss_solve(xtx, xty)


def hc0_by_hand(X, e):
    p = X.shape[1]
    xtx = np.zeros((p, p))
    meat = np.zeros((p, p))
    for xi, ei in zip(X, e):
        xtx += np.outer(xi, xi)
        meat += ei * ei * np.outer(xi, xi)
    bread = gauss_inverse(xtx)
    return bread @ meat @ bread


def midranks(x):
    """Average 1-based ranks, ties sharing the mean of their positions."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def pearson(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    return num / den


def spearman_by_hand(x, y):
    return pearson(midranks(x), midranks(y))


def alpha_by_pairing(items):
    """Interval alpha by enumerating ordered value pairs (equal-size units, no missing values).

    Observed disagreement averages squared differences over pairs within a
    unit; expected disagreement averages them over all pairs of pooled values.
    """
    within = [(a - b) ** 2 for unit in items for a, b in itertools.permutations(unit, 2)]
    pooled = [v for unit in items for v in unit]
    across = [(a - b) ** 2 for a, b in itertools.permutations(pooled, 2)]
    return 1 - (sum(within) / len(within)) / (sum(across) / len(across))
