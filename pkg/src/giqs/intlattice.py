"""Exact integer linear algebra: Hermite normal form, integer kernels, saturation.

Matrices are lists of rows of Python ints so nothing overflows.
"""

from __future__ import annotations

from math import gcd
from typing import Iterable, Sequence


def _rows(M: Iterable[Sequence[int]]) -> list[list[int]]:
    return [[int(x) for x in row] for row in M]


def hermite_normal_form(M, with_transform: bool = False):
    """Row-style Hermite normal form.

    Returns ``H`` (and ``U`` when ``with_transform``) with ``U @ M == H``, ``U``
    unimodular, ``H`` in reduced row echelon form over Z: pivots positive,
    entries above each pivot reduced into ``[0, pivot)``, zero rows last.
    """
    A = _rows(M)
    m = len(A)
    n = len(A[0]) if m else 0
    U = [[int(i == j) for j in range(m)] for i in range(m)]
    row = 0
    pivots = []
    for col in range(n):
        if row >= m:
            break
        # Euclid on the column below `row`
        while True:
            nz = [i for i in range(row, m) if A[i][col] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(A[i][col]))
            if piv != row:
                A[row], A[piv] = A[piv], A[row]
                U[row], U[piv] = U[piv], U[row]
            done = True
            for i in range(row + 1, m):
                if A[i][col]:
                    q = A[i][col] // A[row][col]
                    A[i] = [a - q * b for a, b in zip(A[i], A[row])]
                    U[i] = [a - q * b for a, b in zip(U[i], U[row])]
                    if A[i][col]:
                        done = False
            if done:
                break
        if all(A[i][col] == 0 for i in range(row, m)):
            continue
        if A[row][col] < 0:
            A[row] = [-a for a in A[row]]
            U[row] = [-a for a in U[row]]
        p = A[row][col]
        for i in range(row):
            q = A[i][col] // p
            if q:
                A[i] = [a - q * b for a, b in zip(A[i], A[row])]
                U[i] = [a - q * b for a, b in zip(U[i], U[row])]
        pivots.append(col)
        row += 1
    return (A, U) if with_transform else A


def rank(M) -> int:
    return sum(1 for r in hermite_normal_form(M) if any(r))


def integer_kernel(M, ncols: int | None = None) -> list[list[int]]:
    """Basis (rows) of ``{x in Z^n : M x = 0}``."""
    A = _rows(M)
    n = ncols if ncols is not None else (len(A[0]) if A else 0)
    if not A:
        return [[int(i == j) for j in range(n)] for i in range(n)]
    At = [[A[i][j] for i in range(len(A))] for j in range(n)]  # n x m
    H, U = hermite_normal_form(At, with_transform=True)
    return [U[i] for i in range(n) if not any(H[i])]


def primitive(v: Sequence[int]) -> list[int]:
    g = 0
    for x in v:
        g = gcd(g, int(x))
    return [int(x) // g for x in v] if g else [int(x) for x in v]


def saturate(vectors, d: int) -> list[list[int]]:
    """Canonical basis of ``span_R(vectors) ∩ Z^d`` (HNF rows; empty for the zero module)."""
    vecs = [list(map(int, v)) for v in vectors if any(v)]
    if not vecs:
        return []
    H = [r for r in hermite_normal_form(vecs) if any(r)]
    if len(H) == d:
        return [[int(i == j) for j in range(d)] for i in range(d)]
    # the integer kernel of the orthogonal complement is saturated by construction
    perp = integer_kernel(H, d)
    sat = integer_kernel(perp, d)
    return [r for r in hermite_normal_form(sat) if any(r)]


def in_span(basis, v) -> bool:
    """Whether integer vector v lies in the row lattice spanned by ``basis`` over R."""
    if not basis:
        return not any(v)
    return rank(list(basis) + [list(v)]) == rank(basis)
