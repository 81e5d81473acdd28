"""Seeded random instances: imprimitivity bimodules, categories, presented algebras."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import Algebra, make_algebra
from .bimodule import (FiberedBimodule, bijection_bimodule, present,
                       random_change_of_basis, random_unitary)
from .category import CStarCategory, category_from_projections


def fisher_yates(n: int, rng: np.random.Generator) -> tuple[int, ...]:
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm)


def gen_random_imprimitivity(n: int, metric_spread: float = 10.0, seed: int = 0,
                             presented: bool = False, left: Algebra | None = None,
                             right: Algebra | None = None):
    """Random permutation bimodule over C^n with log-uniform metrics in
    [1/metric_spread, metric_spread]; with ``presented`` it is wrapped by a
    random invertible change of basis."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if metric_spread < 1:
        raise ValueError("metric_spread must be at least 1")
    rng = np.random.default_rng(seed)
    A = left or make_algebra([f"a{i}" for i in range(n)])
    B = right or make_algebra([f"b{i}" for i in range(n)])
    perm = fisher_yates(n, rng)
    logs = rng.uniform(-np.log(metric_spread), np.log(metric_spread), n)
    M = bijection_bimodule(A, B, perm, np.exp(logs))
    if presented:
        return present(M, random_change_of_basis(M.dim, rng))
    return M


def gen_fibered(A: Algebra, B: Algebra, dims, metric_spread: float = 1.0,
                rng: np.random.Generator | None = None) -> FiberedBimodule:
    """Fibered bimodule with given fiber dims and random positive metrics."""
    from .bimodule import make_fibered_bimodule
    dims = np.asarray(dims, dtype=int)
    mets = {}
    if rng is not None and metric_spread > 1:
        for a, b in zip(*np.nonzero(dims)):
            d = int(dims[a, b])
            U = random_unitary(d, rng)
            w = np.exp(rng.uniform(-np.log(metric_spread), np.log(metric_spread), d))
            mets[(int(a), int(b))] = (U * w) @ U.conj().T
    return make_fibered_bimodule(A, B, dims, mets)


@dataclass
class CategoryInstance:
    category: CStarCategory
    perms: tuple  # per object: coordinate s of the object -> point class
    unitaries: tuple  # per object: the unitary applied inside its coordinate block
    objects: int
    points: int

    def coordinate(self, A: int, s: int) -> int:
        return A * self.points + s

    def class_permutation_unitary(self, obj_perm) -> np.ndarray:
        """Unitary of the ambient space sending object A to obj_perm[A] while
        preserving point classes; conjugation by it is a *-functor."""
        k, n = self.objects, self.points
        D = k * n
        P = np.zeros((D, D))
        for A in range(k):
            B = obj_perm[A]
            inv = np.argsort(self.perms[B])
            for s in range(n):
                t = int(inv[self.perms[A][s]])
                P[self.coordinate(B, t), self.coordinate(A, s)] = 1.0
        U = _block_unitary(self.unitaries)
        return U @ P @ U.conj().T


def _block_unitary(unitaries):
    from scipy.linalg import block_diag
    return block_diag(*unitaries)


def random_category_instance(objects: int, points: int, seed: int = 0,
                             conjugate: bool = True) -> CategoryInstance:
    """Full commutative category with ``objects`` objects, each C_AA = C^points.

    Ambient D = objects * points.  Each object owns a cluster of ``points``
    coordinates and a permutation assigning them to point classes; the
    ambient algebra is spanned by the matrix units joining coordinates of the
    same class (one copy of M_objects per class), conjugated by a random
    unitary acting inside each object's cluster.
    """
    if objects < 1 or points < 1:
        raise ValueError("need at least one object and one point")
    rng = np.random.default_rng(seed)
    k, n = objects, points
    D = k * n
    perms = tuple(fisher_yates(n, rng) for _ in range(k))
    Us = tuple(random_unitary(n, rng) if conjugate else np.eye(n, dtype=complex)
               for _ in range(k))
    U = _block_unitary(Us)
    basis = []
    for A in range(k):
        for B in range(k):
            for s in range(n):
                t = perms[B].index(perms[A][s])
                E = np.zeros((D, D), dtype=complex)
                E[A * n + s, B * n + t] = 1.0
                basis.append(U @ E @ U.conj().T)
    projs = []
    for A in range(k):
        p = np.zeros((D, D))
        p[A * n:(A + 1) * n, A * n:(A + 1) * n] = np.eye(n)
        projs.append(p)
    C = category_from_projections(projs, [f"O{A}" for A in range(k)], algebra=basis)
    return CategoryInstance(C, perms, Us, k, n)


def gen_random_category(objects: int, points: int, seed: int = 0) -> CStarCategory:
    return random_category_instance(objects, points, seed).category


@dataclass
class PresentedAlgebraInstance:
    generators: list
    joint_eigenvalues: np.ndarray  # ground truth, one row per character
    multiplicity: tuple


def gen_presented_algebra(D: int, n_chars: int, n_gens: int, seed: int = 0,
                          min_gap: float = 1e-6, near_pair: bool = False) -> PresentedAlgebraInstance:
    """Commuting normal generators U diag(...) U* with ``n_chars`` distinct
    joint eigenvalue tuples separated by at least ``min_gap``.  With
    ``near_pair`` two of the tuples differ by exactly ``min_gap`` in one entry."""
    if not 1 <= n_chars <= D:
        raise ValueError("need 1 <= n_chars <= D")
    rng = np.random.default_rng(seed)
    while True:
        vals = rng.uniform(-1, 1, (n_chars, n_gens)) + 1j * rng.uniform(-1, 1, (n_chars, n_gens))
        vals = np.round(vals / min_gap) * min_gap
        if near_pair and n_chars >= 2:
            vals[1] = vals[0]
            vals[1, 0] += min_gap
        diffs = [np.max(np.abs(vals[i] - vals[j]))
                 for i in range(n_chars) for j in range(i + 1, n_chars)]
        if not diffs or min(diffs) >= 0.5 * min_gap:
            break
    counts = np.ones(n_chars, dtype=int)
    for _ in range(D - n_chars):
        counts[rng.integers(n_chars)] += 1
    labels = np.repeat(np.arange(n_chars), counts)
    U = random_unitary(D, rng)
    gens = [(U * vals[labels, i]) @ U.conj().T for i in range(n_gens)]
    return PresentedAlgebraInstance(gens, vals, tuple(int(c) for c in counts))
