"""Commutative unital finite-dimensional C*-algebras.

Every such algebra is modelled as C(X), complex functions on a finite labeled
set X (its Gel'fand spectrum).  Algebras presented as families of commuting
normal matrices are brought into this form by :func:`joint_diagonalize`.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9


class AlgebraError(ValueError):
    pass


class NotNormalError(AlgebraError):
    pass


class NonCommutingError(AlgebraError):
    def __init__(self, i, j, residual):
        super().__init__(
            f"generators {i} and {j} do not commute: ||[X_{i}, X_{j}]|| = {residual:.3e}")
        self.pair = (i, j)
        self.residual = residual


class AmbiguousSpectrumError(AlgebraError):
    pass


class OutsideAlgebraError(AlgebraError):
    pass


@dataclass(frozen=True)
class Algebra:
    """C(X) for a finite spectrum X given by its point labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        if not labels:
            raise AlgebraError("an algebra needs at least one spectrum point")
        if len(set(labels)) != len(labels):
            raise AlgebraError(f"duplicate spectrum labels in {labels!r}")
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def element(self, values) -> AlgebraElement:
        return AlgebraElement(self, values)

    def unit(self) -> AlgebraElement:
        return AlgebraElement(self, np.ones(self.dim))

    def zero(self) -> AlgebraElement:
        return AlgebraElement(self, np.zeros(self.dim))

    def idempotent(self, k: int) -> AlgebraElement:
        v = np.zeros(self.dim)
        v[k] = 1.0
        return AlgebraElement(self, v)

    def basis(self) -> list[AlgebraElement]:
        return [self.idempotent(k) for k in range(self.dim)]

    def random_element(self, rng: np.random.Generator) -> AlgebraElement:
        return AlgebraElement(
            self, rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim))

    def to_json(self) -> dict:
        return {"type": "diagonal", "labels": list(self.labels)}


def make_algebra(labels: Sequence[str]) -> Algebra:
    return Algebra(tuple(labels))


class AlgebraElement:
    """A function on the spectrum of ``parent``; immutable."""

    __slots__ = ("parent", "values")

    def __init__(self, parent: Algebra, values):
        vals = np.array(values, dtype=complex).reshape(-1)
        if vals.shape != (parent.dim,):
            raise AlgebraError(
                f"element has {vals.size} values, algebra has {parent.dim} points")
        vals.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("AlgebraElement is immutable")

    def _check(self, other):
        if not isinstance(other, AlgebraElement):
            return NotImplemented
        if other.parent != self.parent:
            raise AlgebraError("elements belong to different algebras")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return AlgebraElement(self.parent, self.values + other.values)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return AlgebraElement(self.parent, self.values - other.values)

    def __neg__(self):
        return AlgebraElement(self.parent, -self.values)

    def __mul__(self, other):
        if isinstance(other, AlgebraElement):
            self._check(other)
            return AlgebraElement(self.parent, self.values * other.values)
        if np.isscalar(other):
            return AlgebraElement(self.parent, self.values * other)
        return NotImplemented

    __rmul__ = __mul__

    def adjoint(self) -> AlgebraElement:
        return AlgebraElement(self.parent, self.values.conj())

    def norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_positive(self, tol: float = DEFAULT_TOL) -> bool:
        v = self.values
        return bool(np.all(np.abs(v.imag) <= tol) and np.all(v.real >= -tol))

    def distance(self, other: AlgebraElement) -> float:
        self._check(other)
        return float(np.max(np.abs(self.values - other.values)))

    def __repr__(self):
        return f"AlgebraElement({list(self.parent.labels)}, {self.values.tolist()})"


def element_arith(x: AlgebraElement, y: AlgebraElement | None, op: str):
    """Pointwise arithmetic dispatcher: add, mul, adjoint, norm, is_positive."""
    if y is not None and x.parent != y.parent:
        raise AlgebraError("elements belong to different algebras")
    if op == "add":
        return x + y
    if op == "mul":
        return x * y
    if op == "adjoint":
        return x.adjoint()
    if op == "norm":
        return x.norm()
    if op == "is_positive":
        return x.is_positive()
    raise AlgebraError(f"unknown operation {op!r}")


@dataclass(frozen=True)
class Ideal:
    """Elements vanishing on the spectrum points ``kept``.

    ``kept`` and ``vanishing`` partition the spectrum; ideal members may be
    nonzero only on ``vanishing``.  The quotient by the ideal is C(kept).
    """

    parent: Algebra
    kept: frozenset[int]

    @property
    def vanishing(self) -> frozenset[int]:
        return frozenset(range(self.parent.dim)) - self.kept

    @property
    def is_proper(self) -> bool:
        return bool(self.kept)

    def contains(self, a: AlgebraElement, tol: float = DEFAULT_TOL) -> bool:
        if a.parent != self.parent:
            raise AlgebraError("element belongs to a different algebra")
        idx = sorted(self.kept)
        return bool(np.all(np.abs(a.values[idx]) <= tol))


def ideal_from_points(A: Algebra, kept: Iterable[int]) -> Ideal:
    kept = frozenset(int(k) for k in kept)
    bad = [k for k in kept if not 0 <= k < A.dim]
    if bad:
        raise AlgebraError(f"spectrum indices out of range: {sorted(bad)}")
    return Ideal(A, kept)


@dataclass(frozen=True)
class AlgebraMap:
    """Unital *-homomorphism source -> target in pullback form.

    ``phi(a)(q) = a(point_map[q])`` for every target point q.
    """

    source: Algebra
    target: Algebra
    point_map: tuple[int, ...]

    def __post_init__(self):
        pm = tuple(int(p) for p in self.point_map)
        if len(pm) != self.target.dim:
            raise AlgebraError("point_map must have one entry per target point")
        if any(not 0 <= p < self.source.dim for p in pm):
            raise AlgebraError("point_map refers to a nonexistent source point")
        object.__setattr__(self, "point_map", pm)

    def __call__(self, a: AlgebraElement) -> AlgebraElement:
        if a.parent != self.source:
            raise AlgebraError("element is not in the source algebra")
        return AlgebraElement(self.target, a.values[list(self.point_map)])

    @property
    def is_bijective(self) -> bool:
        return (self.source.dim == self.target.dim
                and sorted(self.point_map) == list(range(self.source.dim)))

    def inverse(self) -> AlgebraMap:
        if not self.is_bijective:
            raise AlgebraError("map is not invertible")
        inv = [0] * self.source.dim
        for q, p in enumerate(self.point_map):
            inv[p] = q
        return AlgebraMap(self.target, self.source, tuple(inv))

    def compose(self, first: AlgebraMap) -> AlgebraMap:
        """``self ∘ first``: apply ``first`` then ``self``."""
        if first.target != self.source:
            raise AlgebraError("maps are not composable")
        pm = tuple(first.point_map[p] for p in self.point_map)
        return AlgebraMap(first.source, self.target, pm)

    def spectral_map(self) -> tuple[int, ...]:
        """The induced map on spectra, source point -> target point.

        Only defined for isomorphisms: it is the inverse of ``point_map``.
        """
        return self.inverse().point_map

    @classmethod
    def identity(cls, A: Algebra) -> AlgebraMap:
        return cls(A, A, tuple(range(A.dim)))


def check_isomorphism(phi: AlgebraMap, tol: float = DEFAULT_TOL) -> bool:
    # unital, multiplicative and *-preserving hold by representation
    return phi.is_bijective


def quotient_algebra(A: Algebra, I: Ideal) -> tuple[Algebra, AlgebraMap]:
    if I.parent != A:
        raise AlgebraError("ideal belongs to a different algebra")
    if not I.is_proper:
        raise AlgebraError("improper ideal: the quotient would be the zero algebra")
    kept = sorted(I.kept)
    Q = Algebra(tuple(A.labels[k] for k in kept))
    return Q, AlgebraMap(A, Q, tuple(kept))


@dataclass(frozen=True)
class Character:
    parent: Algebra
    point: int
    eigenvalues: tuple[complex, ...] | None = None

    def __call__(self, a: AlgebraElement) -> complex:
        if a.parent != self.parent:
            raise AlgebraError("element is not in this character's algebra")
        return complex(a.values[self.point])


def characters(A) -> list[Character]:
    if isinstance(A, GelfandData):
        alg = A.algebra
        return [Character(alg, k, tuple(complex(v) for v in A.eigenvalues[k]))
                for k in range(alg.dim)]
    return [Character(A, k) for k in range(A.dim)]


# --------------------------------------------------------------------------
# presented algebras


@dataclass(frozen=True, eq=False)
class GelfandData:
    """Joint spectral decomposition of commuting normal generators.

    ``basis[:, blocks[k]]`` spans the joint eigenspace of character k, on which
    generator i acts as the scalar ``eigenvalues[k, i]``.
    """

    generators: tuple[np.ndarray, ...]
    eigenvalues: np.ndarray
    basis: np.ndarray
    multiplicity: tuple[int, ...]
    tol: float
    scale: float
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(
                self, "labels", tuple(f"chi{k}" for k in range(len(self.multiplicity))))

    @property
    def atol(self) -> float:
        return self.tol * self.scale

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @functools.cached_property
    def algebra(self) -> Algebra:
        return Algebra(self.labels)

    @property
    def blocks(self) -> list[slice]:
        out, start = [], 0
        for m in self.multiplicity:
            out.append(slice(start, start + m))
            start += m
        return out

    def eigenspace(self, k: int) -> np.ndarray:
        return self.basis[:, self.blocks[k]]

    def projection(self, k: int) -> np.ndarray:
        V = self.eigenspace(k)
        return V @ V.conj().T

    def embed(self, a: AlgebraElement) -> np.ndarray:
        """Inverse Gel'fand transform: the matrix acting as a(k) on block k."""
        if a.parent != self.algebra:
            raise AlgebraError("element is not in this algebra")
        diag = np.repeat(a.values, self.multiplicity)
        return (self.basis * diag) @ self.basis.conj().T

    def reconstruction_residual(self) -> float:
        """Largest relative Frobenius error rebuilding a generator."""
        worst = 0.0
        for i, g in enumerate(self.generators):
            diag = np.repeat(self.eigenvalues[:, i], self.multiplicity)
            rebuilt = (self.basis * diag) @ self.basis.conj().T
            ref = max(np.linalg.norm(g), 1e-300)
            worst = max(worst, np.linalg.norm(rebuilt - g) / ref)
        return float(worst)

    def to_json(self) -> dict:
        from .jsonio import matrix_to_json
        return {"type": "presented", "dim": self.dim,
                "generators": [matrix_to_json(g) for g in self.generators],
                "tol": self.tol}


def _lex_compare(atol):
    def cmp(u, v):
        for x, y in zip(u, v):
            for a, b in ((x.real, y.real), (x.imag, y.imag)):
                if abs(a - b) > atol:
                    return -1 if a < b else 1
        return 0
    return cmp


def _split_joint(herm, D, atol, rng, attempts=4):
    """Recursive splitting of C^D into joint eigenspaces of ``herm``."""
    done = []
    stack = [np.eye(D, dtype=complex)]
    while stack:
        V = stack.pop()
        comps = []
        for H in herm:
            c = V.conj().T @ H @ V
            c = 0.5 * (c + c.conj().T)
            ev = np.linalg.eigvalsh(c)
            if ev[-1] - ev[0] > atol:
                comps.append(c)
        if not comps:
            done.append(V)
            continue
        for _ in range(attempts):
            coef = rng.standard_normal(len(comps))
            coef /= np.max(np.abs(coef))
            combo = sum(c * w for c, w in zip(comps, coef))
            w, U = np.linalg.eigh(combo)
            cuts = np.flatnonzero(np.diff(w) > atol) + 1
            if cuts.size:
                break
        else:
            raise AmbiguousSpectrumError(
                "joint eigenvalues spread beyond tolerance without a separating gap; "
                "spectrum is ill-conditioned at this tolerance")
        for idx in np.split(np.arange(V.shape[1]), cuts):
            stack.append(V @ U[:, idx])
    return done


def joint_diagonalize(generators, tol: float = DEFAULT_TOL, seed: int = 0) -> GelfandData:
    """Gel'fand transform of the algebra generated by commuting normal matrices.

    Each generator is split into Hermitian and anti-Hermitian parts; the space
    is split along eigenspaces of a seeded random real combination, and the
    split is refined recursively inside eigenspaces where some part is still
    not scalar.  Characters come out ordered lexicographically by their
    eigenvalue tuples (real part, then imaginary part, generator by generator).
    """
    mats = [np.array(g, dtype=complex) for g in generators]
    if not mats:
        raise AlgebraError("need at least one generator")
    D = mats[0].shape[0]
    for g in mats:
        if g.shape != (D, D):
            raise AlgebraError("generators must be square matrices of equal size")
    scale = max(np.linalg.norm(g, 2) for g in mats)
    if scale == 0.0:
        scale = 1.0
    atol = tol * scale
    for i, g in enumerate(mats):
        r = np.linalg.norm(g @ g.conj().T - g.conj().T @ g, 2)
        if r > atol * scale:
            raise NotNormalError(f"generator {i} is not normal: ||[X, X*]|| = {r:.3e}")
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            r = np.linalg.norm(mats[i] @ mats[j] - mats[j] @ mats[i], 2)
            if r > atol * scale:
                raise NonCommutingError(i, j, r)

    herm = []
    for g in mats:
        herm.append(0.5 * (g + g.conj().T))
        herm.append(-0.5j * (g - g.conj().T))
    rng = np.random.default_rng(seed)
    spaces = _split_joint(herm, D, atol, rng)

    tuples = np.array([[np.trace(V.conj().T @ g @ V) / V.shape[1] for g in mats]
                       for V in spaces])

    # merge eigenspaces whose joint eigenvalues agree within tolerance
    parent = list(range(len(spaces)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(spaces)):
        for j in range(i + 1, len(spaces)):
            if np.max(np.abs(tuples[i] - tuples[j])) <= atol:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(len(spaces)):
        groups.setdefault(find(i), []).append(i)
    merged = []
    for members in groups.values():
        spread = max((np.max(np.abs(tuples[i] - tuples[j]))
                      for i in members for j in members), default=0.0)
        if spread > atol:
            raise AmbiguousSpectrumError(
                f"joint eigenvalue tuples chain within tolerance but spread {spread:.3e}")
        V = np.hstack([spaces[i] for i in members])
        vals = np.array([np.trace(V.conj().T @ g @ V) / V.shape[1] for g in mats])
        merged.append((vals, V))

    cmp = _lex_compare(atol)
    merged.sort(key=functools.cmp_to_key(lambda s, t: cmp(s[0], t[0])))
    basis = np.hstack([V for _, V in merged])
    eig = np.array([vals for vals, _ in merged])
    mult = tuple(V.shape[1] for _, V in merged)
    for g in mats:
        g.setflags(write=False)
    return GelfandData(tuple(mats), eig, basis, mult, tol, scale)


def gelfand_transform(G: GelfandData, element) -> AlgebraElement:
    """Values of a matrix in the algebra generated by ``G`` on each character."""
    X = np.asarray(element, dtype=complex)
    if X.shape != (G.dim, G.dim):
        raise AlgebraError("element has the wrong shape")
    Y = G.basis.conj().T @ X @ G.basis
    values = np.empty(len(G.multiplicity), dtype=complex)
    model = np.zeros_like(Y)
    for k, s in enumerate(G.blocks):
        values[k] = np.trace(Y[s, s]) / (s.stop - s.start)
        model[s, s] = values[k] * np.eye(s.stop - s.start)
    off = np.linalg.norm(Y - model, 2)
    limit = G.tol * max(G.scale, np.linalg.norm(X, 2))
    if off > limit:
        raise OutsideAlgebraError(
            f"matrix is not in the generated algebra (off-block mass {off:.3e})")
    return AlgebraElement(G.algebra, values)
