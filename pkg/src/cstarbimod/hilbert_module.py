"""Right Hilbert C*-modules over C(X) in fibered form.

A module over C(X) is a finite-dimensional Hilbert space H_p for every point p
of X (possibly zero-dimensional), each carrying a positive-definite Gram
matrix.  Inner products are conjugate-linear in the first slot and linear in
the second; the base algebra acts on the right pointwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import DEFAULT_TOL, Algebra, AlgebraElement, AlgebraMap, Ideal, quotient_algebra


class ModuleError(ValueError):
    pass


def check_metric(G, tol: float = DEFAULT_TOL) -> np.ndarray:
    G = np.array(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ModuleError("metric must be a square matrix")
    if not G.size:
        G.setflags(write=False)
        return G
    scale = max(np.linalg.norm(G, 2), 1.0)
    if np.linalg.norm(G - G.conj().T, 2) > tol * scale:
        raise ModuleError("metric is not Hermitian")
    G = 0.5 * (G + G.conj().T)
    if np.linalg.eigvalsh(G)[0] <= tol * scale:
        raise ModuleError("metric is not positive definite")
    G.setflags(write=False)
    return G


@dataclass(frozen=True, eq=False)
class FiberedModule:
    base: Algebra
    fiber_dims: tuple[int, ...]
    metrics: tuple[np.ndarray, ...]

    def __eq__(self, other):
        if not isinstance(other, FiberedModule):
            return NotImplemented
        return (self.base == other.base and self.fiber_dims == other.fiber_dims
                and all(np.array_equal(g, h) for g, h in zip(self.metrics, other.metrics)))

    __hash__ = None

    def element(self, vecs) -> ModuleElement:
        return ModuleElement(self, vecs)

    def zero(self) -> ModuleElement:
        return ModuleElement(self, [np.zeros(d) for d in self.fiber_dims])

    def unit_vector(self, p: int, i: int = 0) -> ModuleElement:
        vecs = [np.zeros(d) for d in self.fiber_dims]
        vecs[p] = np.zeros(self.fiber_dims[p])
        vecs[p][i] = 1.0
        return ModuleElement(self, vecs)

    def basis(self) -> list[ModuleElement]:
        return [self.unit_vector(p, i)
                for p, d in enumerate(self.fiber_dims) for i in range(d)]

    def random_element(self, rng: np.random.Generator) -> ModuleElement:
        return ModuleElement(self, [rng.standard_normal(d) + 1j * rng.standard_normal(d)
                                    for d in self.fiber_dims])

    def identity(self) -> ModuleOperator:
        return ModuleOperator(self, [np.eye(d) for d in self.fiber_dims])


def make_fibered_module(B: Algebra, fiber_dims: Sequence[int], metrics=None,
                        tol: float = DEFAULT_TOL) -> FiberedModule:
    dims = tuple(int(d) for d in fiber_dims)
    if len(dims) != B.dim:
        raise ModuleError(f"need {B.dim} fiber dimensions, got {len(dims)}")
    if any(d < 0 for d in dims):
        raise ModuleError("fiber dimensions must be nonnegative")
    if metrics is None:
        metrics = [None] * len(dims)
    mets = []
    for d, G in zip(dims, metrics):
        G = np.eye(d) if G is None else G
        G = check_metric(G, tol)
        if G.shape != (d, d):
            raise ModuleError("metric shape does not match fiber dimension")
        mets.append(G)
    return FiberedModule(B, dims, tuple(mets))


class ModuleElement:
    __slots__ = ("parent", "vecs")

    def __init__(self, parent: FiberedModule, vecs):
        vecs = tuple(np.array(v, dtype=complex).reshape(-1) for v in vecs)
        if tuple(v.size for v in vecs) != parent.fiber_dims:
            raise ModuleError("element shape does not match the module's fibers")
        for v in vecs:
            v.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "vecs", vecs)

    def __setattr__(self, name, value):
        raise AttributeError("ModuleElement is immutable")

    def _same(self, other):
        if other.parent is not self.parent and other.parent != self.parent:
            raise ModuleError("elements belong to different modules")

    def __add__(self, other):
        self._same(other)
        return ModuleElement(self.parent, [u + v for u, v in zip(self.vecs, other.vecs)])

    def __sub__(self, other):
        self._same(other)
        return ModuleElement(self.parent, [u - v for u, v in zip(self.vecs, other.vecs)])

    def scale(self, c: complex) -> ModuleElement:
        return ModuleElement(self.parent, [c * v for v in self.vecs])

    def __mul__(self, b):
        """Right action by an element of the base algebra."""
        if not isinstance(b, AlgebraElement):
            return NotImplemented
        if b.parent != self.parent.base:
            raise ModuleError("algebra element is not in the base algebra")
        return ModuleElement(self.parent, [v * b.values[p] for p, v in enumerate(self.vecs)])

    def distance(self, other) -> float:
        self._same(other)
        return max((float(np.max(np.abs(u - v))) for u, v in zip(self.vecs, other.vecs)
                    if u.size), default=0.0)


def inner_product(x: ModuleElement, y: ModuleElement) -> AlgebraElement:
    x._same(y)
    M = x.parent
    vals = [np.vdot(u, G @ v) if G.size else 0.0
            for u, v, G in zip(x.vecs, y.vecs, M.metrics)]
    return AlgebraElement(M.base, vals)


def module_norm(x: ModuleElement) -> float:
    return float(np.sqrt(inner_product(x, x).norm()))


@dataclass(frozen=True)
class Fullness:
    full: bool
    witness: tuple = ()
    empty_points: tuple[int, ...] = ()

    def __bool__(self):
        return self.full


def unit_fiber_vector(G: np.ndarray) -> np.ndarray:
    """First basis direction normalized in the metric G."""
    v = np.zeros(G.shape[0], dtype=complex)
    v[0] = 1.0 / np.sqrt(G[0, 0].real)
    return v


def is_full(M: FiberedModule, tol: float = DEFAULT_TOL) -> Fullness:
    empty = tuple(p for p, d in enumerate(M.fiber_dims) if d == 0)
    if empty:
        return Fullness(False, (), empty)
    pairs = []
    for p, G in enumerate(M.metrics):
        vecs = [np.zeros(d, dtype=complex) for d in M.fiber_dims]
        vecs[p] = unit_fiber_vector(G)
        w = ModuleElement(M, vecs)
        pairs.append((w, w))
    return Fullness(True, tuple(pairs), ())


class ModuleOperator:
    """B-linear operator on a fibered module, stored blockwise per point."""

    __slots__ = ("parent", "blocks")

    def __init__(self, parent: FiberedModule, blocks):
        blocks = tuple(np.array(T, dtype=complex).reshape(d, d)
                       for T, d in zip(blocks, parent.fiber_dims))
        if len(blocks) != parent.base.dim:
            raise ModuleError("need one block per spectrum point")
        for T in blocks:
            T.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "blocks", blocks)

    def __setattr__(self, name, value):
        raise AttributeError("ModuleOperator is immutable")

    def __call__(self, x: ModuleElement) -> ModuleElement:
        if x.parent != self.parent:
            raise ModuleError("element is not in the operator's module")
        return ModuleElement(self.parent, [T @ v for T, v in zip(self.blocks, x.vecs)])

    def __matmul__(self, other: ModuleOperator) -> ModuleOperator:
        return ModuleOperator(self.parent, [S @ T for S, T in zip(self.blocks, other.blocks)])

    def __add__(self, other: ModuleOperator) -> ModuleOperator:
        return ModuleOperator(self.parent, [S + T for S, T in zip(self.blocks, other.blocks)])

    def distance(self, other: ModuleOperator) -> float:
        return max((float(np.max(np.abs(S - T))) for S, T in zip(self.blocks, other.blocks)
                    if S.size), default=0.0)


def theta(x: ModuleElement, y: ModuleElement) -> ModuleOperator:
    """The rank-one operator z -> x <y, z>."""
    x._same(y)
    M = x.parent
    return ModuleOperator(M, [np.outer(u, v.conj() @ G)
                              for u, v, G in zip(x.vecs, y.vecs, M.metrics)])


def endomorphism_adjoint(T: ModuleOperator) -> ModuleOperator:
    M = T.parent
    return ModuleOperator(M, [np.linalg.solve(G, S.conj().T @ G) if G.size else S
                              for S, G in zip(T.blocks, M.metrics)])


def finite_rank_span_dim(M: FiberedModule) -> int:
    # every blockwise operator is a sum of thetas at finite dimension
    return int(sum(d * d for d in M.fiber_dims))


def quotient_module(M: FiberedModule, I: Ideal) -> tuple[FiberedModule, AlgebraMap]:
    """M / (M I) over A / I, together with the quotient map of the base."""
    if I.parent != M.base:
        raise ModuleError("ideal belongs to a different algebra")
    Q, proj = quotient_algebra(M.base, I)
    kept = proj.point_map
    return FiberedModule(Q, tuple(M.fiber_dims[p] for p in kept),
                         tuple(M.metrics[p] for p in kept)), proj


def quotient_element(x: ModuleElement, Mq: FiberedModule, proj: AlgebraMap) -> ModuleElement:
    return ModuleElement(Mq, [x.vecs[p] for p in proj.point_map])


def twist_right(M: FiberedModule, alpha: AlgebraMap) -> FiberedModule:
    """M_alpha: the module over alpha.source with x . a := x . alpha(a)."""
    if alpha.target != M.base:
        raise ModuleError("twisting map must land in the module's base algebra")
    if not alpha.is_bijective:
        raise ModuleError("twisting map is not invertible")
    inv = alpha.inverse().point_map  # source point -> target point
    return FiberedModule(alpha.source, tuple(M.fiber_dims[inv[p]] for p in range(len(inv))),
                         tuple(M.metrics[inv[p]] for p in range(len(inv))))


def twist_element(x: ModuleElement, twisted: FiberedModule, alpha: AlgebraMap) -> ModuleElement:
    inv = alpha.inverse().point_map
    return ModuleElement(twisted, [x.vecs[inv[p]] for p in range(len(inv))])


def twist_operator(T: ModuleOperator, twisted: FiberedModule, alpha: AlgebraMap) -> ModuleOperator:
    inv = alpha.inverse().point_map
    return ModuleOperator(twisted, [T.blocks[inv[p]] for p in range(len(inv))])
