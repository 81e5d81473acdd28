"""Hilbert C*-bimodules between two algebras C(X) and C(Y).

Fibered form
    one Hilbert space H_{a,b} per pair (a in X, b in Y), with a Gram matrix.
    Elements are flat complex vectors, the concatenation of the fiber vectors
    over the nonempty cells in row-major order.

Presented form
    an ambient space C^D with commuting idempotent families for the two
    actions and one Gram form per spectrum point on each side.

Inner product conventions: the right inner product <x, y>_B is linear in y,
the left inner product A<x, y> is linear in x, so that
A<x, y> z = x <y, z>_B is the imprimitivity identity.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import linalg as sla

from . import _kernels
from .algebra import (DEFAULT_TOL, Algebra, AlgebraElement, AlgebraError, AlgebraMap,
                      Ideal, ideal_from_points, quotient_algebra)
from .hilbert_module import FiberedModule, check_metric, unit_fiber_vector


class BimoduleError(ValueError):
    pass


class NotImprimitivityError(BimoduleError):
    pass


class NotFullError(BimoduleError):
    pass


class DecompositionError(BimoduleError):
    pass


class SelfTestError(AssertionError):
    """Two independent characterizations that must agree did not."""


def _values(a, alg: Algebra) -> np.ndarray:
    if isinstance(a, AlgebraElement):
        if a.parent != alg:
            raise AlgebraError("algebra element acts on the wrong side")
        return a.values
    v = np.asarray(a, dtype=complex)
    if v.shape != (alg.dim,):
        raise AlgebraError("wrong number of values for this algebra")
    return v


def _rng(seed, index):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, index])


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


class _BimoduleOps:
    """Shared sampling helpers; subclasses define the actions and inner products."""

    def random_element(self, rng: np.random.Generator) -> np.ndarray:
        x = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
        nrm = np.linalg.norm(x)
        return x / nrm if nrm else x

    def left_norm(self, x) -> float:
        return float(np.sqrt(np.max(np.abs(self.left_inner(x, x).values))))

    def right_norm(self, x) -> float:
        return float(np.sqrt(np.max(np.abs(self.right_inner(x, x).values))))


def _random_algebra_element(alg: Algebra, rng) -> AlgebraElement:
    v = rng.standard_normal(alg.dim) + 1j * rng.standard_normal(alg.dim)
    return AlgebraElement(alg, v / np.max(np.abs(v)))


# --------------------------------------------------------------------------
# fibered form


@dataclass(frozen=True, eq=False)
class FiberedBimodule(_BimoduleOps):
    left: Algebra
    right: Algebra
    dims: np.ndarray
    metrics: Mapping[tuple[int, int], np.ndarray]

    def __post_init__(self):
        dims = np.array(self.dims, dtype=int)
        dims.setflags(write=False)
        object.__setattr__(self, "dims", dims)

    def __eq__(self, other):
        if not isinstance(other, FiberedBimodule):
            return NotImplemented
        return (self.left == other.left and self.right == other.right
                and np.array_equal(self.dims, other.dims)
                and all(np.array_equal(self.metrics[c], other.metrics[c]) for c in self.cells))

    __hash__ = None

    @functools.cached_property
    def cells(self) -> tuple[tuple[int, int], ...]:
        m, n = self.dims.shape
        return tuple((a, b) for a in range(m) for b in range(n) if self.dims[a, b] > 0)

    @functools.cached_property
    def offsets(self) -> dict:
        out, start = {}, 0
        for c in self.cells:
            d = int(self.dims[c])
            out[c] = slice(start, start + d)
            start += d
        return out

    @property
    def dim(self) -> int:
        return int(self.dims.sum())

    @functools.cached_property
    def rows(self) -> np.ndarray:
        return np.array([a for (a, b) in self.cells for _ in range(self.dims[a, b])], dtype=np.int64)

    @functools.cached_property
    def cols(self) -> np.ndarray:
        return np.array([b for (a, b) in self.cells for _ in range(self.dims[a, b])], dtype=np.int64)

    @functools.cached_property
    def gram(self) -> np.ndarray:
        G = np.zeros((self.dim, self.dim), dtype=complex)
        for c in self.cells:
            s = self.offsets[c]
            G[s, s] = self.metrics[c]
        G.setflags(write=False)
        return G

    def fiber(self, x, cell) -> np.ndarray:
        return np.asarray(x)[self.offsets[cell]]

    def element(self, parts: Mapping) -> np.ndarray:
        """Assemble a flat element from {cell: fiber vector}."""
        x = np.zeros(self.dim, dtype=complex)
        for c, v in parts.items():
            x[self.offsets[tuple(c)]] = v
        return x

    def basis_vector(self, i: int) -> np.ndarray:
        e = np.zeros(self.dim, dtype=complex)
        e[i] = 1.0
        return e

    def left_act(self, a, x) -> np.ndarray:
        return _values(a, self.left)[self.rows] * x

    def right_act(self, x, b) -> np.ndarray:
        return x * _values(b, self.right)[self.cols]

    def right_inner(self, x, y) -> AlgebraElement:
        prod = np.conj(x) * (self.gram @ y)
        return AlgebraElement(self.right, np.bincount(self.cols, prod.real, self.right.dim)
                              + 1j * np.bincount(self.cols, prod.imag, self.right.dim))

    def left_inner(self, x, y) -> AlgebraElement:
        prod = np.conj(y) * (self.gram @ x)
        return AlgebraElement(self.left, np.bincount(self.rows, prod.real, self.left.dim)
                              + 1j * np.bincount(self.rows, prod.imag, self.left.dim))

    def left_operator(self, a) -> np.ndarray:
        return np.diag(_values(a, self.left)[self.rows])

    def right_operator(self, b) -> np.ndarray:
        return np.diag(_values(b, self.right)[self.cols])

    def right_module(self) -> FiberedModule:
        """The underlying right Hilbert module over ``right``."""
        dims, mets = [], []
        for q in range(self.right.dim):
            blocks = [self.metrics[(a, q)] for a in range(self.left.dim) if self.dims[a, q]]
            mets.append(sla.block_diag(*blocks) if blocks else np.zeros((0, 0)))
            dims.append(int(self.dims[:, q].sum()))
        return FiberedModule(self.right, tuple(dims), tuple(mets))

    def left_module(self) -> FiberedModule:
        dims, mets = [], []
        for p in range(self.left.dim):
            blocks = [self.metrics[(p, b)] for b in range(self.right.dim) if self.dims[p, b]]
            mets.append(sla.block_diag(*blocks) if blocks else np.zeros((0, 0)))
            dims.append(int(self.dims[p].sum()))
        return FiberedModule(self.left, tuple(dims), tuple(mets))

    def support_bijection(self) -> tuple[int, ...] | None:
        """Left point -> right point if the support is the graph of a bijection
        with one-dimensional fibers, else None."""
        m, n = self.dims.shape
        if m != n or np.any(self.dims > 1):
            return None
        if np.any(self.dims.sum(axis=0) != 1) or np.any(self.dims.sum(axis=1) != 1):
            return None
        return tuple(int(np.flatnonzero(self.dims[a])[0]) for a in range(m))

    def to_json(self) -> dict:
        from .jsonio import bimodule_to_json
        return bimodule_to_json(self)


@functools.lru_cache(maxsize=None)
def _identity_metric(d: int) -> np.ndarray:
    G = np.eye(d, dtype=complex)
    G.setflags(write=False)
    return G


def make_fibered_bimodule(A: Algebra, B: Algebra, fibers, metrics=None,
                          tol: float = DEFAULT_TOL) -> FiberedBimodule:
    """``fibers`` is an m x n array of dimensions or a {(a, b): dim} mapping."""
    m, n = A.dim, B.dim
    if isinstance(fibers, Mapping):
        dims = np.zeros((m, n), dtype=int)
        for (a, b), d in fibers.items():
            if not (0 <= a < m and 0 <= b < n):
                raise BimoduleError(f"fiber index ({a}, {b}) out of range")
            dims[a, b] = d
    else:
        dims = np.array(fibers, dtype=int)
        if dims.shape != (m, n):
            raise BimoduleError(f"fiber array must have shape ({m}, {n})")
    if np.any(dims < 0):
        raise BimoduleError("fiber dimensions must be nonnegative")
    metrics = dict(metrics or {})
    for c in metrics:
        if not (0 <= c[0] < m and 0 <= c[1] < n) or dims[c] == 0:
            raise BimoduleError(f"metric given for empty or invalid fiber {c}")
    mets = {}
    for a in range(m):
        for b in range(n):
            d = int(dims[a, b])
            if d:
                G = metrics.get((a, b))
                G = _identity_metric(d) if G is None else check_metric(G, tol)
                if G.shape != (d, d):
                    raise BimoduleError(f"metric for fiber ({a}, {b}) has the wrong shape")
                mets[(a, b)] = G
    return FiberedBimodule(A, B, dims, mets)


def identity_bimodule(A: Algebra, metrics=None) -> FiberedBimodule:
    """The algebra A as a bimodule over itself."""
    return make_fibered_bimodule(A, A, np.eye(A.dim, dtype=int), metrics)


def bijection_bimodule(A: Algebra, B: Algebra, bijection, metrics=None) -> FiberedBimodule:
    """One-dimensional fibers on the graph of ``bijection`` (left point -> right point);
    ``metrics`` lists the positive metric scalar per left point."""
    fibers = {(a, int(b)): 1 for a, b in enumerate(bijection)}
    mets = None
    if metrics is not None:
        mets = {(a, int(b)): np.array([[g]]) for (a, b), g in zip(enumerate(bijection), metrics)}
    return make_fibered_bimodule(A, B, fibers, mets)


# --------------------------------------------------------------------------
# presented form


@dataclass(frozen=True, eq=False)
class PresentedBimodule(_BimoduleOps):
    left: Algebra
    right: Algebra
    left_idem: np.ndarray
    right_idem: np.ndarray
    right_gram: np.ndarray
    left_gram: np.ndarray

    def __post_init__(self):
        for name in ("left_idem", "right_idem", "right_gram", "left_gram"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        D = self.left_idem.shape[-1]
        shapes = {"left_idem": (self.left.dim, D, D), "left_gram": (self.left.dim, D, D),
                  "right_idem": (self.right.dim, D, D), "right_gram": (self.right.dim, D, D)}
        for name, shp in shapes.items():
            if getattr(self, name).shape != shp:
                raise BimoduleError(f"{name} must have shape {shp}")

    @property
    def dim(self) -> int:
        return self.left_idem.shape[-1]

    def left_operator(self, a) -> np.ndarray:
        return np.tensordot(_values(a, self.left), self.left_idem, axes=1)

    def right_operator(self, b) -> np.ndarray:
        return np.tensordot(_values(b, self.right), self.right_idem, axes=1)

    def left_act(self, a, x):
        return self.left_operator(a) @ x

    def right_act(self, x, b):
        return self.right_operator(b) @ x

    def right_inner(self, x, y) -> AlgebraElement:
        return AlgebraElement(self.right, np.einsum("i,qij,j->q", np.conj(x), self.right_gram, y))

    def left_inner(self, x, y) -> AlgebraElement:
        return AlgebraElement(self.left, np.einsum("i,pij,j->p", np.conj(y), self.left_gram, x))

    def to_json(self) -> dict:
        from .jsonio import presented_to_json
        return presented_to_json(self)


def present(M: FiberedBimodule, S=None) -> PresentedBimodule:
    """Presented form of M in the ambient basis x' = S x (S invertible)."""
    N = M.dim
    S = np.eye(N) if S is None else np.asarray(S, dtype=complex)
    Si = np.linalg.inv(S)
    P = np.array([S @ np.diag((M.rows == a).astype(float)) @ Si for a in range(M.left.dim)])
    Q = np.array([S @ np.diag((M.cols == b).astype(float)) @ Si for b in range(M.right.dim)])
    G = M.gram
    R = np.array([Si.conj().T @ (G * np.outer(M.cols == b, M.cols == b)) @ Si
                  for b in range(M.right.dim)])
    L = np.array([Si.conj().T @ (G * np.outer(M.rows == a, M.rows == a)) @ Si
                  for a in range(M.left.dim)])
    return PresentedBimodule(M.left, M.right, P.reshape(-1, N, N), Q.reshape(-1, N, N),
                             R.reshape(-1, N, N), L.reshape(-1, N, N))


def random_change_of_basis(N: int, rng: np.random.Generator, condition: float = 4.0) -> np.ndarray:
    """Seeded invertible matrix with singular values in [1, condition]."""
    U, V = random_unitary(N, rng), random_unitary(N, rng)
    s = np.exp(rng.uniform(0.0, np.log(condition), N))
    return (U * s) @ V


# --------------------------------------------------------------------------
# axioms


@dataclass
class Report:
    residuals: dict = field(default_factory=dict)
    tol: float = DEFAULT_TOL
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())

    def failures(self) -> list[str]:
        return [k for k, r in self.residuals.items() if r > self.tol]


def validate_bimodule_axioms(M, tol: float = DEFAULT_TOL, samples: int = 50,
                             seed: int = 0) -> Report:
    rep = Report(tol=tol)
    r = rep.residuals
    if isinstance(M, PresentedBimodule):
        D = M.dim
        eye = np.eye(D)
        P, Q, L, R = M.left_idem, M.right_idem, M.left_gram, M.right_gram
        nrm = functools.partial(np.linalg.norm, ord=2)
        r["left_idempotent"] = max(nrm(p @ p - p) for p in P)
        r["right_idempotent"] = max(nrm(q @ q - q) for q in Q)
        r["left_partition"] = nrm(P.sum(axis=0) - eye)
        r["right_partition"] = nrm(Q.sum(axis=0) - eye)
        r["actions_commute"] = max(nrm(p @ q - q @ p) for p in P for q in Q)
        r["right_gram_hermitian"] = max(nrm(g - g.conj().T) for g in R)
        r["left_gram_hermitian"] = max(nrm(g - g.conj().T) for g in L)
        r["right_gram_support"] = max(nrm(g - q.conj().T @ g @ q) for g, q in zip(R, Q))
        r["left_gram_support"] = max(nrm(g - p.conj().T @ g @ p) for g, p in zip(L, P))
    A, B = M.left, M.right
    checks = ["associativity", "right_compatibility", "left_compatibility",
              "right_linearity", "left_linearity", "right_symmetry", "left_symmetry",
              "positivity"]
    worst = dict.fromkeys(checks, 0.0)
    for idx, name in enumerate(checks):
        rng = _rng(seed, idx)
        for _ in range(samples):
            x, y = M.random_element(rng), M.random_element(rng)
            a, b = _random_algebra_element(A, rng), _random_algebra_element(B, rng)
            if name == "associativity":
                e = np.max(np.abs(M.right_act(M.left_act(a, x), b)
                                  - M.left_act(a, M.right_act(x, b))), initial=0.0)
            elif name == "right_compatibility":
                e = M.right_inner(x, M.left_act(a, y)).distance(
                    M.right_inner(M.left_act(a.adjoint(), x), y))
            elif name == "left_compatibility":
                e = M.left_inner(M.right_act(x, b), y).distance(
                    M.left_inner(x, M.right_act(y, b.adjoint())))
            elif name == "right_linearity":
                e = M.right_inner(x, M.right_act(y, b)).distance(M.right_inner(x, y) * b)
            elif name == "left_linearity":
                e = M.left_inner(M.left_act(a, x), y).distance(a * M.left_inner(x, y))
            elif name == "right_symmetry":
                e = M.right_inner(x, y).adjoint().distance(M.right_inner(y, x))
            elif name == "left_symmetry":
                e = M.left_inner(x, y).adjoint().distance(M.left_inner(y, x))
            else:
                vals = np.concatenate([M.right_inner(x, x).values, M.left_inner(x, x).values])
                e = max(np.max(np.abs(vals.imag)), max(0.0, -np.min(vals.real)))
            worst[name] = max(worst[name], float(e))
    r.update(worst)
    return rep


# --------------------------------------------------------------------------
# imprimitivity


@dataclass
class ImprimitivityCertificate:
    imprimitivity: bool
    graph_test: bool
    identity_test: bool
    left_full: bool
    right_full: bool
    identity_residual: float
    witness: tuple[int, int, int] | None
    bijection: tuple[int, ...] | None
    reason: str = ""
    fibered: FiberedBimodule | None = None

    def __bool__(self):
        return self.imprimitivity


def _span_rank(vectors: np.ndarray, tol: float) -> int:
    if vectors.size == 0:
        return 0
    s = np.linalg.svd(vectors, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def _column_rank(norms: np.ndarray, tol: float) -> int:
    if norms.size == 0 or norms.max() == 0:
        return 0
    return int(np.sum(norms > tol * max(1.0, norms.max())))


def _inner_product_span_ranks(M, tol):
    if isinstance(M, FiberedBimodule):
        # <e_i, e_j>_B = G[i, j] at the right point of j when i, j share a column.
        # Each pair contributes to a single coordinate, so the value vectors,
        # stacked as rows, have orthogonal columns: the singular values are
        # the column norms and the rank needs no SVD.
        W = np.abs(M.gram) ** 2
        same_col = M.cols[:, None] == M.cols[None, :]
        same_row = M.rows[:, None] == M.rows[None, :]
        rnorm = np.sqrt(np.bincount(M.cols, (W * same_col).sum(axis=0), minlength=M.right.dim))
        lnorm = np.sqrt(np.bincount(M.rows, (W * same_row).sum(axis=0), minlength=M.left.dim))
        return _column_rank(lnorm, tol), _column_rank(rnorm, tol)
    D = M.dim
    right = M.right_gram.reshape(M.right.dim, D * D).T
    left = np.transpose(M.left_gram, (0, 2, 1)).reshape(M.left.dim, D * D).T
    return _span_rank(left, tol), _span_rank(right, tol)


def _identity_residual(M):
    if isinstance(M, FiberedBimodule):
        return _kernels.fibered_identity_residual(M.gram, M.rows, M.cols)
    return _kernels.presented_identity_residual(M.left_gram, M.left_idem,
                                                M.right_gram, M.right_idem)


def _scale(M) -> float:
    if isinstance(M, FiberedBimodule):
        return max(1.0, float(np.max(np.abs(M.gram), initial=0.0)))
    return max(1.0, float(np.max(np.abs(M.right_gram))), float(np.max(np.abs(M.left_gram))))


def is_imprimitivity(M, tol: float = DEFAULT_TOL) -> ImprimitivityCertificate:
    """Imprimitivity test by two independent routes that must agree.

    Route 1: fullness on both sides (span of inner-product values) and the
    identity  A<x,y> z = x <y,z>_B  on every triple of basis vectors.
    Route 2: the fiber support is the graph of a bijection and every fiber is
    one-dimensional (presented inputs are decomposed first).
    """
    lrank, rrank = _inner_product_span_ranks(M, tol)
    left_full, right_full = lrank == M.left.dim, rrank == M.right.dim
    res, i, j, k = _identity_residual(M)
    ident_ok = res <= tol * _scale(M)
    identity_test = left_full and right_full and ident_ok

    fib, reason = M, ""
    if isinstance(M, PresentedBimodule):
        try:
            fib, _ = decompose_presented(M, tol)
        except BimoduleError as exc:
            fib, reason = None, f"decomposition failed: {exc}"
    bij = fib.support_bijection() if fib is not None else None
    graph_test = bij is not None

    if graph_test != identity_test and fib is not None:
        raise SelfTestError(
            f"graph characterization ({graph_test}) disagrees with identity check "
            f"({identity_test}, residual {res:.3e})")
    if not reason and not identity_test:
        if not left_full:
            reason = "not full as a left module"
        elif not right_full:
            reason = "not full as a right module"
        else:
            reason = f"identity fails on basis triple {(i, j, k)} with residual {res:.3e}"
        if fib is not None and not graph_test:
            bad = [c for c in fib.cells if fib.dims[c] > 1]
            if bad:
                reason += f"; fiber {bad[0]} has dimension {int(fib.dims[bad[0]])}"
    ok = graph_test and identity_test
    return ImprimitivityCertificate(
        ok, graph_test, identity_test, left_full, right_full, float(res),
        None if ident_ok else (i, j, k), bij, reason,
        fib if isinstance(fib, FiberedBimodule) else None)


def brute_force_imprimitivity(M: FiberedBimodule, tol: float = DEFAULT_TOL) -> bool:
    """Reference check with no structural shortcuts: every basis triple, fullness by span."""
    lrank, rrank = _inner_product_span_ranks(M, tol)
    if lrank != M.left.dim or rrank != M.right.dim:
        return False
    basis = [M.basis_vector(i) for i in range(M.dim)]
    for x in basis:
        for y in basis:
            lv = M.left_inner(x, y)
            for z in basis:
                lhs = M.left_act(lv, z)
                rhs = M.right_act(x, M.right_inner(y, z))
                if np.max(np.abs(lhs - rhs)) > tol:
                    return False
    return True


# --------------------------------------------------------------------------
# partitions of unity and the canonical isomorphism


def partition_of_unity(M: FiberedBimodule, side: str = "right") -> list[tuple[np.ndarray, np.ndarray]]:
    """One pair (w, w) per spectrum point with sum of inner products = 1.

    Right side:  sum_j <w_j, z_j>_B = 1_B;  left side:  sum_j A<w_j, z_j> = 1_A.
    """
    if side not in ("left", "right"):
        raise BimoduleError("side must be 'left' or 'right'")
    npts = M.right.dim if side == "right" else M.left.dim
    pairs, empty = [], []
    for p in range(npts):
        cands = [c for c in M.cells if (c[1] if side == "right" else c[0]) == p]
        if not cands:
            empty.append(p)
            continue
        c = cands[0]
        w = M.element({c: unit_fiber_vector(M.metrics[c])})
        pairs.append((w, w))
    if empty:
        alg = M.right if side == "right" else M.left
        raise NotFullError(f"not full on the {side}: empty fibers over points "
                           f"{[alg.labels[p] for p in empty]}")
    return pairs


def remix_partition(pairs, rng: np.random.Generator):
    """A second partition of unity: rescale each pair, then mix by a random unitary."""
    c = np.exp(rng.uniform(-1.0, 1.0, len(pairs)) + 2j * np.pi * rng.uniform(size=len(pairs)))
    W = np.array([w * s for (w, _), s in zip(pairs, c)])
    Z = np.array([z / np.conj(s) for (_, z), s in zip(pairs, c)])
    U = random_unitary(len(pairs), rng)
    return list(zip(U @ W, U @ Z))


def _onehot(tags, n):
    return (np.asarray(tags)[:, None] == np.arange(n)).astype(float)


def phi_matrix(M, pairs) -> np.ndarray:
    """Matrix of a -> sum_j <w_j, a z_j>_B  in the idempotent bases."""
    if isinstance(M, FiberedBimodule):
        W = np.array([w for w, _ in pairs]).reshape(-1, M.dim)
        Z = np.array([z for _, z in pairs]).reshape(-1, M.dim)
        # T[i, p] = sum_jk conj(W[j, i]) G[i, k] Z[j, k] [row k == p]
        T = (M.gram * (W.conj().T @ Z)) @ _onehot(M.rows, M.left.dim)
        return _onehot(M.cols, M.right.dim).T @ T
    out = np.zeros((M.right.dim, M.left.dim), dtype=complex)
    for p in range(M.left.dim):
        ep = M.left.idempotent(p)
        for w, z in pairs:
            out[:, p] += M.right_inner(w, M.left_act(ep, z)).values
    return out


def psi_matrix(M, pairs) -> np.ndarray:
    """Matrix of b -> sum_i A<t_i b, u_i>  for a left partition (t_i, u_i)."""
    if isinstance(M, FiberedBimodule):
        Tt = np.array([t for t, _ in pairs]).reshape(-1, M.dim)
        U = np.array([u for _, u in pairs]).reshape(-1, M.dim)
        S = (M.gram * (U.conj().T @ Tt)) @ _onehot(M.cols, M.right.dim)
        return _onehot(M.rows, M.left.dim).T @ S
    out = np.zeros((M.left.dim, M.right.dim), dtype=complex)
    for q in range(M.right.dim):
        eq = M.right.idempotent(q)
        for t, u in pairs:
            out[:, q] += M.left_inner(M.right_act(t, eq), u).values
    return out


def _permutation_from_matrix(Phi: np.ndarray) -> tuple[int, ...]:
    return tuple(int(np.argmax(np.abs(row))) for row in Phi)


@dataclass
class PhiCertificate:
    phi: AlgebraMap
    witness: list
    alpha: AlgebraElement
    beta: AlgebraElement
    residuals: dict
    tol: float
    matrix: np.ndarray
    psi: AlgebraMap | None = None

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())


def canonical_phi(M: FiberedBimodule, tol: float = DEFAULT_TOL, samples: int = 20,
                  seed: int = 0, certificate: ImprimitivityCertificate | None = None) -> PhiCertificate:
    """The canonical isomorphism A -> B with its certificate.

    phi(a) = sum_j <w_j, a z_j>_B  for a right partition of unity (w_j, z_j).
    """
    cert = certificate if certificate is not None else is_imprimitivity(M, tol)
    if not cert:
        raise NotImprimitivityError(cert.reason)
    A, B = M.left, M.right
    res = {}
    pairs = partition_of_unity(M, "right")
    Phi = phi_matrix(M, pairs)
    Phi2 = phi_matrix(M, remix_partition(pairs, _rng(seed, 100)))
    res["well_defined"] = float(np.max(np.abs(Phi - Phi2)))

    pm = _permutation_from_matrix(Phi)
    perm = np.zeros_like(Phi)
    perm[np.arange(B.dim), pm] = 1.0
    res["permutation"] = float(np.max(np.abs(Phi - perm)))
    phi = AlgebraMap(A, B, pm)
    if not phi.is_bijective:
        raise SelfTestError("canonical phi is not a bijection on an imprimitivity bimodule")
    if phi.spectral_map() != cert.bijection:
        raise SelfTestError("phi pullback disagrees with the support graph")

    res["unital"] = float(np.max(np.abs(Phi @ np.ones(A.dim) - 1.0)))
    rng = _rng(seed, 101)
    fe = inter = mult = star = 0.0
    for _ in range(samples):
        x, y = M.random_element(rng), M.random_element(rng)
        a, a2 = _random_algebra_element(A, rng), _random_algebra_element(A, rng)
        fe = max(fe, float(np.max(np.abs(Phi @ M.left_inner(x, y).values
                                          - M.right_inner(y, x).values))))
        inter = max(inter, float(np.max(np.abs(M.left_act(a, x)
                                               - M.right_act(x, Phi @ a.values)), initial=0.0)))
        mult = max(mult, float(np.max(np.abs(Phi @ (a * a2).values
                                             - (Phi @ a.values) * (Phi @ a2.values)))))
        star = max(star, float(np.max(np.abs(Phi @ a.values.conj() - np.conj(Phi @ a.values)))))
    res.update(functional_equation=fe, intertwining=inter, multiplicative=mult, involutive=star)

    alpha = sum((M.left_inner(z, w) for w, z in pairs), A.zero())
    res["alpha"] = alpha.distance(A.unit())
    lpairs = partition_of_unity(M, "left")
    beta = sum((M.right_inner(u, t) for t, u in lpairs), B.zero())
    res["beta"] = beta.distance(B.unit())
    rng = _rng(seed, 102)
    axb = 0.0
    for _ in range(samples):
        x = M.random_element(rng)
        axb = max(axb, float(np.max(np.abs(M.right_act(M.left_act(alpha, x), beta) - x),
                                    initial=0.0)))
    res["alpha_x_beta"] = axb
    Psi = psi_matrix(M, lpairs)
    res["psi_phi"] = float(np.max(np.abs(Psi @ Phi - np.eye(A.dim))))
    res["phi_psi"] = float(np.max(np.abs(Phi @ Psi - np.eye(B.dim))))
    psi = AlgebraMap(B, A, _permutation_from_matrix(Psi))
    scale = _scale(M)
    return PhiCertificate(phi, pairs, alpha, beta, res, tol * scale, Phi, psi)


def canonical_psi(M: FiberedBimodule, tol: float = DEFAULT_TOL) -> AlgebraMap:
    cert = is_imprimitivity(M, tol)
    if not cert:
        raise NotImprimitivityError(cert.reason)
    Psi = psi_matrix(M, partition_of_unity(M, "left"))
    return AlgebraMap(M.right, M.left, _permutation_from_matrix(Psi))


def left_action_as_compacts(M: FiberedBimodule, tol: float = DEFAULT_TOL, samples: int = 20,
                            seed: int = 0) -> Report:
    """a -> T_a  as a map A -> K(M_B): injectivity, image = span of thetas, *-preservation."""
    rep = Report(tol=tol)
    N, G = M.dim, M.gram
    T = np.array([M.left_operator(e).ravel() for e in M.left.basis()])  # (m, N*N)
    thetas = []
    for i in range(N):
        for j in range(N):
            th = np.zeros((N, N), dtype=complex)
            if M.cols[i] == M.cols[j]:
                th[i, :] = G[j, :] * (M.cols == M.cols[i])
            thetas.append(th.ravel())
    thetas = np.array(thetas)
    rT = _span_rank(T, tol)
    rTh = _span_rank(thetas, tol)
    rBoth = _span_rank(np.vstack([T, thetas]), tol)
    kernel_dim = M.left.dim - rT
    rep.details.update(kernel_dim=kernel_dim, image_dim=rT, theta_span_dim=rTh,
                       joint_dim=rBoth)
    rep.residuals["kernel_dim"] = float(kernel_dim)
    rep.residuals["span_mismatch"] = float(abs(rBoth - rT) + abs(rBoth - rTh))
    rng = _rng(seed, 200)
    worst = 0.0
    Ginv = np.linalg.inv(G) if N else G
    for _ in range(samples):
        a = _random_algebra_element(M.left, rng)
        Ta = M.left_operator(a)
        adj = Ginv @ Ta.conj().T @ G
        worst = max(worst, float(np.max(np.abs(adj - M.left_operator(a.adjoint())), initial=0.0)))
    rep.residuals["star"] = worst
    rep.details.update(injective=kernel_dim == 0, surjective=rBoth == rT == rTh)
    return rep


# --------------------------------------------------------------------------
# tensor product, dual, twisting


def rieffel_tensor(M: FiberedBimodule, N: FiberedBimodule) -> FiberedBimodule:
    """M ⊗_B N: fiber at (a, c) is the sum over b of  M(a,b) ⊗ N(b,c)."""
    if M.right != N.left:
        raise AlgebraError("right algebra of M must equal left algebra of N")
    A, C = M.left, N.right
    dims = np.zeros((A.dim, C.dim), dtype=int)
    mets = {}
    for a in range(A.dim):
        for c in range(C.dim):
            blocks = [np.kron(M.metrics[(a, b)], N.metrics[(b, c)])
                      for b in range(M.right.dim) if M.dims[a, b] and N.dims[b, c]]
            if blocks:
                G = sla.block_diag(*blocks)
                dims[a, c] = G.shape[0]
                G.setflags(write=False)
                mets[(a, c)] = G
    return FiberedBimodule(A, C, dims, mets)


def simple_tensor(M: FiberedBimodule, N: FiberedBimodule, T: FiberedBimodule, x, y) -> np.ndarray:
    """The element x ⊗ y of T = rieffel_tensor(M, N)."""
    out = np.zeros(T.dim, dtype=complex)
    for (a, c) in T.cells:
        parts = [np.outer(M.fiber(x, (a, b)), N.fiber(y, (b, c))).ravel()
                 for b in range(M.right.dim) if M.dims[a, b] and N.dims[b, c]]
        out[T.offsets[(a, c)]] = np.concatenate(parts)
    return out


def rieffel_dual(M: FiberedBimodule) -> FiberedBimodule:
    """Conjugate bimodule: fiber (b, a) carries the conjugate of M(a, b)."""
    mets = {}
    for (a, b), G in M.metrics.items():
        H = G.conj()
        H.setflags(write=False)
        mets[(b, a)] = H
    return FiberedBimodule(M.right, M.left, M.dims.T, mets)


def dual_element(M: FiberedBimodule, Md: FiberedBimodule, x) -> np.ndarray:
    """The conjugate-linear identification iota: M -> M*."""
    return Md.element({(b, a): np.conj(M.fiber(x, (a, b))) for (a, b) in M.cells})


def transport(M: FiberedBimodule, target: FiberedBimodule, x, cell_map) -> np.ndarray:
    """Move fiber vectors of x to ``target`` along ``cell_map`` (cell -> cell)."""
    return target.element({cell_map(c): M.fiber(x, c) for c in M.cells})


def twist_bimodule(M: FiberedBimodule, left_map: AlgebraMap | None = None,
                   right_map: AlgebraMap | None = None) -> FiberedBimodule:
    """Twist the actions by isomorphisms landing in M's algebras.

    With ``left_map: A' -> A`` and ``right_map: B' -> B`` the result is an
    A'-B' bimodule with  a'.x.b' := left_map(a') x right_map(b'),  inner
    products pulled back through the inverse maps; same underlying fibers.
    """
    lm = left_map or AlgebraMap.identity(M.left)
    rm = right_map or AlgebraMap.identity(M.right)
    if lm.target != M.left or rm.target != M.right:
        raise AlgebraError("twisting maps must land in the bimodule's algebras")
    if not (lm.is_bijective and rm.is_bijective):
        raise AlgebraError("twisting maps must be isomorphisms")
    dims = np.zeros((lm.source.dim, rm.source.dim), dtype=int)
    mets = {}
    for (a, b) in M.cells:
        c = (lm.point_map[a], rm.point_map[b])
        dims[c] = M.dims[a, b]
        mets[c] = M.metrics[(a, b)]
    return FiberedBimodule(lm.source, rm.source, dims, mets)


def twist_cell_map(left_map: AlgebraMap | None, right_map: AlgebraMap | None):
    def f(c):
        a = left_map.point_map[c[0]] if left_map else c[0]
        b = right_map.point_map[c[1]] if right_map else c[1]
        return (a, b)
    return f


def right_symmetrized(M: FiberedBimodule) -> FiberedBimodule:
    """The left module A-M promoted to an A-A bimodule with x.a := a.x.

    Right inner product: <x, y> := A<y, x>.  Requires at most one nonempty
    fiber per row (true for imprimitivity bimodules)."""
    if np.any((M.dims > 0).sum(axis=1) > 1):
        raise BimoduleError("symmetrization in fibered form needs one fiber per row")
    dims = np.zeros((M.left.dim, M.left.dim), dtype=int)
    mets = {}
    for (a, b) in M.cells:
        dims[a, a] = M.dims[a, b]
        mets[(a, a)] = M.metrics[(a, b)]
    return FiberedBimodule(M.left, M.left, dims, mets)


def left_symmetrized(M: FiberedBimodule) -> FiberedBimodule:
    """The right module M_B promoted to a B-B bimodule with b.x := x.b."""
    if np.any((M.dims > 0).sum(axis=0) > 1):
        raise BimoduleError("symmetrization in fibered form needs one fiber per column")
    dims = np.zeros((M.right.dim, M.right.dim), dtype=int)
    mets = {}
    for (a, b) in M.cells:
        dims[b, b] = M.dims[a, b]
        mets[(b, b)] = M.metrics[(a, b)]
    return FiberedBimodule(M.right, M.right, dims, mets)


def symmetrization_check(M: FiberedBimodule, tol: float = DEFAULT_TOL, samples: int = 20,
                         seed: int = 0) -> Report:
    """Right twist of M by phi_M against the right symmetrization of A-M,
    and the left twist by phi_M^{-1} against the left symmetrization of M_B."""
    cert = canonical_phi(M, tol, samples, seed)
    phi = cert.phi
    inv = phi.inverse()
    rep = Report(tol=tol * _scale(M))
    r = rep.residuals
    A, B = M.left, M.right
    # structure-level equality, both sides
    twisted = twist_bimodule(M, None, phi)
    sym = right_symmetrized(M)
    rep.details["right_equal"] = twisted == sym
    ltwisted = twist_bimodule(M, inv, None)
    lsym = left_symmetrized(M)
    rep.details["left_equal"] = ltwisted == lsym
    r["structure"] = 0.0 if (rep.details["right_equal"] and rep.details["left_equal"]) else 1.0
    # element-level equality on the common underlying space
    rng = _rng(seed, 300)
    ra = ri = la = li = 0.0
    for _ in range(samples):
        x, y = M.random_element(rng), M.random_element(rng)
        a = _random_algebra_element(A, rng)
        b = _random_algebra_element(B, rng)
        # right: x . a  (twisted)  vs  a . x  (symmetrized)
        ra = max(ra, float(np.max(np.abs(M.right_act(x, phi(a)) - M.left_act(a, x)), initial=0.0)))
        ri = max(ri, inv(M.right_inner(x, y)).distance(M.left_inner(y, x)))
        # left: b . x  (twisted by phi^{-1})  vs  x . b  (symmetrized)
        la = max(la, float(np.max(np.abs(M.left_act(inv(b), x) - M.right_act(x, b)), initial=0.0)))
        li = max(li, phi(M.left_inner(x, y)).distance(M.right_inner(y, x)))
    r.update(right_action=ra, right_inner=ri, left_action=la, left_inner=li)
    return rep


# --------------------------------------------------------------------------
# quotients


def quotient_bimodule(M: FiberedBimodule, I: Ideal, tol: float = DEFAULT_TOL):
    """M / (I M) over A/I and B/phi_M(I).

    Returns (quotient bimodule, projection A -> A/I, projection B -> B/phi_M(I)).
    """
    if I.parent != M.left:
        raise AlgebraError("ideal must be an ideal of the left algebra")
    if not I.is_proper:
        raise BimoduleError("improper ideal: the quotient would be zero")
    phi = canonical_phi(M, tol).phi
    # phi(I) vanishes on the right points whose pullback lies in kept
    kept_right = [q for q in range(M.right.dim) if phi.point_map[q] in I.kept]
    J = ideal_from_points(M.right, kept_right)
    Aq, pa = quotient_algebra(M.left, I)
    Bq, pb = quotient_algebra(M.right, J)
    ia = {p: k for k, p in enumerate(pa.point_map)}
    ib = {q: k for k, q in enumerate(pb.point_map)}
    dims = np.zeros((Aq.dim, Bq.dim), dtype=int)
    mets = {}
    for (a, b) in M.cells:
        if a in ia and b in ib:
            dims[ia[a], ib[b]] = M.dims[a, b]
            mets[(ia[a], ib[b])] = M.metrics[(a, b)]
    return FiberedBimodule(Aq, Bq, dims, mets), pa, pb


# --------------------------------------------------------------------------
# isomorphisms


@dataclass
class BimoduleIso:
    """x -> matrix @ x, intertwining  a.x.b  with  left_map(a) . Phi(x) . right_map(b)."""

    source: object
    target: FiberedBimodule
    left_map: AlgebraMap
    right_map: AlgebraMap
    matrix: np.ndarray
    fiber_unitaries: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.matrix @ x

    def residuals(self, samples: int = 20, seed: int = 0) -> dict:
        S, T = self.source, self.target
        rng = _rng(seed, 400)
        act = rin = lin = 0.0
        for _ in range(samples):
            x, y = S.random_element(rng), S.random_element(rng)
            a = _random_algebra_element(S.left, rng)
            b = _random_algebra_element(S.right, rng)
            lhs = self(S.right_act(S.left_act(a, x), b))
            rhs = T.right_act(T.left_act(self.left_map(a), self(x)), self.right_map(b))
            act = max(act, float(np.max(np.abs(lhs - rhs), initial=0.0)))
            rin = max(rin, T.right_inner(self(x), self(y)).distance(
                self.right_map(S.right_inner(x, y))))
            lin = max(lin, T.left_inner(self(x), self(y)).distance(
                self.left_map(S.left_inner(x, y))))
        return {"actions": act, "right_inner": rin, "left_inner": lin}


def _metric_alignment(G_src, G_tgt):
    """U with U^H G_tgt U = G_src."""
    Ls = np.linalg.cholesky(G_src)
    Lt = np.linalg.cholesky(G_tgt)
    return sla.solve_triangular(Lt.conj().T, Ls.conj().T, lower=False)


def bimodule_isomorphic(M: FiberedBimodule, N: FiberedBimodule,
                        tol: float = DEFAULT_TOL) -> BimoduleIso | None:
    """An isomorphism M -> N over the identity maps of the algebras, if any.

    Fibered bimodules over C(X), C(Y) are isomorphic iff the fiber dimensions
    agree pointwise; fiber maps come from Cholesky factors of the metrics, so
    one-dimensional fibers get positive real scalings."""
    if M.left != N.left or M.right != N.right:
        raise AlgebraError("bimodules live over different algebras")
    if not np.array_equal(M.dims, N.dims):
        return None
    mat = np.zeros((N.dim, M.dim), dtype=complex)
    units = {}
    for c in M.cells:
        U = _metric_alignment(M.metrics[c], N.metrics[c])
        units[c] = U
        mat[N.offsets[c], M.offsets[c]] = U
    return BimoduleIso(M, N, AlgebraMap.identity(M.left), AlgebraMap.identity(M.right),
                       mat, units)


def _commutation_residual(Pi, Qi) -> float:
    """max over a, b of ||[P_a, Q_b]||, computed in a basis adapted to the Q family.

    Idempotents summing to 1 form a direct-sum decomposition, so P_a commutes
    with every Q_b iff P_a is block diagonal in a basis adapted to the ranges
    of the Q_b.  This costs one similarity per idempotent instead of one
    commutator per pair.  The off-block part is measured in Frobenius norm
    and mapped back by the condition number of the adapted basis.
    """
    D = Qi.shape[-1]
    ranks = np.rint(np.einsum("bii->b", Qi).real).astype(int)
    if ranks.sum() != D or np.any(ranks < 0):
        return float("inf")
    S = np.hstack([np.linalg.svd(q)[0][:, :r] for q, r in zip(Qi, ranks)])
    try:
        Si = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return float("inf")
    tag = np.repeat(np.arange(len(Qi)), ranks)
    off = tag[:, None] != tag[None, :]
    diag = np.equal.outer(tag, np.arange(len(Qi)))
    cond = np.linalg.norm(S, 2) * np.linalg.norm(Si, 2)
    # the adapted basis must actually diagonalize the Q family
    qres = max(float(np.linalg.norm(Si @ q @ S - np.diag(diag[:, b].astype(float))))
               for b, q in enumerate(Qi))
    pres = max(float(np.linalg.norm((Si @ p @ S)[off])) for p in Pi)
    return float(cond * max(pres, qres))


def decompose_presented(P: PresentedBimodule, tol: float = DEFAULT_TOL):
    """Fibered form of a presented bimodule: H_ab = range(P_a) ∩ range(Q_b).

    Returns (fibered bimodule, iso from P to it).
    """
    D = P.dim
    Pi, Qi = P.left_idem, P.right_idem
    scale = max(1.0, float(np.max(np.linalg.norm(Pi, axis=(1, 2)))),
                float(np.max(np.linalg.norm(Qi, axis=(1, 2)))))
    comm = _commutation_residual(Pi, Qi)
    if comm > tol * scale * scale:
        raise DecompositionError(f"idempotent families do not commute (residual {comm:.3e})")
    # P_a Q_b is idempotent, so its trace is its rank
    ranks = np.einsum("aij,bji->ab", Pi, Qi).real
    dims = np.rint(ranks).astype(int)
    if np.max(np.abs(ranks - dims), initial=0.0) > 0.25 or np.any(dims < 0):
        raise DecompositionError("products of the idempotent families are not idempotents")
    frames, mets = {}, {}
    for a, b in zip(*np.nonzero(dims)):
        a, b, r = int(a), int(b), int(dims[a, b])
        U, _, _ = np.linalg.svd(Pi[a] @ Qi[b])
        W = U[:, :r]
        G = W.conj().T @ P.right_gram[b] @ W
        H = W.conj().T @ P.left_gram[a] @ W
        gscale = max(1.0, np.linalg.norm(G, 2))
        if np.linalg.norm(G - H, 2) > tol * gscale * scale * scale:
            raise DecompositionError(
                f"left and right Gram forms disagree on fiber ({a}, {b})")
        G = 0.5 * (G + G.conj().T)
        if np.linalg.eigvalsh(G)[0] <= tol * gscale:
            raise DecompositionError(f"Gram form degenerate on fiber ({a}, {b})")
        frames[(a, b)] = W
        G.setflags(write=False)
        mets[(a, b)] = G
    if dims.sum() != D:
        raise DecompositionError(
            f"fibers span dimension {int(dims.sum())}, ambient dimension is {D}")
    F = FiberedBimodule(P.left, P.right, dims, mets)
    W = np.hstack([frames[c] for c in F.cells])
    iso = BimoduleIso(P, F, AlgebraMap.identity(P.left), AlgebraMap.identity(P.right),
                      np.linalg.inv(W))
    return F, iso
