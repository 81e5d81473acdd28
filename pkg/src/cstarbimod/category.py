"""Concrete C*-categories carved out of a matrix algebra by projections.

Objects are orthogonal projections p_A summing to the identity in M_D.  The
morphisms B -> A form the block  C_AB = p_A X p_B,  where X is a *-subalgebra
of M_D (all of M_D unless an ambient basis is supplied).  Composition is the
matrix product and the involution is the conjugate transpose.

When every diagonal block C_AA is commutative, each C_AA is brought to the
form C(X_A) by joint diagonalization and each C_AB becomes a fibered
C_AA-C_BB bimodule with inner products
    <x, y>_B = x* y      and      A<x, y> = x y*.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

from .algebra import (DEFAULT_TOL, Algebra, AlgebraMap, GelfandData, gelfand_transform,
                      joint_diagonalize)
from .bimodule import (FiberedBimodule, PresentedBimodule, Report, SelfTestError,
                       bimodule_isomorphic, canonical_phi, decompose_presented,
                       is_imprimitivity, partition_of_unity, rieffel_dual, rieffel_tensor,
                       simple_tensor, twist_bimodule)


class CategoryError(ValueError):
    pass


def _orthonormal_span(mats, tol):
    """Frobenius-orthonormal basis (as matrices) of the span of ``mats``."""
    if not mats:
        return []
    shape = mats[0].shape
    V = np.array([m.ravel() for m in mats]).T
    if V.size == 0:
        return []
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return []
    r = int(np.sum(s > tol * max(1.0, s[0])))
    return [U[:, i].reshape(shape) for i in range(r)]


def _span_dim(mats, tol) -> int:
    mats = list(mats)
    if not mats or not mats[0].size:
        return 0
    s = np.linalg.svd(np.array([m.ravel() for m in mats]), compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0]))) if s[0] else 0


def _range_basis(p, tol):
    w, V = np.linalg.eigh(0.5 * (p + p.conj().T))
    return V[:, w > 0.5]


@dataclass
class BlockData:
    basis: list
    presented: PresentedBimodule
    fibered: FiberedBimodule
    frames: np.ndarray  # columns: fiber basis vectors in block coordinates

    def to_matrix(self, coords):
        return np.tensordot(coords, np.array(self.basis), axes=1)


@dataclass(eq=False)
class CStarCategory:
    ambient_dim: int
    labels: tuple[str, ...]
    projections: tuple[np.ndarray, ...]
    tol: float = DEFAULT_TOL
    ambient_basis: tuple[np.ndarray, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_objects(self) -> int:
        return len(self.labels)

    def index(self, A) -> int:
        return self.labels.index(A) if isinstance(A, str) else int(A)

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def range_basis(self, A) -> np.ndarray:
        A = self.index(A)
        return self._memo(("range", A), lambda: _range_basis(self.projections[A], self.tol))

    def block_basis(self, A, B) -> list[np.ndarray]:
        """Frobenius-orthonormal basis of C_AB."""
        A, B = self.index(A), self.index(B)

        def build():
            VA, VB = self.range_basis(A), self.range_basis(B)
            if self.ambient_basis is None:
                out = []
                for i in range(VA.shape[1]):
                    for j in range(VB.shape[1]):
                        out.append(np.outer(VA[:, i], VB[:, j].conj()))
                return out
            pA, pB = self.projections[A], self.projections[B]
            return _orthonormal_span([pA @ X @ pB for X in self.ambient_basis], self.tol)
        return self._memo(("basis", A, B), build)

    def block_dim(self, A, B) -> int:
        return len(self.block_basis(A, B))

    def coords(self, A, B, x) -> np.ndarray:
        return np.array([np.vdot(b, x) for b in self.block_basis(A, B)], dtype=complex)

    def _basis_rows(self, A, B) -> np.ndarray:
        A, B = self.index(A), self.index(B)
        return self._memo(("rows", A, B), lambda: np.array(
            [b.ravel() for b in self.block_basis(A, B)], dtype=complex).reshape(
                -1, self.ambient_dim ** 2))

    def matrix(self, A, B, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=complex)
        return (c @ self._basis_rows(A, B)).reshape(self.ambient_dim, self.ambient_dim)

    def random_block_element(self, A, B, rng) -> np.ndarray:
        d = self.block_dim(A, B)
        c = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        return self.matrix(A, B, c / max(1e-300, np.linalg.norm(c)))

    # ---------------------------------------------------------------- diagonal blocks

    def gelfand(self, A) -> GelfandData:
        """Joint diagonalization of C_AA compressed to the range of p_A."""
        A = self.index(A)

        def build():
            V = self.range_basis(A)
            gens = [V.conj().T @ b @ V for b in self.block_basis(A, A)]
            G = joint_diagonalize(gens, self.tol, seed=A)
            labels = tuple(f"{self.labels[A]}:{s}" for s in G.labels)
            return dataclasses.replace(G, labels=labels)
        return self._memo(("gelfand", A), build)

    def algebra(self, A) -> Algebra:
        return self.gelfand(A).algebra

    def point_projection(self, A, k: int) -> np.ndarray:
        """The minimal idempotent of C_AA at spectrum point k, as a D x D matrix."""
        A = self.index(A)

        def build():
            V = self.range_basis(A)
            E = V @ self.gelfand(A).projection(k) @ V.conj().T
            E.setflags(write=False)
            return E
        return self._memo(("point", A, int(k)), build)

    def values(self, A, a) -> np.ndarray:
        """Gel'fand transform of a D x D element of C_AA."""
        V = self.range_basis(A)
        return gelfand_transform(self.gelfand(A), V.conj().T @ a @ V).values

    def lift(self, A, values) -> np.ndarray:
        return sum(v * self.point_projection(A, k) for k, v in enumerate(values))

    # ---------------------------------------------------------------- blocks as bimodules

    def block(self, A, B) -> BlockData:
        A, B = self.index(A), self.index(B)
        return self._memo(("block", A, B), lambda: self._build_block(A, B))

    def _build_block(self, A, B) -> BlockData:
        basis = self.block_basis(A, B)
        if not basis:
            raise CategoryError(f"block ({self.labels[A]}, {self.labels[B]}) is zero")
        GA, GB = self.gelfand(A), self.gelfand(B)
        E = [self.point_projection(A, k) for k in range(GA.algebra.dim)]
        F = [self.point_projection(B, l) for l in range(GB.algebra.dim)]
        Bm = np.array(basis)
        d = len(basis)
        Bc = Bm.reshape(d, -1).conj()
        # <B_i, e B_j>_F  and  <B_i, B_j f>_F
        P = np.array([Bc @ (e @ Bm).reshape(d, -1).T for e in E])
        Q = np.array([Bc @ (Bm @ f).reshape(d, -1).T for f in F])
        # value at l of B_i^* B_j is tr(f B_i^* B_j) / mult = <B_i, B_j f>_F / mult,
        # and likewise value at k of B_j B_i^* is <B_i, e B_j>_F / mult
        R = Q / np.asarray(GB.multiplicity, dtype=float)[:, None, None]
        L = P / np.asarray(GA.multiplicity, dtype=float)[:, None, None]
        Pres = PresentedBimodule(GA.algebra, GB.algebra, P, Q, R, L)
        Fib, iso = decompose_presented(Pres, self.tol)
        return BlockData(basis, Pres, Fib, np.linalg.inv(iso.matrix))

    def fibered_to_matrix(self, A, B, v) -> np.ndarray:
        blk = self.block(A, B)
        return self.matrix(A, B, blk.frames @ v)

    def matrix_to_fibered(self, A, B, x) -> np.ndarray:
        blk = self.block(A, B)
        return np.linalg.solve(blk.frames, self.coords(A, B, x))

    def to_json(self) -> dict:
        from .jsonio import category_to_json
        return category_to_json(self)


def category_from_projections(projections, labels=None, tol: float = DEFAULT_TOL,
                              algebra=None) -> CStarCategory:
    """Validate a projection family (and optional ambient *-algebra basis)."""
    projs = [np.array(p, dtype=complex) for p in projections]
    if not projs:
        raise CategoryError("need at least one object")
    D = projs[0].shape[0]
    if any(p.shape != (D, D) for p in projs):
        raise CategoryError("projections must all be D x D")
    labels = tuple(labels) if labels is not None else tuple(f"O{i}" for i in range(len(projs)))
    if len(labels) != len(projs) or len(set(labels)) != len(labels):
        raise CategoryError("need distinct labels, one per projection")
    for i, p in enumerate(projs):
        if np.linalg.norm(p - p.conj().T, 2) > tol or np.linalg.norm(p @ p - p, 2) > tol:
            raise CategoryError(f"object {labels[i]}: not an orthogonal projection")
        if np.linalg.norm(p, 2) < 0.5:
            raise CategoryError(f"object {labels[i]}: zero projection")
    for i, j in itertools.combinations(range(len(projs)), 2):
        r = np.linalg.norm(projs[i] @ projs[j], 2)
        if r > tol:
            raise CategoryError(f"objects {labels[i]} and {labels[j]} are not orthogonal "
                                f"(residual {r:.3e})")
    r = np.linalg.norm(sum(projs) - np.eye(D), 2)
    if r > tol:
        raise CategoryError(f"projections do not sum to the identity (residual {r:.3e})")
    basis = None
    if algebra is not None:
        mats = [np.array(m, dtype=complex) for m in algebra]
        if any(m.shape != (D, D) for m in mats):
            raise CategoryError("ambient algebra matrices must be D x D")
        ortho = _orthonormal_span(mats, tol)
        Vm = np.array([o.ravel() for o in ortho]).T

        O = np.array(ortho)

        def outside(X):
            # rows of X that leave the span, relative to their own size
            X = X.reshape(len(X), -1)
            res = np.linalg.norm(X - (X @ Vm.conj()) @ Vm.T, axis=1)
            return res > tol * np.maximum(1.0, np.linalg.norm(X, axis=1))
        bad = outside(np.array(projs))
        if bad.any():
            i = int(np.argmax(bad))
            raise CategoryError(f"projection of {labels[i]} is outside the ambient algebra")
        if outside(O.conj().transpose(0, 2, 1)).any():
            raise CategoryError("ambient algebra is not closed under the adjoint")
        if len(O) and outside((O[:, None] @ O[None]).reshape(-1, D, D)).any():
            raise CategoryError("ambient algebra is not closed under products")
        basis = tuple(mats)
        for m in basis:
            m.setflags(write=False)
    for p in projs:
        p.setflags(write=False)
    return CStarCategory(D, labels, tuple(projs), tol, basis)


# ------------------------------------------------------------------ fullness, commutativity


def check_full(C: CStarCategory, tol: float | None = None) -> Report:
    """Span of C_AB C_BC against C_AC for every triple, and the pairwise
    condition span C_AB C_BA = C_AA; the two must agree."""
    tol = C.tol if tol is None else tol
    rep = Report(tol=0.5)
    k = C.n_objects
    triple_ok, witness = True, None
    for A, B, Cc in itertools.product(range(k), repeat=3):
        prods = [x @ y for x in C.block_basis(A, B) for y in C.block_basis(B, Cc)]
        got, want = _span_dim(prods, tol), C.block_dim(A, Cc)
        if got != want:
            triple_ok = False
            witness = witness or (C.labels[A], C.labels[B], C.labels[Cc])
        rep.residuals[f"span[{C.labels[A]},{C.labels[B]},{C.labels[Cc]}]"] = float(abs(want - got))
    pair_ok = True
    for A, B in itertools.product(range(k), repeat=2):
        prods = [x @ y for x in C.block_basis(A, B) for y in C.block_basis(B, A)]
        if _span_dim(prods, tol) != C.block_dim(A, A):
            pair_ok = False
    if pair_ok != triple_ok:
        raise SelfTestError("pairwise and triple fullness criteria disagree")
    rep.details.update(full=triple_ok, pairwise=pair_ok, witness=witness)
    return rep


def check_commutative(C: CStarCategory, tol: float | None = None, samples: int = 10,
                      seed: int = 0) -> Report:
    tol = C.tol if tol is None else tol
    rep = Report(tol=tol)
    rng = np.random.default_rng([seed, 500])
    for A in range(C.n_objects):
        basis = C.block_basis(A, A)
        worst = max((np.linalg.norm(x @ y - y @ x, 2) for x in basis for y in basis), default=0.0)
        for _ in range(samples):
            x, y = C.random_block_element(A, A, rng), C.random_block_element(A, A, rng)
            worst = max(worst, np.linalg.norm(x @ y - y @ x, 2))
        rep.residuals[C.labels[A]] = float(worst)
    return rep


def _require_full_commutative(C):
    full = C._memo(("full", C.tol), lambda: check_full(C))
    if not full.details["full"]:
        raise CategoryError(f"category is not full (triple {full.details['witness']})")
    comm = C._memo(("commutative", C.tol), lambda: check_commutative(C))
    if not comm.passed:
        raise CategoryError(f"diagonal blocks are not commutative: {comm.failures()}")


# ------------------------------------------------------------------ canonical isomorphisms


@dataclass
class PhiFamily:
    category: CStarCategory
    maps: dict  # (A, B) -> AlgebraMap C_AA -> C_BB  (phi_BA)
    partitions: dict  # (A, B) -> list of D x D matrices W_j with sum W_j^* W_j = p_B
    residuals: dict
    tol: float

    def phi(self, A, B) -> AlgebraMap:
        return self.maps[(self.category.index(A), self.category.index(B))]

    def apply(self, A, B, a) -> np.ndarray:
        """phi_BA(a) = sum_j <w_j, a w_j>_B  evaluated with matrix products;
        a stack of matrices is mapped entrywise."""
        W = np.array(self.partitions[(A, B)])
        a = np.asarray(a)
        out = (W.conj().transpose(0, 2, 1) @ a[..., None, :, :] @ W).sum(axis=-3)
        return out

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())


def canonical_phi_family(C: CStarCategory, tol: float | None = None, samples: int = 5,
                         seed: int = 0) -> PhiFamily:
    tol = C.tol if tol is None else tol
    _require_full_commutative(C)
    k = C.n_objects
    maps, parts = {}, {}
    cert_res = 0.0
    for A, B in itertools.product(range(k), repeat=2):
        blk = C.block(A, B)
        cert = is_imprimitivity(blk.fibered, tol)
        if not cert:
            raise CategoryError(f"block ({C.labels[A]}, {C.labels[B]}) is not imprimitivity: "
                                f"{cert.reason}")
        pc = canonical_phi(blk.fibered, tol, samples=samples, seed=seed, certificate=cert)
        cert_res = max(cert_res, max(pc.residuals.values()) / max(1.0, pc.tol / tol))
        maps[(A, B)] = pc.phi
        parts[(A, B)] = [C.fibered_to_matrix(A, B, w) for w, _ in partition_of_unity(blk.fibered)]
    fam = PhiFamily(C, maps, parts, {}, tol)
    r = fam.residuals
    r["certificates"] = cert_res
    ident = inv = comp = 0.0
    pt_ident = pt_inv = pt_comp = True
    E = {A: np.array([C.point_projection(A, a) for a in range(C.algebra(A).dim)])
         for A in range(k)}

    def gap(X, Y):
        return float(np.max(np.linalg.norm(X - Y, 2, axis=(-2, -1))))
    for A in range(k):
        pt_ident &= maps[(A, A)].point_map == tuple(range(C.algebra(A).dim))
        ident = max(ident, gap(fam.apply(A, A, E[A]), E[A]))
    for A, B in itertools.product(range(k), repeat=2):
        pt_inv &= maps[(B, A)].point_map == maps[(A, B)].inverse().point_map
        inv = max(inv, gap(fam.apply(B, A, fam.apply(A, B, E[A])), E[A]))
    for A, B, Cc in itertools.product(range(k), repeat=3):
        pt_comp &= maps[(B, Cc)].compose(maps[(A, B)]).point_map == maps[(A, Cc)].point_map
        comp = max(comp, gap(fam.apply(B, Cc, fam.apply(A, B, E[A])), fam.apply(A, Cc, E[A])))
    r.update(identity=float(ident), inverse=float(inv), composition=float(comp))
    # point-level identities are exact; a failure is recorded as an infinite residual
    r["point_identity"] = 0.0 if pt_ident else float("inf")
    r["point_inverse"] = 0.0 if pt_inv else float("inf")
    r["point_composition"] = 0.0 if pt_comp else float("inf")
    return fam


# ------------------------------------------------------------------ point functors


@dataclass
class PointFunctor:
    """omega(x) = chi(v_B x v_C^*) on C_BC, with chi a character of C_{A0 A0}."""

    category: CStarCategory
    base: int
    point: int
    points: tuple[int, ...]
    frames: tuple[np.ndarray, ...]
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, B, Cc, x) -> complex:
        # tr(e v_B x v_C^*) / tr(e) = tr(K x) with K = v_C^* e v_B / tr(e)
        K = self._kernels.get((B, Cc))
        if K is None:
            e = self.category.point_projection(self.base, self.point)
            K = self.frames[Cc].conj().T @ e @ self.frames[B] / np.trace(e).real
            self._kernels[(B, Cc)] = K
        return complex(np.sum(K.T * x))


def make_point_functor(C: CStarCategory, base_object=0, base_character: int = 0,
                       frame_seed: int | None = None, family: PhiFamily | None = None,
                       aligned: bool = True) -> PointFunctor:
    """Extend the character ``base_character`` of C_{A0 A0} to all blocks.

    Frames v_B lie in e C_{A0 B} with e the base point's idempotent and are
    normalized so that v_B^* v_B is the idempotent of the transported point.
    ``aligned=False`` builds the negative control: frames for the other
    objects are taken at a different base point, ignoring the phi family.
    """
    fam = family if family is not None else canonical_phi_family(C)
    A0 = C.index(base_object)
    n0 = C.algebra(A0).dim
    if not 0 <= base_character < n0:
        raise CategoryError("base character out of range")
    if not aligned and n0 < 2:
        raise CategoryError("a misaligned functor needs at least two spectrum points")
    rng = np.random.default_rng(frame_seed) if frame_seed is not None else None
    points, frames = [], []
    for B in range(C.n_objects):
        k0 = base_character if (aligned or B == A0) else (base_character + 1) % n0
        # transported point: phi_{B A0} pulls B's point s back to k0
        s = fam.phi(A0, B).inverse().point_map[k0]
        if B == A0:
            v = C.point_projection(A0, k0)
        else:
            e, f = C.point_projection(A0, k0), C.point_projection(B, s)
            cands = [e @ b @ f for b in C.block_basis(A0, B)]
            y = max(cands, key=lambda m: np.linalg.norm(m))
            c = np.trace(y.conj().T @ y).real / np.trace(f).real
            v = y / np.sqrt(c)
            if rng is not None:
                v = v * np.exp(2j * np.pi * rng.uniform())
        points.append(int(s))
        frames.append(v)
    return PointFunctor(C, A0, base_character, tuple(points), tuple(frames))


def verify_functor_invariance(C: CStarCategory, omega: PointFunctor, tol: float | None = None,
                              samples: int = 10, seed: int = 0,
                              family: PhiFamily | None = None) -> Report:
    """Functor axioms first (multiplicative, *-preserving, unital), then
    omega(phi_BA(a)) = omega(a) over a basis of every C_AA."""
    tol = C.tol if tol is None else tol
    fam = family if family is not None else canonical_phi_family(C)
    rep = Report(tol=tol)
    k = C.n_objects
    rng = np.random.default_rng([seed, 600])
    mult = star = unit = 0.0
    for A, B, Cc in itertools.product(range(k), repeat=3):
        for _ in range(samples):
            x = C.random_block_element(A, B, rng)
            y = C.random_block_element(B, Cc, rng)
            mult = max(mult, abs(omega(A, Cc, x @ y) - omega(A, B, x) * omega(B, Cc, y)))
    for A, B in itertools.product(range(k), repeat=2):
        for _ in range(samples):
            x = C.random_block_element(A, B, rng)
            star = max(star, abs(omega(B, A, x.conj().T) - np.conj(omega(A, B, x))))
    for A in range(k):
        unit = max(unit, abs(omega(A, A, C.projections[A]) - 1.0))
    rep.residuals.update(multiplicative=float(mult), involutive=float(star), unital=float(unit))
    inv = 0.0
    for A, B in itertools.product(range(k), repeat=2):
        for a in range(C.algebra(A).dim):
            E = C.point_projection(A, a)
            inv = max(inv, abs(omega(B, B, fam.apply(A, B, E)) - omega(A, A, E)))
    rep.residuals["invariance"] = float(inv)
    return rep


# ------------------------------------------------------------------ Picard relation


@dataclass
class PicardRelation:
    labels: tuple[str, ...]
    classes: dict  # (A, B) -> bijection X_A -> X_B
    laws: dict

    @property
    def passed(self) -> bool:
        return all(self.laws.values())


def picard_relation(C: CStarCategory, tol: float | None = None,
                    family: PhiFamily | None = None) -> PicardRelation:
    fam = family if family is not None else canonical_phi_family(C, tol)
    k = C.n_objects
    classes = {(A, B): tuple(fam.maps[(A, B)].inverse().point_map)
               for A, B in itertools.product(range(k), repeat=2)}
    refl = all(classes[(A, A)] == tuple(range(len(classes[(A, A)]))) for A in range(k))
    symm = all(tuple(np.argsort(classes[(A, B)])) == classes[(B, A)]
               for A, B in itertools.product(range(k), repeat=2))
    trans = all(tuple(classes[(B, Cc)][a] for a in classes[(A, B)]) == classes[(A, Cc)]
                for A, B, Cc in itertools.product(range(k), repeat=3))
    total = len(classes) == k * k
    from .spectral import spectral_data
    # support graphs of the blocks, checked against the family's maps
    graphs_ok = all(spectral_data(C.block(A, B).fibered, C.tol, phi=fam.maps[(A, B)]).bijection
                    == classes[(A, B)] for A, B in itertools.product(range(k), repeat=2))
    return PicardRelation(C.labels, classes, {"reflexive": refl, "symmetric": symm,
                                              "transitive": trans, "total": total,
                                              "spectral_agreement": graphs_ok})


@dataclass
class BlockFunctor:
    """Object-bijective linear functor C -> D: ``maps[(A, B)]`` sends block
    coordinates of C_AB to block coordinates of D_{obj(A) obj(B)}."""

    source: CStarCategory
    target: CStarCategory
    obj: tuple[int, ...]
    maps: dict

    def __call__(self, A, B, x) -> np.ndarray:
        S, T = self.source, self.target
        return T.matrix(self.obj[A], self.obj[B], self.maps[(A, B)] @ S.coords(A, B, x))


def functor_from_unitary(C: CStarCategory, D: CStarCategory, U, obj) -> BlockFunctor:
    """x -> U x U^*, with ``obj`` the induced object bijection."""
    U = np.asarray(U, dtype=complex)
    maps = {}
    for A, B in itertools.product(range(C.n_objects), repeat=2):
        cols = [D.coords(obj[A], obj[B], U @ b @ U.conj().T) for b in C.block_basis(A, B)]
        maps[(A, B)] = np.array(cols).T.reshape(D.block_dim(obj[A], obj[B]), len(cols))
    return BlockFunctor(C, D, tuple(int(o) for o in obj), maps)


def picard_of_functor(C: CStarCategory, D: CStarCategory, functor: BlockFunctor,
                      tol: float | None = None, samples: int = 10, seed: int = 0) -> Report:
    """Check the *-functor axioms, then that Pic(F): [C_AB] -> [D_FA,FB] carries
    the Picard classes of C onto those of D (transported through the diagonal
    algebra isomorphisms induced by F)."""
    tol = C.tol if tol is None else tol
    rep = Report(tol=tol)
    k = C.n_objects
    if sorted(functor.obj) != list(range(D.n_objects)) or D.n_objects != k:
        raise CategoryError("functor must be bijective on objects")
    rng = np.random.default_rng([seed, 700])
    mult = star = lin = 0.0
    for A, B, Cc in itertools.product(range(k), repeat=3):
        for _ in range(samples):
            x, y = C.random_block_element(A, B, rng), C.random_block_element(B, Cc, rng)
            mult = max(mult, np.linalg.norm(functor(A, Cc, x @ y)
                                            - functor(A, B, x) @ functor(B, Cc, y), 2))
    for A, B in itertools.product(range(k), repeat=2):
        FA, FB = functor.obj[A], functor.obj[B]
        for _ in range(samples):
            x = C.random_block_element(A, B, rng)
            star = max(star, np.linalg.norm(functor(B, A, x.conj().T) - functor(A, B, x).conj().T, 2))
            fx = functor(A, B, x)
            pA, pB = D.projections[FA], D.projections[FB]
            lin = max(lin, np.linalg.norm(fx - pA @ fx @ pB, 2))
    rep.residuals.update(multiplicative=float(mult), involutive=float(star), block=float(lin))
    if not rep.passed:
        rep.details["functor"] = False
        return rep
    # induced isomorphisms of the diagonal algebras
    h = []
    for A in range(k):
        FA = functor.obj[A]
        pm = [0] * D.algebra(FA).dim
        n = C.algebra(A).dim
        if n != len(pm):
            raise CategoryError("functor does not preserve the diagonal algebra dimensions")
        for a in range(n):
            vals = D.values(FA, functor(A, A, C.point_projection(A, a)))
            for t in np.flatnonzero(np.abs(vals - 1.0) <= 1e3 * tol):
                pm[t] = a
        h.append(AlgebraMap(C.algebra(A), D.algebra(FA), tuple(pm)))
    PC, PD = picard_relation(C), picard_relation(D)
    ok = True
    mapping = {}
    for A, B in itertools.product(range(k), repeat=2):
        FA, FB = functor.obj[A], functor.obj[B]
        hA, hB = h[A].spectral_map(), h[B].spectral_map()
        transported = tuple(hB[PC.classes[(A, B)][hA.index(t)]] for t in range(len(hA)))
        mapping[(C.labels[A], C.labels[B])] = (D.labels[FA], D.labels[FB])
        ok &= transported == PD.classes[(FA, FB)]
    rep.details.update(functor=True, mapping=mapping, transported=ok)
    rep.residuals["transport"] = 0.0 if ok else float("inf")
    return rep


# ------------------------------------------------------------------ linking algebra


def linking_category(M: FiberedBimodule, tol: float = DEFAULT_TOL) -> CStarCategory:
    """The linking algebra [[A, M], [M*, B]] inside M_{m+n}.

    Spanned by the diagonal units of both corners and, for each fiber (a, b)
    of M, the matrix units E_{a, m+b} and E_{m+b, a}; p projects onto the
    first m coordinates and q = 1 - p.
    """
    cert = is_imprimitivity(M, tol)
    if not cert:
        from .bimodule import NotImprimitivityError
        raise NotImprimitivityError(cert.reason)
    m, n = M.left.dim, M.right.dim
    D = m + n

    def unit(i, j):
        E = np.zeros((D, D))
        E[i, j] = 1.0
        return E
    basis = [unit(i, i) for i in range(D)]
    for a, b in M.cells:
        basis += [unit(a, m + b), unit(m + b, a)]
    p = np.diag([1.0] * m + [0.0] * n)
    q = np.eye(D) - p
    return category_from_projections([p, q], ("P", "Q"), tol, basis)


def linking_report(M: FiberedBimodule, tol: float = DEFAULT_TOL) -> Report:
    L = linking_category(M, tol)
    rep = Report(tol=tol)
    D = L.ambient_dim
    p, q = L.projections
    rep.residuals["p_plus_q"] = float(np.max(np.abs(p + q - np.eye(D))))
    span = [L.ambient_basis[i] for i in range(len(L.ambient_basis))]
    X = _span_dim(span, tol)
    for name, e in (("span_CpC", p), ("span_CqC", q)):
        rep.residuals[name] = float(abs(_span_dim([x @ e @ y for x in span for y in span], tol) - X))
    # corners re-diagonalize to algebras with the spectra of A and B
    m = M.left.dim
    hA = _corner_map(L, 0, M.left, lambda a: a)
    hB = _corner_map(L, 1, M.right, lambda b: m + b)
    rep.residuals["corner_A"] = 0.0 if hA is not None else float("inf")
    rep.residuals["corner_B"] = 0.0 if hB is not None else float("inf")
    if hA is None or hB is None:
        return rep
    F = L.block(0, 1).fibered
    # relabel the corner bimodule over A and B through the corner isomorphisms
    twisted = twist_bimodule(F, hA, hB)
    iso = bimodule_isomorphic(M, twisted, tol)
    rep.details["iso"] = iso is not None
    rep.residuals["off_diagonal_iso"] = (max(iso.residuals(10).values())
                                         if iso is not None else float("inf"))
    return rep


def _corner_map(L, obj, alg: Algebra, coord):
    """AlgebraMap alg -> corner algebra matching point x to the unit E_{coord(x)}."""
    corner = L.algebra(obj)
    if corner.dim != alg.dim:
        return None
    pm = [None] * alg.dim
    for x in range(alg.dim):
        E = np.zeros((L.ambient_dim, L.ambient_dim))
        E[coord(x), coord(x)] = 1.0
        vals = L.values(obj, E)
        hit = np.flatnonzero(np.abs(vals - 1.0) <= 1e-6)
        if hit.size != 1 or np.max(np.abs(np.delete(vals, hit))) > 1e-6:
            return None
        # corner map sends alg -> corner: phi(f)(t) = f(pm[t])
        pm_t = int(hit[0])
        pm[pm_t] = x
    if any(v is None for v in pm):
        return None
    # twist_bimodule wants maps landing in the corner algebras: alg -> corner
    return AlgebraMap(alg, corner, tuple(pm))


# ------------------------------------------------------------------ tensor and dual coherence


def tensor_equals_composition(C: CStarCategory, tol: float | None = None, samples: int = 5,
                              seed: int = 0) -> Report:
    """Composition C_AB x C_BC -> C_AC against the Rieffel tensor product of the
    fibered blocks: inner products agree on sums of simple tensors, and the
    composition map is onto."""
    tol = C.tol if tol is None else tol
    rep = Report(tol=tol)
    k = C.n_objects
    rng = np.random.default_rng([seed, 800])
    iso_res, onto_res = 0.0, 0.0
    for A, B, Cc in itertools.product(range(k), repeat=3):
        FAB, FBC = C.block(A, B).fibered, C.block(B, Cc).fibered
        T = rieffel_tensor(FAB, FBC)
        prods = [x @ y for x in C.block_basis(A, B) for y in C.block_basis(B, Cc)]
        onto_res = max(onto_res, abs(_span_dim(prods, tol) - C.block_dim(A, Cc)))
        for _ in range(samples):
            u = np.zeros(T.dim, dtype=complex)
            v = np.zeros(T.dim, dtype=complex)
            Tu = np.zeros((C.ambient_dim,) * 2, dtype=complex)
            Tv = np.zeros_like(Tu)
            for _ in range(2):
                x, y = FAB.random_element(rng), FBC.random_element(rng)
                u += simple_tensor(FAB, FBC, T, x, y)
                Tu += C.fibered_to_matrix(A, B, x) @ C.fibered_to_matrix(B, Cc, y)
                x, y = FAB.random_element(rng), FBC.random_element(rng)
                v += simple_tensor(FAB, FBC, T, x, y)
                Tv += C.fibered_to_matrix(A, B, x) @ C.fibered_to_matrix(B, Cc, y)
            lhs = T.right_inner(u, v).values
            rhs = C.values(Cc, Tu.conj().T @ Tv)
            iso_res = max(iso_res, float(np.max(np.abs(lhs - rhs))))
    rep.residuals.update(isometry=iso_res, surjectivity=float(onto_res))
    return rep


def dual_equals_involution(C: CStarCategory, tol: float | None = None, samples: int = 5,
                           seed: int = 0) -> Report:
    tol = C.tol if tol is None else tol
    rep = Report(tol=tol)
    k = C.n_objects
    rng = np.random.default_rng([seed, 900])
    conj = isom = anti = iso = 0.0
    for A, B in itertools.product(range(k), repeat=2):
        for _ in range(samples):
            x = C.random_block_element(A, B, rng)
            lam = complex(rng.standard_normal(), rng.standard_normal())
            conj = max(conj, np.linalg.norm((lam * x).conj().T - np.conj(lam) * x.conj().T, 2))
            isom = max(isom, abs(np.linalg.norm(x.conj().T, 2) - np.linalg.norm(x, 2)))
            a = C.random_block_element(A, A, rng)
            b = C.random_block_element(B, B, rng)
            anti = max(anti, np.linalg.norm((a @ x @ b).conj().T
                                            - b.conj().T @ x.conj().T @ a.conj().T, 2))
        FBA = C.block(B, A).fibered
        dual = rieffel_dual(C.block(A, B).fibered)
        found = bimodule_isomorphic(FBA, dual, tol)
        iso = max(iso, max(found.residuals(samples, seed).values()) if found else float("inf"))
    rep.residuals.update(conjugate_linear=float(conj), isometric=float(isom),
                         anti_multiplicative=float(anti), dual_iso=float(iso))
    return rep
