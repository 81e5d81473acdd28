import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cstarbimod import (AlgebraError, AlgebraMap, ideal_from_points, make_algebra,
                        make_fibered_bimodule)
from cstarbimod.bimodule import (BimoduleError, DecompositionError, NotFullError,
                                 NotImprimitivityError, PresentedBimodule, bijection_bimodule,
                                 bimodule_isomorphic, brute_force_imprimitivity, canonical_phi,
                                 canonical_psi, decompose_presented, dual_element,
                                 identity_bimodule, is_imprimitivity, left_action_as_compacts,
                                 partition_of_unity, present, quotient_bimodule,
                                 random_change_of_basis, remix_partition, phi_matrix,
                                 rieffel_dual, rieffel_tensor, simple_tensor,
                                 symmetrization_check, validate_bimodule_axioms)
from cstarbimod.generators import gen_fibered, gen_random_imprimitivity


def C(n, prefix="p"):
    return make_algebra([f"{prefix}{i}" for i in range(n)])


def swap(n=2, metrics=None):
    A = C(n, "a")
    return bijection_bimodule(A, C(n, "b"), [(i + 1) % n for i in range(n)], metrics)


# ----- construction and axioms


def test_make_fibered_examples():
    A = C(2)
    M = identity_bimodule(A)
    assert M.cells == ((0, 0), (1, 1))
    S = make_fibered_bimodule(A, A, {(0, 1): 1, (1, 0): 1})
    assert S.cells == ((0, 1), (1, 0))
    with pytest.raises(BimoduleError):
        make_fibered_bimodule(A, A, {(0, 2): 1})
    with pytest.raises(Exception):
        make_fibered_bimodule(A, A, {(0, 0): 1}, {(0, 0): np.array([[-1.0]])})
    with pytest.raises(BimoduleError):
        make_fibered_bimodule(A, A, [[1, -1], [0, 1]])


def test_axioms_fibered_exact(rng):
    M = gen_fibered(C(3), C(2), [[1, 2], [0, 1], [3, 0]], 10, rng)
    rep = validate_bimodule_axioms(M)
    assert rep.passed, rep.residuals
    assert rep.residuals["associativity"] <= 1e-15


def test_axioms_presented_round_trip(rng):
    M = gen_random_imprimitivity(4, 10, seed=3)
    P = present(M, random_change_of_basis(M.dim, rng))
    rep = validate_bimodule_axioms(P, tol=1e-9)
    assert rep.passed, rep.failures()


def test_axioms_detect_perturbed_idempotent(rng):
    M = gen_random_imprimitivity(3, 1, seed=1)
    P = present(M)
    Pl = np.array(P.left_idem)
    E = np.zeros_like(Pl[0])
    i, j = np.flatnonzero(np.diag(Pl[0]).real == 0)[:2]
    E[i, j] = 1e-3  # both coordinates outside range(P0): (P0 + E)^2 - (P0 + E) = -E
    Pl[0] = Pl[0] + E
    bad = PresentedBimodule(P.left, P.right, Pl, P.right_idem, P.right_gram, P.left_gram)
    rep = validate_bimodule_axioms(bad)
    assert not rep.passed
    assert "left_idempotent" in rep.failures()
    assert rep.residuals["left_idempotent"] == pytest.approx(1e-3, rel=1e-6)


# ----- imprimitivity


def test_imprimitivity_examples():
    assert is_imprimitivity(swap())
    A = C(2)
    fat = make_fibered_bimodule(A, A, {(0, 0): 2, (1, 1): 1})
    cert = is_imprimitivity(fat)
    assert not cert and not cert.identity_test and cert.witness is not None
    assert "dimension 2" in cert.reason
    row = make_fibered_bimodule(A, A, {(0, 0): 1, (0, 1): 1})
    assert not is_imprimitivity(row)
    assert not brute_force_imprimitivity(fat) and not brute_force_imprimitivity(row)


def test_imprimitivity_presented_input(rng):
    M = gen_random_imprimitivity(5, 10, seed=8, presented=True)
    cert = is_imprimitivity(M)
    assert cert and cert.bijection is not None


def _support_patterns():
    for m in (1, 2):
        for n in (1, 2):
            for dims in itertools.product(range(3), repeat=m * n):
                yield m, n, np.array(dims).reshape(m, n)


def test_brute_force_small_exhaustive():
    # the full exhaustive sweep lives in the acceptance suite
    for m, n, dims in _support_patterns():
        M = make_fibered_bimodule(C(m), C(n, "q"), dims)
        assert bool(is_imprimitivity(M)) == brute_force_imprimitivity(M)


# ----- partitions and phi


def test_partition_of_unity():
    M = identity_bimodule(C(3))
    pairs = partition_of_unity(M)
    for j, (w, z) in enumerate(pairs):
        assert np.array_equal(w, np.eye(3)[j]) and np.array_equal(w, z)
    N = gen_random_imprimitivity(6, 10, seed=2)
    for side, alg in (("right", N.right), ("left", N.left)):
        pairs = partition_of_unity(N, side)
        inner = N.right_inner if side == "right" else N.left_inner
        total = sum(inner(w, z).values for w, z in pairs)
        assert len(pairs) == 6 and np.allclose(total, 1, atol=1e-12)
    empty = make_fibered_bimodule(C(2), C(2, "q"), {(0, 0): 1, (1, 0): 1})
    with pytest.raises(NotFullError, match="q1"):
        partition_of_unity(empty, "right")


def test_remix_is_partition(rng):
    M = gen_random_imprimitivity(5, 10, seed=4)
    pairs = remix_partition(partition_of_unity(M), rng)
    assert np.allclose(sum(M.right_inner(w, z).values for w, z in pairs), 1)


def test_phi_identity_bimodule():
    # phi of the algebra over itself is the identity map
    A = C(4)
    cert = canonical_phi(identity_bimodule(A))
    assert cert.phi == AlgebraMap.identity(A)
    assert cert.passed


def test_phi_swap(rng):
    M = swap(2)
    cert = canonical_phi(M)
    a = M.left.element([2.0, 5j])
    # oracle: a.x = x.phi(a) for x in the fiber (0, 1) forces phi(a)(1) = a(0)
    assert np.allclose(cert.phi(a).values, [5j, 2.0])
    assert cert.phi.point_map == (1, 0)


def test_phi_unital_and_alpha_beta():
    # phi is unital; alpha is the unit
    M = gen_random_imprimitivity(7, 100, seed=6)
    cert = canonical_phi(M)
    assert cert.passed, cert.residuals
    assert cert.phi(M.left.unit()).distance(M.right.unit()) == 0
    assert cert.alpha.distance(M.left.unit()) <= 1e-9 * 100
    assert cert.beta.distance(M.right.unit()) <= 1e-9 * 100


def test_phi_well_defined_across_seeds():
    M = gen_random_imprimitivity(6, 10, seed=12)
    base = canonical_phi(M, seed=0).matrix
    for s in range(1, 5):
        other = phi_matrix(M, remix_partition(partition_of_unity(M), np.random.default_rng(s)))
        assert np.max(np.abs(base - other)) <= 1e-9


def test_phi_rejects_non_imprimitivity():
    A = C(2)
    with pytest.raises(NotImprimitivityError):
        canonical_phi(make_fibered_bimodule(A, A, {(0, 0): 2, (1, 1): 1}))


def test_psi_inverse():
    M = gen_random_imprimitivity(6, 10, seed=13)
    assert canonical_psi(M) == canonical_phi(M).phi.inverse()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_phi_properties(n, seed):
    M = gen_random_imprimitivity(n, 10, seed=seed)
    cert = canonical_phi(M, seed=seed)
    assert cert.passed, cert.residuals
    assert cert.phi.spectral_map() == M.support_bijection()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_norm_coincidence(n, seed):
    M = gen_random_imprimitivity(n, 10, seed=seed)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        x = M.random_element(rng) * rng.uniform(0.1, 3)
        assert abs(M.left_norm(x) - M.right_norm(x)) <= 1e-9


def test_left_action_as_compacts():
    A = C(3)
    rep = left_action_as_compacts(identity_bimodule(A))
    assert rep.passed and rep.details["image_dim"] == 3
    rep = left_action_as_compacts(gen_random_imprimitivity(4, 10, seed=1))
    assert rep.passed and rep.details["image_dim"] == rep.details["theta_span_dim"] == 4
    empty = make_fibered_bimodule(A, C(3, "q"), {(0, 0): 1, (1, 1): 1})
    rep = left_action_as_compacts(empty)
    assert not rep.passed and not rep.details["injective"]


# ----- tensor and dual


def test_tensor_unit_law():
    M = gen_random_imprimitivity(5, 10, seed=21)
    T = rieffel_tensor(M, identity_bimodule(M.right))
    iso = bimodule_isomorphic(M, T)
    assert iso is not None and max(iso.residuals().values()) <= 1e-9


def test_swap_tensor_swap_is_identity():
    A = C(2)
    S = make_fibered_bimodule(A, A, {(0, 1): 1, (1, 0): 1})
    assert np.array_equal(rieffel_tensor(S, S).dims, np.eye(2, dtype=int))


def test_tensor_composes_bijections(rng):
    A, B, D = C(5, "a"), C(5, "b"), C(5, "d")
    f, g = rng.permutation(5), rng.permutation(5)
    T = rieffel_tensor(bijection_bimodule(A, B, f), bijection_bimodule(B, D, g))
    assert T.support_bijection() == tuple(int(g[f[a]]) for a in range(5))


def test_tensor_inner_product_formula(rng):
    A, B, D = C(3, "a"), C(2, "b"), C(3, "d")
    M = gen_fibered(A, B, [[1, 2], [1, 0], [0, 1]], 10, rng)
    N = gen_fibered(B, D, [[1, 0, 2], [1, 1, 0]], 10, rng)
    T = rieffel_tensor(M, N)
    for _ in range(10):
        x1, x2 = M.random_element(rng), M.random_element(rng)
        y1, y2 = N.random_element(rng), N.random_element(rng)
        lhs = T.right_inner(simple_tensor(M, N, T, x1, y1), simple_tensor(M, N, T, x2, y2))
        rhs = N.right_inner(y1, N.left_act(M.right_inner(x1, x2), y2))
        assert lhs.distance(rhs) <= 1e-9
        b = B.random_element(rng)
        # balanced: (x b) ⊗ y = x ⊗ (b y)
        assert np.allclose(simple_tensor(M, N, T, M.right_act(x1, b), y1),
                           simple_tensor(M, N, T, x1, N.left_act(b, y1)))


def test_tensor_associativity():
    M = gen_random_imprimitivity(4, 10, seed=1)
    N = gen_random_imprimitivity(4, 10, seed=2, left=M.right)
    P = gen_random_imprimitivity(4, 10, seed=3, left=N.right)
    L = rieffel_tensor(rieffel_tensor(M, N), P)
    R = rieffel_tensor(M, rieffel_tensor(N, P))
    iso = bimodule_isomorphic(L, R)
    assert iso is not None and max(iso.residuals().values()) <= 1e-9


def test_tensor_algebra_mismatch():
    with pytest.raises(AlgebraError):
        rieffel_tensor(swap(2), swap(2))


def test_dual_examples(rng):
    A = C(3)
    I = identity_bimodule(A)
    assert rieffel_dual(I) == I
    M = gen_random_imprimitivity(5, 10, seed=7)
    assert rieffel_dual(rieffel_dual(M)) == M
    inv = tuple(int(i) for i in np.argsort(M.support_bijection()))
    assert rieffel_dual(M).support_bijection() == inv


def test_dual_anti_multiplicative(rng):
    M = gen_fibered(C(2, "a"), C(3, "b"), [[1, 2, 0], [0, 1, 1]], 10, rng)
    Md = rieffel_dual(M)
    for _ in range(10):
        x, y = M.random_element(rng), M.random_element(rng)
        a, b = M.left.random_element(rng), M.right.random_element(rng)
        c = complex(*rng.standard_normal(2))
        lhs = dual_element(M, Md, M.right_act(M.left_act(a, x), b))
        rhs = Md.right_act(Md.left_act(b.adjoint(), dual_element(M, Md, x)), a.adjoint())
        assert np.allclose(lhs, rhs)
        assert np.allclose(dual_element(M, Md, c * x), np.conj(c) * dual_element(M, Md, x))
        # inner products swap sides: <ix, iy>_A = A<x, y> and B<ix, iy> = <x, y>_B
        ix, iy = dual_element(M, Md, x), dual_element(M, Md, y)
        assert Md.right_inner(ix, iy).distance(M.left_inner(x, y)) <= 1e-9
        assert Md.left_inner(ix, iy).distance(M.right_inner(x, y)) <= 1e-9


def test_dual_of_tensor():
    M = gen_random_imprimitivity(4, 10, seed=31)
    N = gen_random_imprimitivity(4, 10, seed=32, left=M.right)
    lhs = rieffel_dual(rieffel_tensor(M, N))
    rhs = rieffel_tensor(rieffel_dual(N), rieffel_dual(M))
    assert bimodule_isomorphic(lhs, rhs) is not None


# ----- symmetrization, quotients, isomorphisms


def test_symmetrization():
    rep = symmetrization_check(identity_bimodule(C(3)))
    assert rep.passed and rep.details["right_equal"] and rep.details["left_equal"]
    rep = symmetrization_check(swap(3, [1.0, 2.0, 0.5]))
    assert rep.passed and max(rep.residuals.values()) <= 1e-12
    assert rep.details["right_equal"] and rep.details["left_equal"]


def test_quotient_examples():
    M = swap(3, [1.0, 4.0, 9.0])
    Q, pa, pb = quotient_bimodule(M, ideal_from_points(M.left, range(3)))
    assert Q == M
    Q, pa, pb = quotient_bimodule(M, ideal_from_points(M.left, {0, 2}))
    # left points 0 and 2 go to right points 1 and 0
    assert pa.point_map == (0, 2) and pb.point_map == (0, 1)
    assert is_imprimitivity(Q)
    phi = canonical_phi(M).phi
    phiq = canonical_phi(Q).phi
    restricted = tuple(pa.point_map.index(phi.point_map[q]) for q in pb.point_map)
    assert phiq.point_map == restricted
    with pytest.raises(BimoduleError):
        quotient_bimodule(M, ideal_from_points(M.left, []))


def test_isomorphic_examples():
    M = gen_random_imprimitivity(4, 10, seed=41)
    iso = bimodule_isomorphic(M, M)
    assert np.allclose(iso.matrix, np.eye(M.dim))
    S = swap(2)
    assert bimodule_isomorphic(S, identity_bimodule_over(S)) is None
    N = bijection_bimodule(M.left, M.right, M.support_bijection(),
                           [4 * M.metrics[c][0, 0].real for c in sorted(M.cells)])
    iso = bimodule_isomorphic(M, N)
    assert np.allclose(np.diag(iso.matrix), 0.5)
    assert max(iso.residuals().values()) <= 1e-9
    with pytest.raises(AlgebraError):
        bimodule_isomorphic(M, bijection_bimodule(C(4, "u"), M.right, range(4)))


def identity_bimodule_over(S):
    return make_fibered_bimodule(S.left, S.right, np.eye(2, dtype=int))


def test_decompose_presented(rng):
    M = gen_fibered(C(3, "a"), C(3, "b"), [[1, 2, 0], [0, 1, 1], [2, 0, 1]], 10, rng)
    P = present(M, random_change_of_basis(M.dim, rng))
    F, iso = decompose_presented(P)
    assert np.array_equal(F.dims, M.dims)
    assert max(iso.residuals(20).values()) <= 1e-9
    back = bimodule_isomorphic(F, M)
    assert back is not None and max(back.residuals().values()) <= 1e-9
    F0, iso0 = decompose_presented(present(M))
    # diagonal idempotents: the iso only reorders coordinates
    assert np.array_equal(F0.dims, M.dims)
    mag = np.abs(iso0.matrix)
    assert np.allclose(mag.sum(axis=0), 1) and np.allclose(mag.sum(axis=1), 1)
    assert np.allclose(mag, mag.round())


def test_decompose_rejects_noncommuting(rng):
    M = gen_random_imprimitivity(3, 1, seed=0)
    P = present(M)
    U = random_change_of_basis(3, rng)
    Q = np.array([U @ q @ np.linalg.inv(U) for q in P.right_idem])
    bad = PresentedBimodule(P.left, P.right, P.left_idem, Q, P.right_gram, P.left_gram)
    with pytest.raises(DecompositionError):
        decompose_presented(bad)
