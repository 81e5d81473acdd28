import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cstarbimod import (AlgebraError, AlgebraMap, AmbiguousSpectrumError,
                        NonCommutingError, NotNormalError, OutsideAlgebraError, characters,
                        check_isomorphism, element_arith, gelfand_transform, ideal_from_points,
                        joint_diagonalize, make_algebra, quotient_algebra)
from cstarbimod.generators import gen_presented_algebra

from conftest import random_unitary


def test_make_algebra_examples():
    assert make_algebra(["p"]).dim == 1
    A = make_algebra(["a", "b", "c"])
    assert A.dim == 3 and len(characters(A)) == 3
    with pytest.raises(AlgebraError):
        make_algebra(["a", "a"])
    with pytest.raises(AlgebraError):
        make_algebra([])


def test_element_arith_examples(C2):
    x, y = C2.element([1, 1j]), C2.element([1, -1j])
    assert np.allclose(element_arith(x, y, "mul").values, [1, 1])
    assert element_arith(C2.element([3, -4j]), None, "norm") == 4
    assert not element_arith(C2.element([2, -1]), None, "is_positive")
    assert element_arith(C2.element([2, 1e-12]), None, "is_positive")
    with pytest.raises(AlgebraError):
        element_arith(x, make_algebra(["u", "v"]).unit(), "add")


def test_element_is_immutable(C2):
    x = C2.unit()
    with pytest.raises(AttributeError):
        x.values = None
    with pytest.raises(ValueError):
        x.values[0] = 3


def test_ideal_membership_brute_force(C3):
    I = ideal_from_points(C3, {0, 2})
    members = [e for e in C3.basis() if I.contains(e)]
    assert [int(np.argmax(e.values)) for e in members] == [1]
    assert ideal_from_points(C3, range(3)).vanishing == frozenset()
    assert not ideal_from_points(C3, []).is_proper
    with pytest.raises(AlgebraError):
        ideal_from_points(C3, [5])


def test_quotient_algebra(C3, rng):
    Q, proj = quotient_algebra(C3, ideal_from_points(C3, range(3)))
    assert Q == C3 and proj == AlgebraMap.identity(C3)
    Q, proj = quotient_algebra(C3, ideal_from_points(C3, {0, 2}))
    assert Q.labels == ("p", "r")
    assert np.allclose(proj(C3.unit()).values, 1)
    for _ in range(10):
        a, b = C3.random_element(rng), C3.random_element(rng)
        assert proj(a * b).distance(proj(a) * proj(b)) == 0
        assert proj(a.adjoint()).distance(proj(a).adjoint()) == 0
    with pytest.raises(AlgebraError):
        quotient_algebra(C3, ideal_from_points(C3, []))


def test_quotient_kernel_is_ideal(C3):
    I = ideal_from_points(C3, {1})
    _, proj = quotient_algebra(C3, I)
    for e in C3.basis():
        assert I.contains(e) == (proj(e).norm() == 0)


def test_characters_multiplicative_exactly(C3):
    for chi in characters(C3):
        for e in C3.basis():
            for f in C3.basis():
                assert chi(e * f) == chi(e) * chi(f)
        assert [chi(e) for e in C3.basis()] == [float(k == chi.point) for k in range(3)]


def test_check_isomorphism(C2):
    assert check_isomorphism(AlgebraMap.identity(C2))
    assert not check_isomorphism(AlgebraMap(C2, C2, (0, 0)))
    perm = np.random.default_rng(3).permutation(7)
    A = make_algebra([str(i) for i in range(7)])
    assert check_isomorphism(AlgebraMap(A, A, tuple(perm)))


def test_algebra_map_compose_and_inverse(rng):
    A = make_algebra(list("abcde"))
    f = AlgebraMap(A, A, tuple(rng.permutation(5)))
    g = AlgebraMap(A, A, tuple(rng.permutation(5)))
    a = A.random_element(rng)
    assert g.compose(f)(a).distance(g(f(a))) == 0
    assert f.inverse()(f(a)).distance(a) == 0


def test_joint_diagonalize_identity():
    G = joint_diagonalize([np.eye(4)])
    assert G.multiplicity == (4,)


def test_joint_diagonalize_diag():
    G = joint_diagonalize([np.diag([3.0, 1.0, 2.0])])
    assert np.allclose(G.eigenvalues[:, 0], [1, 2, 3])


def test_joint_diagonalize_recovers_construction(rng):
    U = random_unitary(3, rng)
    g1 = U @ np.diag([1, 1, 2]) @ U.conj().T
    g2 = U @ np.diag([5, 6, 6]) @ U.conj().T
    G = joint_diagonalize([g1, g2])
    assert np.allclose(G.eigenvalues, [[1, 5], [1, 6], [2, 6]])
    assert G.reconstruction_residual() < 1e-12
    B = G.basis
    assert np.allclose(B.conj().T @ B, np.eye(3))


def test_joint_diagonalize_errors():
    with pytest.raises(NotNormalError):
        joint_diagonalize([np.array([[0, 1], [0, 0]])])
    X = np.diag([1.0, 2.0])
    Y = np.array([[0, 1.0], [1.0, 0]])
    with pytest.raises(NonCommutingError) as exc:
        joint_diagonalize([X, Y])
    assert exc.value.pair == (0, 1) and exc.value.residual == pytest.approx(1.0)


def test_joint_diagonalize_ambiguous_chain():
    # values chained within tolerance: each neighbour gap is below atol, the spread is not
    tol = 1e-9
    d = np.diag([0.0, 0.8e-9, 1.6e-9, 1.0])
    with pytest.raises(AmbiguousSpectrumError):
        joint_diagonalize([d], tol)


def test_characters_of_presented_vs_single_matrix(rng):
    inst = gen_presented_algebra(12, 4, 3, seed=5)
    G = joint_diagonalize(inst.generators)
    # independent oracle: eigenvalues of one random Hermitian combination
    c = rng.standard_normal(3)
    H = sum(w * (g + g.conj().T) / 2 for w, g in zip(c, inst.generators))
    ev = np.sort(np.linalg.eigvalsh(H))
    want = np.sort(np.repeat([c @ v.real for v in G.eigenvalues], G.multiplicity))
    assert np.allclose(ev, want, atol=1e-9)
    assert len(characters(G)) == 4


def test_gelfand_transform(rng):
    inst = gen_presented_algebra(6, 3, 2, seed=9)
    G = joint_diagonalize(inst.generators)
    assert np.allclose(gelfand_transform(G, np.eye(6)).values, 1)
    for i, g in enumerate(inst.generators):
        assert np.allclose(gelfand_transform(G, g).values, G.eigenvalues[:, i])
    prod = inst.generators[0] @ inst.generators[1]
    assert np.allclose(gelfand_transform(G, prod).values,
                       G.eigenvalues[:, 0] * G.eigenvalues[:, 1])
    with pytest.raises(OutsideAlgebraError):
        gelfand_transform(G, random_unitary(6, rng))
    a = G.algebra.random_element(rng)
    assert np.allclose(gelfand_transform(G, G.embed(a)).values, a.values)


def test_joint_diagonalize_deterministic():
    inst = gen_presented_algebra(10, 5, 2, seed=1)
    g1 = joint_diagonalize(inst.generators)
    g2 = joint_diagonalize(inst.generators)
    assert np.array_equal(g1.eigenvalues, g2.eigenvalues)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 12), gens=st.integers(1, 3),
       data=st.data())
def test_reconstruction_property(seed, D, gens, data):
    n = data.draw(st.integers(1, D))
    inst = gen_presented_algebra(D, n, gens, seed=seed)
    G = joint_diagonalize(inst.generators, 1e-9)
    assert G.reconstruction_residual() <= 10 * 1e-9
    assert len(G.multiplicity) == n
    truth = inst.joint_eigenvalues
    assert np.allclose(np.sort_complex(G.eigenvalues[:, 0]), np.sort_complex(truth[:, 0]))


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                     min_size=1, max_size=6))
def test_positivity_matches_definition(vals):
    A = make_algebra([str(i) for i in range(len(vals))])
    a = A.element(vals)
    assert (a * a.adjoint()).is_positive()
    assert a.norm() == pytest.approx(max(abs(v) for v in vals), rel=1e-15)
