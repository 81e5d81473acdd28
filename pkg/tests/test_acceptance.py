"""Acceptance suite: thirteen numbered criteria, one PASS/FAIL line each.

Run under pytest (lines go straight to the terminal) or as a script:
``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import functools
import itertools
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from cstarbimod import make_algebra
from cstarbimod.algebra import ideal_from_points, joint_diagonalize
from cstarbimod.bimodule import (canonical_phi, is_imprimitivity, make_fibered_bimodule,
                                 partition_of_unity, phi_matrix, quotient_bimodule,
                                 remix_partition)
from cstarbimod.category import (canonical_phi_family, dual_equals_involution, linking_report,
                                 make_point_functor, picard_relation, tensor_equals_composition,
                                 verify_functor_invariance)
from cstarbimod.generators import (gen_presented_algebra, gen_random_imprimitivity,
                                   random_category_instance)
from cstarbimod.spectral import verify_reconstruction

TOL = 1e-9


# ---------------------------------------------------------------- corpora


@functools.lru_cache(maxsize=None)
def corpus():
    """200 seeded imprimitivity bimodules, n <= 8, metric spread 10."""
    return [gen_random_imprimitivity(1 + s % 8, 10.0, seed=s) for s in range(200)]


@functools.lru_cache(maxsize=None)
def stress_corpus():
    return [gen_random_imprimitivity(1 + s % 8, 100.0, seed=1000 + s) for s in range(20)]


@functools.lru_cache(maxsize=None)
def certificates():
    return [canonical_phi(M, TOL, samples=20, seed=s)
            for s, M in enumerate(corpus() + stress_corpus())]


@functools.lru_cache(maxsize=None)
def categories():
    out = []
    for s in range(50):
        C = random_category_instance(1 + s % 5, 1 + (s // 5) % 4, seed=s).category
        out.append((C, canonical_phi_family(C)))
    return out


# ---------------------------------------------------------------- criteria
# each returns (passed, detail)


def criterion_1():
    worst = 0.0
    for s, M in enumerate(corpus()):
        pairs = partition_of_unity(M)
        ref = phi_matrix(M, pairs)
        other = phi_matrix(M, remix_partition(pairs, np.random.default_rng([s, 1])))
        worst = max(worst, float(np.max(np.abs(ref - other))),
                    certificates()[s].residuals["well_defined"])
    return worst <= TOL, f"max residual {worst:.2e} over {len(corpus())} instances"


def criterion_2():
    fe = inter = 0.0
    for s, M in enumerate(corpus()):
        Phi = certificates()[s].matrix
        rng = np.random.default_rng([s, 2])
        for _ in range(20):
            x, y = M.random_element(rng), M.random_element(rng)
            a = rng.standard_normal(M.left.dim) + 1j * rng.standard_normal(M.left.dim)
            fe = max(fe, float(np.max(np.abs(Phi @ M.left_inner(x, y).values
                                             - M.right_inner(y, x).values))))
            inter = max(inter, float(np.max(np.abs(M.left_act(a, x) - M.right_act(x, Phi @ a)))))
    return max(fe, inter) <= TOL, f"functional equation {fe:.2e}, intertwining {inter:.2e}"


def criterion_3():
    worst = max(c.residuals["alpha"] for c in certificates())
    n = len(certificates())
    return worst <= TOL, f"max |alpha - 1| {worst:.2e} over {n} instances (20 at spread 100)"


def criterion_4():
    worst = 0.0
    for s, M in enumerate(corpus() + stress_corpus()):
        rng = np.random.default_rng([s, 4])
        for _ in range(50):
            x = M.random_element(rng)
            worst = max(worst, abs(M.left_norm(x) - M.right_norm(x)))
    return worst <= TOL, f"max norm gap {worst:.2e}"


def criterion_5():
    fails, worst_phi, worst_raw = [], 0.0, 0.0
    presented = [gen_random_imprimitivity(n, 10.0, seed=2000 + n, presented=True)
                 for n in (2, 5, 8, 16, 32, 64)]
    insts = corpus() + stress_corpus() + presented
    for s, M in enumerate(insts):
        rep = verify_reconstruction(M, TOL, samples=10, seed=s)
        worst_phi = max(worst_phi, rep.phi_residual)
        if s < len(certificates()):
            worst_raw = max(worst_raw, max(certificates()[s].residuals.values()))
        if not (rep.passed and rep.phi_residual <= 1e-8 and rep.iso_residual <= 1e-8
                and rep.checks["round_trip_bijection"] and rep.checks["round_trip_iso"]):
            fails.append(s)
    ok = not fails and worst_raw <= 1e-8
    return ok, (f"{len(insts)} instances ({len(presented)} presented, D <= 64), "
                f"Phi {worst_phi:.2e}, raw {worst_raw:.2e}, failures {fails[:5]}")


def _oracle(dims):
    """Imprimitivity by brute force with identity metrics: the identity on all
    basis triples, then fullness on both sides by the span of inner products."""
    m, n = dims.shape
    rows = np.repeat(np.repeat(np.arange(m), n), dims.ravel())
    cols = np.repeat(np.tile(np.arange(n), m), dims.ravel())
    N = rows.size
    if N == 0:
        return False
    Ra = (rows[None, :] == np.arange(m)[:, None]).astype(float)  # (m, N) point masks
    Cb = (cols[None, :] == np.arange(n)[:, None]).astype(float)
    cell = (rows[:, None] == rows[None, :]) & (cols[:, None] == cols[None, :])
    Gc = np.eye(N) * cell
    # A<e_l, e_k>(a) = e_k^* G e_l on row a;  <e_k, e_l>_B(b) = e_k^* G e_l on column b
    Lt = Ra[:, None, :] * Gc.T[None] * Ra[:, :, None]  # Lt[a, l, k]
    Rt = Cb[:, :, None] * Gc[None] * Cb[:, None, :]  # Rt[b, k, l]
    # A<e_i, e_j> e_k = lcoef[i, j, k] e_k  and  e_i <e_j, e_k>_B = rcoef[i, j, k] e_i,
    # so the two vectors differ by |l - r| when i == k and by max(|l|, |r|) otherwise
    lcoef = np.einsum("aji,ak->ijk", Lt, Ra)
    rcoef = np.einsum("bjk,bi->ijk", Rt, Cb)
    same = np.eye(N, dtype=bool)[:, None, :]
    gap = np.where(same, np.abs(lcoef - rcoef), np.maximum(np.abs(lcoef), np.abs(rcoef)))
    if np.max(gap) > TOL:
        return False
    lrank = np.linalg.matrix_rank(Lt.reshape(m, -1).T)
    rrank = np.linalg.matrix_rank(Rt.reshape(n, -1).T)
    return bool(lrank == m and rrank == n)


def criterion_6():
    checked = agree = positives = 0
    for m, n in itertools.product((1, 2, 3), repeat=2):
        A = make_algebra([f"a{i}" for i in range(m)])
        B = make_algebra([f"b{i}" for i in range(n)])
        for pattern in itertools.product((0, 1, 2), repeat=m * n):
            dims = np.array(pattern, dtype=int).reshape(m, n)
            fast = bool(is_imprimitivity(make_fibered_bimodule(A, B, dims), TOL))
            slow = _oracle(dims)
            checked += 1
            agree += fast == slow
            positives += fast
    # the positives are exactly the permutation patterns: 1 + 2 + 6
    ok = agree == checked and positives == 9
    return ok, f"{agree}/{checked} patterns agree, {positives} imprimitivity"


def criterion_7():
    bad = []
    for s in range(50):
        n = 2 + s % 7
        M = gen_random_imprimitivity(n, 10.0, seed=5000 + s)
        rng = np.random.default_rng([s, 7])
        kept = rng.choice(n, size=int(rng.integers(1, n)), replace=False)
        Q, pa, pb = quotient_bimodule(M, ideal_from_points(M.left, kept))
        phi, phiq = canonical_phi(M).phi, canonical_phi(Q).phi
        restricted = tuple(pa.point_map.index(phi.point_map[q]) for q in pb.point_map)
        if not is_imprimitivity(Q) or phiq.point_map != restricted:
            bad.append(s)
    return not bad, f"50 quotients, failures {bad}"


def criterion_8():
    worst, bad = 0.0, []
    for s, (C, fam) in enumerate(categories()):
        r = fam.residuals
        exact = r["point_identity"] == r["point_inverse"] == r["point_composition"] == 0.0
        worst = max(worst, r["identity"], r["inverse"], r["composition"])
        pic = picard_relation(C, family=fam)
        laws = pic.laws
        if (C.ambient_dim > 20 or not exact or not fam.passed
                or not (laws["reflexive"] and laws["symmetric"] and laws["transitive"])):
            bad.append(s)
    return not bad and worst <= TOL, f"value-level {worst:.2e}, failures {bad}"


def criterion_9():
    worst, count = 0.0, 0
    for C, fam in categories():
        for obj in range(C.n_objects):
            for ch in range(C.algebra(obj).dim):
                omega = make_point_functor(C, obj, ch, family=fam)
                rep = verify_functor_invariance(C, omega, family=fam, samples=2)
                worst = max(worst, max(rep.residuals.values()))
                count += 1
    return worst <= TOL, f"{count} functors, max residual {worst:.2e}"


def criterion_10():
    worst = {}
    for C, _ in categories():
        for rep in (tensor_equals_composition(C, samples=2), dual_equals_involution(C, samples=2)):
            for k, v in rep.residuals.items():
                worst[k] = max(worst.get(k, 0.0), v)
    ok = max(worst.values()) <= TOL and worst["surjectivity"] == 0.0
    return ok, ", ".join(f"{k} {v:.2e}" for k, v in sorted(worst.items()))


def criterion_11():
    bad = []
    for s in range(20):
        M = corpus()[s * 10 + 3]
        rep = linking_report(M)
        if not (rep.passed and rep.details.get("iso") and rep.residuals["corner_A"] == 0.0
                and rep.residuals["corner_B"] == 0.0):
            bad.append(s)
    return not bad, f"20 bimodules, failures {bad}"


def criterion_12():
    worst, bad = 0.0, []
    for s in range(100):
        rng = np.random.default_rng([s, 12])
        D = int(rng.integers(1, 65))
        inst = gen_presented_algebra(D, int(rng.integers(1, D + 1)), int(rng.integers(1, 5)),
                                     seed=s, min_gap=1e-6, near_pair=s % 4 == 0)
        G = joint_diagonalize(inst.generators)
        worst = max(worst, G.reconstruction_residual())
        truth = sorted(zip(map(tuple, np.round(inst.joint_eigenvalues, 9)), inst.multiplicity))
        got = sorted(zip(map(tuple, np.round(G.eigenvalues, 9)), G.multiplicity))
        if (len(G.multiplicity) != len(inst.multiplicity)
                or [m for _, m in got] != [m for _, m in truth]):
            bad.append(s)
    return not bad and worst <= 1e-8, f"relative Frobenius {worst:.2e}, count failures {bad}"


_DRIVER = r"""
import contextlib, hashlib, io, json, sys
from cstarbimod.cli import main
for _ in range(int(sys.argv[1])):
    for argv in json.loads(sys.argv[2]):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            main(argv + ["--format", "json"])
        doc = json.loads(buf.getvalue())
        if isinstance(doc, dict):
            doc.pop("wall_time", None)
        print(hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest())
"""


def criterion_13(tmp_dir=None):
    import tempfile
    tmp = tmp_dir or tempfile.mkdtemp()
    bim = os.path.join(tmp, "bim.json")
    cat = os.path.join(tmp, "cat.json")
    from cstarbimod.cli import main
    import contextlib
    import io
    with contextlib.redirect_stdout(io.StringIO()):
        main(["gen", "imprimitivity", "--n", "5", "--seed", "7", "--present", "--out", bim])
        main(["gen", "category", "--objects", "3", "--points", "2", "--seed", "7", "--out", cat])
    commands = [["reconstruct", "--in", bim, "--seed", "3"],
                ["decompose", "--in", bim],
                ["cocycle", "--in", cat, "--seed", "3"],
                ["gen", "imprimitivity", "--n", "5", "--seed", "7"]]
    digests = []
    # ten runs split over two fresh interpreters with different hash seeds
    for hs in ("0", "1"):
        env = dict(os.environ, PYTHONHASHSEED=hs)
        out = subprocess.run([sys.executable, "-c", _DRIVER, "5", json.dumps(commands)],
                             capture_output=True, text=True, env=env, check=True).stdout
        digests.append(out.split())
    lines = digests[0] + digests[1]
    per_cmd = [set(lines[i::len(commands)]) for i in range(len(commands))]
    ok = len(lines) == 10 * len(commands) and all(len(d) == 1 for d in per_cmd)
    return ok, f"{len(lines) // len(commands)} runs x {len(commands)} commands, " \
               f"distinct digests {[len(d) for d in per_cmd]}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12,
            criterion_13]


def _line(i, ok, detail, dt):
    return f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  ({dt:.1f}s) {detail}"


@pytest.mark.parametrize("i", range(1, 14))
def test_criterion(i, capsys):
    t0 = time.perf_counter()
    ok, detail = CRITERIA[i - 1]()
    with capsys.disabled():
        print("\n" + _line(i, ok, detail, time.perf_counter() - t0))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, 1):
        t0 = time.perf_counter()
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail, time.perf_counter() - t0), flush=True)
    sys.exit(1 if failed else 0)
