"""JSON serialization.

Complex scalars are ``[re, im]`` pairs (a bare real number is also accepted on
input); matrices are row-major nested lists of scalars.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

from .algebra import DEFAULT_TOL, Algebra, AlgebraError, GelfandData, joint_diagonalize


class ParseError(ValueError):
    """Malformed input; ``location`` is a JSON path such as ``fibers[2].metric``."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


def _where(loc, key):
    if isinstance(key, int):
        return f"{loc}[{key}]"
    return f"{loc}.{key}" if loc else key


def scalar_from_json(v, loc="") -> complex:
    if isinstance(v, bool):
        raise ParseError(loc, "expected a number or [re, im]")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in v):
        return complex(v[0], v[1])
    raise ParseError(loc, "expected a number or [re, im]")


def scalar_to_json(z) -> list[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def matrix_from_json(rows, loc="", shape=None) -> np.ndarray:
    if not isinstance(rows, list) or any(not isinstance(r, list) for r in rows):
        raise ParseError(loc, "expected a matrix as a list of rows")
    if rows and len({len(r) for r in rows}) != 1:
        raise ParseError(loc, "matrix rows have different lengths")
    out = np.array([[scalar_from_json(v, f"{loc}[{i}][{j}]") for j, v in enumerate(r)]
                    for i, r in enumerate(rows)], dtype=complex).reshape(len(rows), -1)
    if shape is not None and out.shape != tuple(shape):
        raise ParseError(loc, f"expected shape {tuple(shape)}, got {out.shape}")
    return out


def matrix_to_json(M) -> list:
    M = np.asarray(M)
    return [[scalar_to_json(z) for z in row] for row in M]


def _get(d, key, loc, kind=None):
    if not isinstance(d, dict):
        raise ParseError(loc, "expected an object")
    if key not in d:
        raise ParseError(_where(loc, key), "missing field")
    v = d[key]
    if kind is not None and (not isinstance(v, kind) or isinstance(v, bool)):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ParseError(_where(loc, key), f"expected {name}")
    return v


def canonical_digest(doc: Any) -> str:
    """sha256 of the canonical JSON encoding (sorted keys, no whitespace)."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# algebras


def algebra_from_json(d, loc="", seed: int = 0):
    """Returns an Algebra, or GelfandData for a presented algebra."""
    kind = _get(d, "type", loc, str)
    if kind == "diagonal":
        labels = _get(d, "labels", loc, list)
        try:
            return Algebra(tuple(labels))
        except AlgebraError as exc:
            raise ParseError(_where(loc, "labels"), str(exc)) from None
    if kind == "presented":
        D = _get(d, "dim", loc, int)
        gens = _get(d, "generators", loc, list)
        tol = float(d.get("tol", DEFAULT_TOL))
        mats = [matrix_from_json(g, f"{_where(loc, 'generators')}[{i}]", (D, D))
                for i, g in enumerate(gens)]
        if not mats:
            raise ParseError(_where(loc, "generators"), "need at least one generator")
        return joint_diagonalize(mats, tol, seed)
    raise ParseError(_where(loc, "type"), f"unknown algebra type {kind!r}")


def algebra_to_json(A) -> dict:
    if isinstance(A, GelfandData):
        return A.to_json()
    return A.to_json()


# --------------------------------------------------------------------------
# bimodules


def bimodule_from_json(d, loc="", tol: float = DEFAULT_TOL):
    """Fibered (``fibers`` key) or presented (``left_idem`` key) bimodule."""
    from .bimodule import BimoduleError, PresentedBimodule, make_fibered_bimodule
    from .hilbert_module import ModuleError
    if not isinstance(d, dict):
        raise ParseError(loc, "expected an object")
    A = _plain_algebra(_get(d, "left", loc), _where(loc, "left"))
    B = _plain_algebra(_get(d, "right", loc), _where(loc, "right"))
    if "left_idem" in d:
        D = _get(d, "dim", loc, int)
        arrays = {}
        for key, n in (("left_idem", A.dim), ("right_idem", B.dim),
                       ("right_gram", B.dim), ("left_gram", A.dim)):
            lst = _get(d, key, loc, list)
            if len(lst) != n:
                raise ParseError(_where(loc, key), f"expected {n} matrices, got {len(lst)}")
            arrays[key] = np.array([matrix_from_json(m, f"{_where(loc, key)}[{i}]", (D, D))
                                    for i, m in enumerate(lst)]).reshape(n, D, D)
        try:
            return PresentedBimodule(A, B, **arrays)
        except BimoduleError as exc:
            raise ParseError(loc, str(exc)) from None
    fibers = _get(d, "fibers", loc, list)
    dims, mets = {}, {}
    for i, f in enumerate(fibers):
        fl = f"{_where(loc, 'fibers')}[{i}]"
        a = _index(_get(f, "a", fl), A, _where(fl, "a"))
        b = _index(_get(f, "b", fl), B, _where(fl, "b"))
        dim = _get(f, "dim", fl, int)
        if dim < 0:
            raise ParseError(_where(fl, "dim"), "dimension must be nonnegative")
        if (a, b) in dims:
            raise ParseError(fl, f"duplicate fiber ({a}, {b})")
        dims[(a, b)] = dim
        if "metric" in f and dim:
            mets[(a, b)] = matrix_from_json(f["metric"], _where(fl, "metric"), (dim, dim))
    try:
        return make_fibered_bimodule(A, B, dims, mets, tol)
    except (BimoduleError, ModuleError) as exc:
        raise ParseError(_where(loc, "fibers"), str(exc)) from None


def _plain_algebra(d, loc) -> Algebra:
    if isinstance(d, list):
        try:
            return Algebra(tuple(d))
        except AlgebraError as exc:
            raise ParseError(loc, str(exc)) from None
    A = algebra_from_json(d, loc)
    if isinstance(A, GelfandData):
        raise ParseError(loc, "bimodule algebras must be given in diagonal form")
    return A


def _index(v, A: Algebra, loc) -> int:
    """A spectrum point given by label or by index."""
    if isinstance(v, str):
        if v not in A.labels:
            raise ParseError(loc, f"unknown spectrum label {v!r}")
        return A.labels.index(v)
    if isinstance(v, int) and not isinstance(v, bool):
        if not 0 <= v < A.dim:
            raise ParseError(loc, f"spectrum index {v} out of range")
        return v
    raise ParseError(loc, "expected a label or an index")


def bimodule_to_json(M) -> dict:
    return {"left": M.left.to_json(), "right": M.right.to_json(),
            "fibers": [{"a": M.left.labels[a], "b": M.right.labels[b], "dim": int(M.dims[a, b]),
                        "metric": matrix_to_json(M.metrics[(a, b)])} for (a, b) in M.cells]}


def presented_to_json(P) -> dict:
    return {"left": P.left.to_json(), "right": P.right.to_json(), "dim": P.dim,
            "left_idem": [matrix_to_json(m) for m in P.left_idem],
            "right_idem": [matrix_to_json(m) for m in P.right_idem],
            "right_gram": [matrix_to_json(m) for m in P.right_gram],
            "left_gram": [matrix_to_json(m) for m in P.left_gram]}


# --------------------------------------------------------------------------
# categories


def category_from_json(d, loc=""):
    from .category import CategoryError, category_from_projections
    D = _get(d, "ambient_dim", loc, int)
    objs = _get(d, "objects", loc, list)
    labels, projs = [], []
    for i, o in enumerate(objs):
        ol = f"{_where(loc, 'objects')}[{i}]"
        labels.append(str(_get(o, "label", ol)))
        projs.append(matrix_from_json(_get(o, "projection", ol), _where(ol, "projection"), (D, D)))
    tol = float(d.get("tol", DEFAULT_TOL))
    algebra = None
    if "algebra" in d:
        alist = d["algebra"]
        if not isinstance(alist, list):
            raise ParseError(_where(loc, "algebra"), "expected a list of matrices")
        algebra = [matrix_from_json(m, f"{_where(loc, 'algebra')}[{i}]", (D, D))
                   for i, m in enumerate(alist)]
    try:
        return category_from_projections(projs, labels, tol=tol, algebra=algebra)
    except CategoryError as exc:
        raise ParseError(loc or "objects", str(exc)) from None


def category_to_json(C) -> dict:
    out = {"ambient_dim": C.ambient_dim, "tol": C.tol,
           "objects": [{"label": lab, "projection": matrix_to_json(p)}
                       for lab, p in zip(C.labels, C.projections)]}
    if C.ambient_basis is not None:
        out["algebra"] = [matrix_to_json(m) for m in C.ambient_basis]
    return out


def load_json(path) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
