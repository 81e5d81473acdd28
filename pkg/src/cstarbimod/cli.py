"""Command-line front end.

Exit status: 0 when every check passes, 1 when a check fails, 2 on input errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import bimodule as bm
from . import category as cat
from .algebra import DEFAULT_TOL, AlgebraError, ideal_from_points
from .jsonio import (ParseError, bimodule_from_json, bimodule_to_json, canonical_digest,
                     category_from_json, category_to_json, load_json, presented_to_json)
from .spectral import verify_reconstruction

COMMANDS = ("validate", "imprimitivity", "phi", "decompose", "reconstruct", "tensor", "dual",
            "quotient", "category-check", "cocycle", "picard", "linking", "gen")


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    inputs: list = field(default_factory=list)
    tol: float = DEFAULT_TOL
    seed: int = 42
    samples: int = 50
    format: str = "text"
    out: str | None = None
    present: bool = False
    kept: list | None = None
    kind: str | None = None
    n: int = 4
    spread: float = 10.0
    objects: int = 3
    points: int = 3

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("--tol must be positive")
        if self.samples < 1:
            raise InputError("--samples must be at least 1")


@dataclass
class CliReport:
    command: str
    digest: str
    checks: list = field(default_factory=list)
    result: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add(self, name, residual, ok=None, tol=None):
        residual = float(residual)
        if ok is None:
            ok = residual <= tol
        self.checks.append({"name": name, "residual": residual, "pass": bool(ok)})

    def flag(self, name, ok):
        self.add(name, 0.0 if ok else math.inf, ok)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> dict:
        return _finite({"command": self.command, "digest": self.digest, "checks": self.checks,
                        "result": self.result, "pass": self.passed, "wall_time": self.wall_time})

    def to_text(self) -> str:
        lines = [f"command: {self.command}", f"digest:  {self.digest}"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']:<28} "
                         f"residual {c['residual']:.3e}")
        for k, v in self.result.items():
            if k not in ("bimodule", "category"):
                lines.append(f"  {k}: {json.dumps(_finite(v))}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        lines.append(f"wall_time: {self.wall_time:.3f}s")
        return "\n".join(lines)


def _finite(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else ("-inf" if f < 0 else "nan"))
    return obj


# ------------------------------------------------------------------ loading


def _load(path):
    try:
        return load_json(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _bimodule(doc, path, tol):
    try:
        return bimodule_from_json(doc, tol=tol)
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _fibered(doc, path, tol, report=None):
    M = _bimodule(doc, path, tol)
    if isinstance(M, bm.PresentedBimodule):
        try:
            M, _ = bm.decompose_presented(M, tol)
        except bm.BimoduleError as exc:
            if report is not None:
                report.add("decomposition", math.inf, False)
                report.result["reason"] = str(exc)
            return None
    return M


def _category(doc, path):
    try:
        return category_from_json(doc)
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _need_inputs(cfg, n):
    if len(cfg.inputs) != n:
        raise InputError(f"{cfg.command} needs exactly {n} --in argument(s)")


# ------------------------------------------------------------------ commands


def _cmd_validate(cfg, docs, rep):
    M = _bimodule(docs[0], cfg.inputs[0], cfg.tol)
    r = bm.validate_bimodule_axioms(M, cfg.tol, cfg.samples, cfg.seed)
    for name, res in r.residuals.items():
        rep.add(name, res, tol=cfg.tol)


def _cmd_imprimitivity(cfg, docs, rep):
    M = _bimodule(docs[0], cfg.inputs[0], cfg.tol)
    c = bm.is_imprimitivity(M, cfg.tol)
    rep.flag("left_full", c.left_full)
    rep.flag("right_full", c.right_full)
    rep.add("identity", c.identity_residual, c.identity_residual <= cfg.tol * bm._scale(M))
    rep.flag("graph", c.graph_test)
    rep.result.update(imprimitivity=c.imprimitivity,
                      bijection=list(c.bijection) if c.bijection else None,
                      witness=list(c.witness) if c.witness else None, reason=c.reason)


def _phi_checks(M, cfg, rep):
    cert = bm.is_imprimitivity(M, cfg.tol)
    rep.flag("imprimitivity", cert.imprimitivity)
    if not cert:
        rep.result["reason"] = cert.reason
        return None
    pc = bm.canonical_phi(M, cfg.tol, min(cfg.samples, 100), cfg.seed, certificate=cert)
    for name, res in pc.residuals.items():
        rep.add(name, res, tol=pc.tol)
    return pc


def _cmd_phi(cfg, docs, rep):
    M = _fibered(docs[0], cfg.inputs[0], cfg.tol, rep)
    if M is None:
        return
    pc = _phi_checks(M, cfg, rep)
    if pc is not None:
        rep.result["phi"] = {M.left.labels[p]: M.right.labels[q]
                             for q, p in enumerate(pc.phi.point_map)}
        rep.result["point_map"] = list(pc.phi.point_map)
        rep.result["alpha"] = [[z.real, z.imag] for z in pc.alpha.values]
        rep.result["beta"] = [[z.real, z.imag] for z in pc.beta.values]


def _cmd_decompose(cfg, docs, rep):
    P = _bimodule(docs[0], cfg.inputs[0], cfg.tol)
    if isinstance(P, bm.FiberedBimodule):
        P = bm.present(P)
    try:
        F, iso = bm.decompose_presented(P, cfg.tol)
    except bm.BimoduleError as exc:
        rep.add("decomposition", math.inf, False)
        rep.result["reason"] = str(exc)
        return
    scale = max(1.0, np.linalg.norm(iso.matrix, 2)) ** 2 * bm._scale(F)
    for name, res in iso.residuals(cfg.samples, cfg.seed).items():
        rep.add(f"iso_{name}", res, tol=cfg.tol * scale)
    rep.result["fiber_dims"] = F.dims.tolist()
    rep.result["bimodule"] = bimodule_to_json(F)


def _cmd_reconstruct(cfg, docs, rep):
    M = _bimodule(docs[0], cfg.inputs[0], cfg.tol)
    r = verify_reconstruction(M, cfg.tol, cfg.samples, cfg.seed)
    rep.flag("imprimitivity", r.imprimitivity)
    if r.imprimitivity:
        rep.add("phi_residual", r.phi_residual, tol=cfg.tol)
        rep.add("iso_residual", r.iso_residual, tol=cfg.tol)
        for name, ok in r.checks.items():
            rep.flag(name, ok)
    rep.result.update(r.to_json())
    if r.reason:
        rep.result["reason"] = r.reason
        rep.result["stage"] = r.stage


def _cmd_tensor(cfg, docs, rep):
    _need_inputs(cfg, 2)
    M = _fibered(docs[0], cfg.inputs[0], cfg.tol, rep)
    N = _fibered(docs[1], cfg.inputs[1], cfg.tol, rep)
    if M is None or N is None:
        return
    try:
        T = bm.rieffel_tensor(M, N)
    except AlgebraError as exc:
        raise InputError(str(exc)) from None
    rng = np.random.default_rng([cfg.seed, 1])
    worst = 0.0
    for _ in range(cfg.samples):
        x1, x2 = M.random_element(rng), M.random_element(rng)
        y1, y2 = N.random_element(rng), N.random_element(rng)
        lhs = T.right_inner(bm.simple_tensor(M, N, T, x1, y1), bm.simple_tensor(M, N, T, x2, y2))
        rhs = N.right_inner(y1, N.left_act(M.right_inner(x1, x2), y2))
        worst = max(worst, lhs.distance(rhs))
    rep.add("inner_product_formula", worst, tol=cfg.tol * bm._scale(T))
    rep.result["fiber_dims"] = T.dims.tolist()
    rep.result["bimodule"] = bimodule_to_json(T)


def _cmd_dual(cfg, docs, rep):
    M = _fibered(docs[0], cfg.inputs[0], cfg.tol, rep)
    if M is None:
        return
    Md = bm.rieffel_dual(M)
    rng = np.random.default_rng([cfg.seed, 2])
    anti = 0.0
    for _ in range(cfg.samples):
        x = M.random_element(rng)
        a = M.left.random_element(rng)
        b = M.right.random_element(rng)
        lhs = bm.dual_element(M, Md, M.right_act(M.left_act(a, x), b))
        rhs = Md.right_act(Md.left_act(b.adjoint(), bm.dual_element(M, Md, x)), a.adjoint())
        anti = max(anti, float(np.max(np.abs(lhs - rhs), initial=0.0)))
    rep.add("anti_multiplicative", anti, tol=cfg.tol * bm._scale(M))
    back = bm.bimodule_isomorphic(bm.rieffel_dual(Md), M, cfg.tol)
    rep.flag("double_dual_isomorphic", back is not None)
    rep.result["fiber_dims"] = Md.dims.tolist()
    rep.result["bimodule"] = bimodule_to_json(Md)


def _cmd_quotient(cfg, docs, rep):
    M = _fibered(docs[0], cfg.inputs[0], cfg.tol, rep)
    if M is None:
        return
    if cfg.kept is None:
        raise InputError("quotient needs --kept (comma-separated left spectrum indices or labels)")
    kept = []
    for tok in cfg.kept:
        if tok in M.left.labels:
            kept.append(M.left.labels.index(tok))
        else:
            try:
                kept.append(int(tok))
            except ValueError:
                raise InputError(f"--kept: unknown spectrum point {tok!r}") from None
    try:
        I = ideal_from_points(M.left, kept)
    except AlgebraError as exc:
        raise InputError(f"--kept: {exc}") from None
    cert = bm.is_imprimitivity(M, cfg.tol)
    rep.flag("imprimitivity", cert.imprimitivity)
    if not cert:
        rep.result["reason"] = cert.reason
        return
    try:
        Mq, pa, pb = bm.quotient_bimodule(M, I, cfg.tol)
    except bm.BimoduleError as exc:
        raise InputError(str(exc)) from None
    qc = bm.is_imprimitivity(Mq, cfg.tol)
    rep.flag("quotient_imprimitivity", qc.imprimitivity)
    phi = bm.canonical_phi(M, cfg.tol).phi
    phq = bm.canonical_phi(Mq, cfg.tol).phi
    # phi_q(pa(a)) = pb(phi(a)) at the point level
    restricted = tuple(pa.point_map.index(phi.point_map[q]) for q in pb.point_map)
    rep.flag("phi_restriction", restricted == phq.point_map)
    rep.result["fiber_dims"] = Mq.dims.tolist()
    rep.result["bimodule"] = bimodule_to_json(Mq)


def _cmd_category_check(cfg, docs, rep):
    C = _category(docs[0], cfg.inputs[0])
    full = cat.check_full(C, cfg.tol)
    rep.flag("full", full.details["full"])
    comm = cat.check_commutative(C, cfg.tol, seed=cfg.seed)
    for name, res in comm.residuals.items():
        rep.add(f"commutative[{name}]", res, tol=cfg.tol)
    rep.result["witness"] = list(full.details["witness"]) if full.details["witness"] else None


def _family(cfg, C, rep):
    try:
        return cat.canonical_phi_family(C, cfg.tol, samples=min(cfg.samples, 10), seed=cfg.seed)
    except cat.CategoryError as exc:
        rep.add("prerequisites", math.inf, False)
        rep.result["reason"] = str(exc)
        return None


def _cmd_cocycle(cfg, docs, rep):
    C = _category(docs[0], cfg.inputs[0])
    fam = _family(cfg, C, rep)
    if fam is None:
        return
    for name, res in fam.residuals.items():
        rep.add(name, res, tol=cfg.tol)
    rep.result["phi"] = {f"{C.labels[B]}<-{C.labels[A]}": list(m.point_map)
                         for (A, B), m in sorted(fam.maps.items())}


def _cmd_picard(cfg, docs, rep):
    C = _category(docs[0], cfg.inputs[0])
    fam = _family(cfg, C, rep)
    if fam is None:
        return
    P = cat.picard_relation(C, cfg.tol, family=fam)
    for name, ok in P.laws.items():
        rep.flag(name, ok)
    rep.result["classes"] = {f"{C.labels[A]},{C.labels[B]}": list(v)
                             for (A, B), v in sorted(P.classes.items())}


def _cmd_linking(cfg, docs, rep):
    M = _fibered(docs[0], cfg.inputs[0], cfg.tol, rep)
    if M is None:
        return
    cert = bm.is_imprimitivity(M, cfg.tol)
    rep.flag("imprimitivity", cert.imprimitivity)
    if not cert:
        rep.result["reason"] = cert.reason
        return
    r = cat.linking_report(M, cfg.tol)
    for name, res in r.residuals.items():
        rep.add(name, res, tol=cfg.tol)
    rep.result["category"] = category_to_json(cat.linking_category(M, cfg.tol))


HANDLERS = {"validate": _cmd_validate, "imprimitivity": _cmd_imprimitivity, "phi": _cmd_phi,
            "decompose": _cmd_decompose, "reconstruct": _cmd_reconstruct,
            "tensor": _cmd_tensor, "dual": _cmd_dual, "quotient": _cmd_quotient,
            "category-check": _cmd_category_check, "cocycle": _cmd_cocycle,
            "picard": _cmd_picard, "linking": _cmd_linking}


def gen_instance(cfg: RunConfig) -> dict:
    from .generators import gen_random_category, gen_random_imprimitivity
    if cfg.kind == "imprimitivity":
        if cfg.n < 1 or cfg.spread < 1:
            raise InputError("gen imprimitivity needs --n >= 1 and --spread >= 1")
        M = gen_random_imprimitivity(cfg.n, cfg.spread, cfg.seed, presented=cfg.present)
        return presented_to_json(M) if cfg.present else bimodule_to_json(M)
    if cfg.kind == "category":
        if cfg.objects < 1 or cfg.points < 1:
            raise InputError("gen category needs --objects >= 1 and --points >= 1")
        return category_to_json(gen_random_category(cfg.objects, cfg.points, cfg.seed))
    raise InputError("gen needs a kind: imprimitivity or category")


def run(cfg: RunConfig) -> tuple[CliReport | dict, int]:
    """Execute one command; returns (report or generated instance, exit status)."""
    if cfg.command == "gen":
        return gen_instance(cfg), 0
    if cfg.command not in HANDLERS:
        raise InputError(f"unknown command {cfg.command!r}")
    if not cfg.inputs:
        raise InputError(f"{cfg.command} needs --in PATH")
    docs = [_load(p) for p in cfg.inputs]
    if cfg.command != "tensor":
        _need_inputs(cfg, 1)
    digest = canonical_digest(docs[0] if len(docs) == 1 else docs)
    rep = CliReport(cfg.command, digest)
    t0 = time.perf_counter()
    HANDLERS[cfg.command](cfg, docs, rep)
    rep.wall_time = time.perf_counter() - t0
    return rep, 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cstarbimod", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("kind", nargs="?", choices=("imprimitivity", "category"),
                   help="instance kind for gen")
    p.add_argument("--in", dest="inputs", action="append", default=[], metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--present", action="store_true", help="gen: wrap as a presented bimodule")
    p.add_argument("--kept", help="quotient: comma-separated kept left points")
    p.add_argument("--n", type=int, default=4, help="gen imprimitivity: spectrum size")
    p.add_argument("--spread", type=float, default=10.0, help="gen imprimitivity: metric spread")
    p.add_argument("--objects", type=int, default=3, help="gen category: object count")
    p.add_argument("--points", type=int, default=3, help="gen category: spectrum size")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = RunConfig(command=args.command, inputs=args.inputs, tol=args.tol, seed=args.seed,
                        samples=args.samples, format=args.format, out=args.out,
                        present=args.present,
                        kept=[t.strip() for t in args.kept.split(",") if t.strip()]
                        if args.kept is not None else None,
                        kind=args.kind, n=args.n, spread=args.spread,
                        objects=args.objects, points=args.points)
        out, status = run(cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, np.linalg.LinAlgError) as exc:
        # anything the schema checks let through but the numerics reject
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 2
    if isinstance(out, CliReport):
        text = (json.dumps(out.to_json(), indent=2, sort_keys=True) if cfg.format == "json"
                else out.to_text())
    else:
        text = json.dumps(out, indent=2, sort_keys=True)
    if cfg.out:
        try:
            with open(cfg.out, "w") as fh:
                fh.write(text + "\n")
        except OSError as exc:
            print(f"error: {cfg.out}: {exc.strerror}", file=sys.stderr)
            return 2
    else:
        print(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
