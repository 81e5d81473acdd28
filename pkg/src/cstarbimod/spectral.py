"""Imprimitivity bimodules as sections of Hermitian line bundles.

Over C(X_A) and C(X_B) with X_A, X_B finite, an imprimitivity bimodule is
determined by a bijection R: X_A -> X_B and a one-dimensional Hermitian fiber
over each point (a, R(a)) of its graph.  This module extracts that data, builds
the section bimodule back from it and certifies the isomorphism between the two.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import DEFAULT_TOL, Algebra, AlgebraMap
from .bimodule import (BimoduleIso, FiberedBimodule, NotImprimitivityError, PresentedBimodule,
                       SelfTestError, bijection_bimodule, canonical_phi, decompose_presented,
                       is_imprimitivity)


@dataclass(frozen=True)
class SpectralData:
    """Bijection ``bijection[a] = R(a)`` and line-bundle data over its graph.

    Graph point k is (k, R(k)); ``metrics[k]`` is the fiber metric scalar and
    ``frames[k]`` a unit frame: metrics[k] * |frames[k]|**2 == 1.
    """

    left: Algebra
    right: Algebra
    bijection: tuple[int, ...]
    metrics: tuple[float, ...]
    frames: tuple[complex, ...]

    def __post_init__(self):
        n = self.left.dim
        if self.right.dim != n or sorted(self.bijection) != list(range(n)):
            raise ValueError("bijection must be a permutation between spectra of equal size")
        if len(self.metrics) != n or len(self.frames) != n:
            raise ValueError("need one metric and one frame per graph point")
        if min(self.metrics) <= 0:
            raise ValueError("fiber metrics must be positive")

    @property
    def graph(self) -> tuple[tuple[int, int], ...]:
        return tuple((a, b) for a, b in enumerate(self.bijection))

    def pi_A(self, k: int) -> int:
        return self.graph[k][0]

    def pi_B(self, k: int) -> int:
        return self.graph[k][1]

    def inverse_bijection(self) -> tuple[int, ...]:
        inv = [0] * len(self.bijection)
        for a, b in enumerate(self.bijection):
            inv[b] = a
        return tuple(inv)

    def frame_residual(self) -> float:
        return float(max(abs(g * abs(e) ** 2 - 1.0) for g, e in zip(self.metrics, self.frames)))


@dataclass
class SectionBimodule:
    """Sections of the line bundle, as a fibered bimodule living on the graph."""

    data: SpectralData
    bimodule: FiberedBimodule

    def coefficients(self, s) -> np.ndarray:
        """Section coefficients against the frames: s(k) = c_k * frames[k]."""
        d = self.data
        vals = np.array([self.bimodule.fiber(s, c)[0] for c in self.bimodule.cells])
        order = [a for (a, _) in self.bimodule.cells]
        c = np.empty(len(order), dtype=complex)
        c[order] = vals
        g, e = np.array(d.metrics), np.array(d.frames)
        return g * np.conj(e) * c

    def from_coefficients(self, c) -> np.ndarray:
        d = self.data
        return self.bimodule.element({(a, b): [c[a] * d.frames[a]] for a, b in d.graph})


def _as_fibered(M, tol):
    if isinstance(M, PresentedBimodule):
        return decompose_presented(M, tol)
    return M, None


def spectral_data(M, tol: float = DEFAULT_TOL, frame_seed: int | None = None,
                  phi: AlgebraMap | None = None) -> SpectralData:
    """Extract R and the line bundle; the support graph and the pullback of
    the inverse canonical isomorphism are both computed and must agree.

    ``frame_seed=None`` selects the positive-real gauge; a seed picks random
    frame phases instead.  A canonical isomorphism already certified for M
    may be passed as ``phi`` to skip recomputing it.
    """
    F, _ = _as_fibered(M, tol)
    cert = is_imprimitivity(F, tol)
    if not cert:
        raise NotImprimitivityError(cert.reason)
    if phi is None:
        phi = canonical_phi(F, tol, certificate=cert).phi
    via_phi = phi.inverse().point_map
    if tuple(via_phi) != tuple(cert.bijection):
        raise SelfTestError("support graph and canonical isomorphism disagree")
    bij = cert.bijection
    g = tuple(float(F.metrics[(a, b)][0, 0].real) for a, b in enumerate(bij))
    if frame_seed is None:
        phases = np.ones(len(g))
    else:
        phases = np.exp(2j * np.pi * np.random.default_rng(frame_seed).uniform(size=len(g)))
    frames = tuple(complex(p / np.sqrt(x)) for p, x in zip(phases, g))
    return SpectralData(F.left, F.right, tuple(bij), g, frames)


def section_bimodule(S: SpectralData) -> SectionBimodule:
    """f.s(x, y) = f(x) s(x, y),  s.g(x, y) = s(x, y) g(y)."""
    return SectionBimodule(S, bijection_bimodule(S.left, S.right, S.bijection, S.metrics))


def reconstruction_iso(M, tol: float = DEFAULT_TOL, data: SpectralData | None = None,
                       decomposition=None) -> BimoduleIso:
    """Phi: M -> sections, sending each fiber vector to its section (frame
    coefficient times frame).  Presented inputs are decomposed first unless
    ``decomposition`` already holds the (fibered, iso) pair."""
    F, dec = decomposition if decomposition is not None else _as_fibered(M, tol)
    S = data if data is not None else spectral_data(F, tol)
    sec = section_bimodule(S)
    T = sec.bimodule
    mat = np.zeros((T.dim, F.dim), dtype=complex)
    for a, b in S.graph:
        if F.dims[a, b] != 1:
            raise NotImprimitivityError(f"fiber ({a}, {b}) is not one-dimensional")
        e = S.frames[a]
        # x -> c e with c = g conj(e) x
        mat[T.offsets[(a, b)], F.offsets[(a, b)]] = S.metrics[a] * np.conj(e) * e
    if dec is not None:
        mat = mat @ dec.matrix
    return BimoduleIso(M, T, AlgebraMap.identity(F.left), AlgebraMap.identity(F.right), mat)


def diagram_maps(S: SpectralData, phi: AlgebraMap) -> dict:
    """Index-map realization of the proof's diagram.

    The spectrum of the graph algebra {(a, phi(a))} is indexed by left points
    k; alpha-dot and beta-dot are its two legs computed from phi, while S
    sends k to the graph point (k, R(k)).
    """
    n = S.left.dim
    alpha_dot = tuple(range(n))
    beta_dot = tuple(phi.inverse().point_map)
    S_map = tuple(S.graph[k] for k in range(n))
    return {"alpha_dot": alpha_dot, "beta_dot": beta_dot, "S": S_map,
            "pi_A_S": tuple(S.pi_A(k) for k in range(n)),
            "pi_B_S": tuple(S.pi_B(k) for k in range(n)),
            "R_alpha": tuple(S.bijection[alpha_dot[k]] for k in range(n))}


def check_diagram(S: SpectralData, phi: AlgebraMap) -> bool:
    d = diagram_maps(S, phi)
    return (d["pi_A_S"] == d["alpha_dot"] and d["pi_B_S"] == d["beta_dot"]
            and d["R_alpha"] == d["beta_dot"])


@dataclass
class ReconstructionReport:
    imprimitivity: bool
    bijection: list | None = None
    metrics: list | None = None
    phi_residual: float = float("inf")
    iso_residual: float = float("inf")
    tol: float = DEFAULT_TOL
    reason: str = ""
    stage: str = ""
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.imprimitivity and self.phi_residual <= self.tol
                and self.iso_residual <= self.tol and all(self.checks.values()))

    def to_json(self) -> dict:
        return {"imprimitivity": self.imprimitivity, "bijection": self.bijection,
                "metrics": self.metrics, "phi_residual": self.phi_residual,
                "iso_residual": self.iso_residual, "pass": self.passed}


def verify_reconstruction(M, tol: float = DEFAULT_TOL, samples: int = 50,
                          seed: int = 0) -> ReconstructionReport:
    try:
        F, dec = _as_fibered(M, tol)
    except ValueError as exc:
        return ReconstructionReport(False, tol=tol, reason=str(exc), stage="decomposition")
    cert = is_imprimitivity(F, tol)
    if not cert:
        return ReconstructionReport(False, tol=tol, reason=cert.reason, stage="imprimitivity")
    pc = canonical_phi(F, tol, samples=min(samples, 20), seed=seed, certificate=cert)
    S = spectral_data(F, tol, phi=pc.phi)
    iso = reconstruction_iso(M, tol, S, (F, dec))
    scale = max(1.0, max(S.metrics))
    if dec is not None:
        scale *= max(1.0, np.linalg.norm(dec.matrix, 2)) ** 2
    iso_res = max(iso.residuals(samples, seed).values()) / scale
    if dec is not None:
        iso_res = max(iso_res, max(dec.residuals(samples, seed + 1).values()) / scale)
    # round trip: sections -> spectral data reproduces R and the bimodule up to iso
    sec = section_bimodule(S).bimodule
    S2 = spectral_data(sec, tol)
    from .bimodule import bimodule_isomorphic
    back = bimodule_isomorphic(sec, F, tol)
    checks = {"round_trip_bijection": S2.bijection == S.bijection,
              "round_trip_iso": back is not None
              and max(back.residuals(10, seed + 2).values()) <= tol * scale,
              "diagram": check_diagram(S, pc.phi),
              "frames": S.frame_residual() <= tol}
    phi_res = max(pc.residuals.values())
    return ReconstructionReport(True, list(S.bijection), list(S.metrics),
                                float(phi_res / max(1.0, pc.tol / tol)), float(iso_res),
                                tol, checks=checks)
