"""Hilbert C*-bimodules over finite commutative C*-algebras.

Canonical isomorphisms of imprimitivity bimodules, their line-bundle
reconstruction, and commutative C*-categories built from projections.
"""
from .algebra import (DEFAULT_TOL, Algebra, AlgebraElement, AlgebraError, AlgebraMap,
                      AmbiguousSpectrumError, Character, GelfandData, Ideal, NonCommutingError,
                      NotNormalError, OutsideAlgebraError, characters, check_isomorphism,
                      element_arith, gelfand_transform, ideal_from_points, joint_diagonalize,
                      make_algebra, quotient_algebra)
from .bimodule import (BimoduleError, BimoduleIso, FiberedBimodule, ImprimitivityCertificate,
                       NotFullError, NotImprimitivityError, PhiCertificate, PresentedBimodule,
                       bimodule_isomorphic, canonical_phi, canonical_psi, decompose_presented,
                       is_imprimitivity, left_action_as_compacts, make_fibered_bimodule,
                       partition_of_unity, present, quotient_bimodule, rieffel_dual,
                       rieffel_tensor, symmetrization_check, validate_bimodule_axioms)
from .category import (CategoryError, CStarCategory, PhiFamily, PicardRelation, PointFunctor,
                       canonical_phi_family, category_from_projections, check_commutative,
                       check_full, dual_equals_involution, linking_category,
                       make_point_functor, picard_of_functor, picard_relation,
                       tensor_equals_composition, verify_functor_invariance)
from .hilbert_module import (FiberedModule, ModuleElement, ModuleOperator, endomorphism_adjoint,
                             finite_rank_span_dim, inner_product, is_full, make_fibered_module,
                             module_norm, quotient_module, theta, twist_right)
from .spectral import (SectionBimodule, SpectralData, reconstruction_iso, section_bimodule,
                       spectral_data, verify_reconstruction)

__version__ = "0.1.0"
