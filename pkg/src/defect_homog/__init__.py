"""Semilinear two-point boundary value problems with oscillating periodic
coefficients and localized defects: effective coefficients, integral-equation
solvers, an independent finite-element oracle, and rate experiments."""

from .coeff import (
    PiecewiseMatrixField,
    ScaledCoefficient,
    check_Mr_membership,
    constant_field,
    defect_field,
    effective_matrix_M,
    ellipticity,
    eval_field,
    homogenized_matrix_A0,
    periodic_field,
    zero_defect,
)
from .gridfn import GridFunction, Mesh, build_mesh, sup_norm, w1inf_seminorm
from .model import NonlinearModel, make_model
from .operators import (
    ProblemInstance,
    alpha_estimate,
    apply_F0,
    apply_F_eps,
    assemble_Fprime,
    gamma_0,
    gamma_eps,
    make_instance,
)

__all__ = [
    "GridFunction",
    "Mesh",
    "NonlinearModel",
    "PiecewiseMatrixField",
    "ProblemInstance",
    "ScaledCoefficient",
    "alpha_estimate",
    "apply_F0",
    "apply_F_eps",
    "assemble_Fprime",
    "build_mesh",
    "check_Mr_membership",
    "constant_field",
    "defect_field",
    "effective_matrix_M",
    "ellipticity",
    "eval_field",
    "gamma_0",
    "gamma_eps",
    "homogenized_matrix_A0",
    "make_instance",
    "make_model",
    "periodic_field",
    "sup_norm",
    "w1inf_seminorm",
    "zero_defect",
]
