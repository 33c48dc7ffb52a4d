"""Numerical tolerances shared across the package."""

# block operator algebra
INVERSE_ROUNDTRIP_TOL = 1e-10
MAX_DIAGONAL_COND = 1e12

# polytope geometry
REDUNDANCY_TOL = 1e-9
CONVEX_POSITION_TOL = 1e-9
RCI_HAUSDORFF_TOL = 1e-6
RPI_SLACK_TOL = 1e-8

# QP backend
QP_ABS_TOL = 1e-7
QP_REL_TOL = 1e-7
QP_INFEAS_TOL = 1e-8
QP_MAX_ITER = 200

# SLS synthesis
D_FLOOR = 1e-9
AFFINE_RESIDUAL_TOL = 1e-6
STRUCTURE_TOL = 1e-7
CERTIFICATE_TOL = 1e-6

# model validation
PD_EIG_FLOOR = 1e-10
