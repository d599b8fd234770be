"""Minimum conical hull anchoring by random planar projections.

The core entry point is :func:`dca`, which finds the ``k`` rows of ``Y``
whose conical hull covers ``X``.  Builders in :mod:`conehull.reductions`
cast NMF, subspace clustering, GMM, HMM and LDA learning as such problems,
and :mod:`conehull.postprocess` turns anchors back into model parameters.
"""

from .engine import (
    AnchorSet,
    DCAResult,
    SubproblemResult,
    SuccessDiagnostics,
    VoteTally,
    calibrate_c_hat,
    cone_membership,
    cross_section,
    dca,
    default_s,
    success_diagnostics,
)
from .exceptions import (
    ConeHullError,
    DegenerateClusteringWarning,
    DuplicateRayWarning,
    InfeasibleError,
    InsufficientDataError,
    InvalidPlanError,
    MatrixFormatError,
    NonIdentifiableError,
    RankDeficientError,
    UnderdeterminedError,
    ValidationError,
)
from .geometry import (
    AngleArray,
    ConicalHullProblem,
    Ensemble,
    ProjectionPlan,
    anchor_2d,
    brute_force_mch,
    draw_projection,
    project_angles,
)

__version__ = "0.1.0"
