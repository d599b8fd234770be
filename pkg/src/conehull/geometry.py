"""Dense-matrix primitives, random projections and the planar cone solver.

Everything here is a pure function of its inputs.  Random draws are derived
from ``(seed, t)`` so any sub-problem can be regenerated independently of the
others and of the thread that runs it.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from .exceptions import (
    DuplicateRayWarning,
    InfeasibleError,
    InvalidPlanError,
    ValidationError,
)

TOL_ZERO = 1e-12
TOL_FEAS = 1e-8
TOL_DUPLICATE = 1e-10
TOL_ANGLE = 1e-12

TWO_PI = 2.0 * np.pi


def as_matrix(a, name="matrix"):
    """Return ``a`` as a C-contiguous 2-D float64 array with finite entries."""
    m = np.array(a, dtype=np.float64, order="C", copy=True)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return m


def normalize_rows(M):
    """Scale rows to unit norm; zero rows stay zero."""
    norms = np.linalg.norm(M, axis=1)
    out = np.zeros_like(M)
    nz = norms > 0
    out[nz] = M[nz] / norms[nz, None]
    return out


def duplicate_rays(Y, tol=TOL_DUPLICATE):
    """Pairs ``(i, j)``, ``i < j``, of rows of ``Y`` lying on the same ray.

    Rows are compared after normalization; the chord length between unit
    vectors is used as the angle (they agree to O(angle^3)).  Rows are sorted
    along a fixed random direction and only neighbours in that order are
    compared, so a group of g coinciding rows is reported as a chain of g-1
    pairs and the check stays O(m log m).
    """
    Yn = normalize_rows(np.asarray(Y, dtype=np.float64))
    m = Yn.shape[0]
    if m < 2:
        return []
    r = np.random.default_rng(0x5EED).standard_normal(Yn.shape[1])
    order = np.lexsort((np.arange(m), Yn @ r))
    S = Yn[order]
    nz = np.linalg.norm(S, axis=1) > 0
    close = (np.linalg.norm(S[1:] - S[:-1], axis=1) < tol) & nz[1:] & nz[:-1]
    pairs = [(int(min(order[a], order[a + 1])), int(max(order[a], order[a + 1])))
             for a in np.flatnonzero(close)]
    return sorted(pairs)


@dataclass(frozen=True)
class ConicalHullProblem:
    """Find ``k`` rows of ``Y`` whose conical hull covers every row of ``X``.

    ``self_referential`` marks the ``Y is X`` case (NMF, LDA, SC), for which
    the planar solver reduces to picking the extreme angles.
    """

    X: np.ndarray
    Y: np.ndarray
    k: int
    self_referential: bool = False

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        Y = X if self.self_referential else as_matrix(self.Y, "Y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.shape[1] != Y.shape[1]:
            raise ValidationError(
                f"X has {X.shape[1]} columns but Y has {Y.shape[1]}")
        k = int(self.k)
        if not 1 <= k <= Y.shape[0]:
            raise ValidationError(f"k={self.k} must lie in [1, {Y.shape[0]}]")
        object.__setattr__(self, "k", k)
        if not self.self_referential:
            dups = duplicate_rays(Y)
            if dups:
                i, j = dups[0]
                warnings.warn(
                    f"{len(dups)} pair(s) of Y rows share a ray (first: {i}, {j}); "
                    "ties resolve to the lowest index",
                    DuplicateRayWarning, stacklevel=3)

    @classmethod
    def self_ref(cls, X, k):
        return cls(X, X, k, self_referential=True)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


class Ensemble(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIT_AXES = "unit_axes"
    DATA_ROWS = "data_rows"
    SPARSE_SIGN = "sparse_sign"


@dataclass(frozen=True)
class ProjectionPlan:
    """Which random matrices to draw, how many, and from which seed."""

    s: int
    d: int = 2
    ensemble: Ensemble = Ensemble.GAUSSIAN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ensemble", Ensemble(self.ensemble))
        if int(self.s) < 1:
            raise InvalidPlanError(f"sub-problem count s={self.s} must be >= 1")
        if int(self.d) < 1:
            raise InvalidPlanError(f"projected dimension d={self.d} must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidPlanError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "seed", int(self.seed))

    def rng(self, t):
        return np.random.default_rng([self.seed, int(t)])


def draw_projection(plan, t, p, data=None):
    """Random projection matrix ``Phi`` (p x d) for sub-problem ``t``.

    ``data`` is required for the ``DATA_ROWS`` ensemble, whose columns are
    distinct random rows of it.
    """
    if not 0 <= t < plan.s:
        raise InvalidPlanError(f"sub-problem index t={t} outside [0, {plan.s})")
    d = plan.d
    if d > p:
        raise InvalidPlanError(f"projected dimension d={d} exceeds ambient p={p}")
    rng = plan.rng(t)
    ens = plan.ensemble
    if ens is Ensemble.GAUSSIAN:
        return rng.standard_normal((p, d))
    if ens is Ensemble.UNIT_AXES:
        phi = np.zeros((p, d))
        phi[rng.choice(p, size=d, replace=False), np.arange(d)] = 1.0
        return phi
    if ens is Ensemble.SPARSE_SIGN:
        u = rng.random((p, d))
        return np.where(u < 1 / 6, -1.0, np.where(u >= 5 / 6, 1.0, 0.0))
    if data is None:
        raise InvalidPlanError("the data_rows ensemble needs a data matrix")
    data = np.asarray(data, dtype=np.float64)
    if data.shape[1] != p:
        raise InvalidPlanError("data rows do not live in the ambient dimension")
    if data.shape[0] < d:
        raise InvalidPlanError("fewer data rows than projected dimensions")
    return data[rng.choice(data.shape[0], size=d, replace=False)].T.copy()


@dataclass(frozen=True)
class AngleArray:
    """Polar angles in [0, 2*pi) of projected rows, plus a degenerate mask.

    Angles are measured from the first projected coordinate axis.  Rows whose
    projection is shorter than ``tol_zero`` have no direction; they are
    flagged and their ``values`` entry is meaningless.
    """

    values: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def degenerate_indices(self):
        return np.flatnonzero(self.degenerate)


def angles_of(P, tol_zero=TOL_ZERO):
    """Angles of rows of an already projected (n x 2) matrix."""
    P = np.asarray(P, dtype=np.float64)
    vals = np.mod(np.arctan2(P[:, 1], P[:, 0]), TWO_PI)
    # mod can round a tiny negative angle up to exactly 2*pi
    vals[vals >= TWO_PI] = 0.0
    degenerate = np.hypot(P[:, 0], P[:, 1]) < tol_zero
    return AngleArray(vals, degenerate)


def project_angles(M, phi, tol_zero=TOL_ZERO):
    """Angles of the rows of ``M @ phi`` for a two-column ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != 2:
        raise InvalidPlanError(f"phi must have 2 columns, got shape {phi.shape}")
    M = np.asarray(M, dtype=np.float64)
    if M.shape[1] != phi.shape[0]:
        raise ValidationError(
            f"M has {M.shape[1]} columns but phi has {phi.shape[0]} rows")
    return angles_of(M @ phi, tol_zero)


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, TWO_PI) - np.pi


def circular_mean(values):
    """Direction of the summed unit vectors, or None if they cancel."""
    c = np.cos(values).sum()
    s = np.sin(values).sum()
    if math.hypot(c, s) <= 1e-12 * max(len(values), 1):
        return None
    return math.atan2(s, c)


def pointed_frame(reference):
    """Rotation offset putting the reference set's circular mean at zero.

    Returns ``(mu, lo, hi)`` where ``lo``/``hi`` bound the rotated reference
    angles, or ``None`` when the reference directions are not contained in an
    open half-plane (span >= pi).
    """
    mu = circular_mean(reference)
    if mu is None:
        return None
    r = wrap_angle(reference - mu)
    lo, hi = float(r.min()), float(r.max())
    if hi - lo >= np.pi:
        return None
    return mu, lo, hi


class Anchor2D(NamedTuple):
    anchors: tuple
    discarded: bool
    coverage_violation: bool


def anchor_2d(x_angles, y_angles=None):
    """Minimal conical hull of a planar instance, in closed form.

    The generator just past the largest X angle and the one just short of the
    smallest X angle are returned (distances measured around the circle, so
    a non-pointed projected Y is handled too).  Angles are first rotated so that the
    circular mean of X sits at zero; if X then spans pi or more its cone is
    not pointed and the sub-problem is discarded.  Passing ``y_angles=None``
    means Y is X, in which case the answer is simply the arg-min and arg-max.
    """
    self_ref = y_angles is None
    if self_ref:
        y_angles = x_angles
    xv = x_angles.values[~x_angles.degenerate]
    if xv.size == 0:
        return Anchor2D((), True, False)
    frame = pointed_frame(xv)
    if frame is None:
        return Anchor2D((), True, False)
    mu, lo, hi = frame

    ry = wrap_angle(y_angles.values - mu)
    valid = ~y_angles.degenerate
    if self_ref:
        idx = np.flatnonzero(valid)
        sub = ry[idx]
        picks = {int(idx[np.argmin(sub)]), int(idx[np.argmax(sub)])}
        return Anchor2D(tuple(sorted(picks)), False, False)

    # angular distance counter-clockwise past the last X ray and clockwise
    # before the first; a generator more than pi away bounds nothing.
    # Rays within TOL_ANGLE of the boundary count as on it (rounding).
    d_above = np.maximum(np.mod(ry - hi + TOL_ANGLE, TWO_PI) - TOL_ANGLE, 0.0)
    d_below = np.maximum(np.mod(lo - ry + TOL_ANGLE, TWO_PI) - TOL_ANGLE, 0.0)
    above = np.where(valid & (d_above < np.pi), d_above, np.inf)
    below = np.where(valid & (d_below < np.pi), d_below, np.inf)
    picks = set()
    violation = False
    for gap in (above, below):
        i = int(np.argmin(gap))
        if np.isfinite(gap[i]):
            picks.add(i)
        else:
            violation = True
    if not picks:
        return Anchor2D((), True, True)
    return Anchor2D(tuple(sorted(picks)), False, violation)


def nnls(A, b, maxiter=None):
    """Nonnegative least squares ``min ||A x - b||, x >= 0``.

    Thin wrapper over the Lawson-Hanson active-set solver in SciPy.  The
    iteration cap defaults to ``10 * A.shape[1]``.  Returns ``(x, rnorm,
    converged)``; on hitting the cap ``x`` is the clipped least-squares
    solution.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if maxiter is None:
        maxiter = max(10 * A.shape[1], 1)
    try:
        x, rnorm = _scipy_nnls(A, b, maxiter=maxiter)
        return x, float(rnorm), True
    except RuntimeError:
        x = np.clip(np.linalg.lstsq(A, b, rcond=None)[0], 0.0, None)
        return x, float(np.linalg.norm(A @ x - b)), False


def cone_feasible(X, G, tol=TOL_FEAS):
    """True iff every row of ``X`` is a nonnegative combination of rows of ``G``.

    Rows of both are normalized first so the residual tolerance is scale
    free.  When ``G`` has full row rank the representation is unique and
    plain least squares settles the question; otherwise each row goes through
    NNLS.
    """
    Xn = normalize_rows(np.asarray(X, dtype=np.float64))
    Xn = Xn[np.linalg.norm(Xn, axis=1) > 0]
    if Xn.shape[0] == 0:
        return True
    Gn = normalize_rows(np.asarray(G, dtype=np.float64))
    Gn = Gn[np.linalg.norm(Gn, axis=1) > 0]
    if Gn.shape[0] == 0:
        return False
    coef, _, rank, sv = np.linalg.lstsq(Gn.T, Xn.T, rcond=None)
    if rank == Gn.shape[0] and sv[-1] > 1e-10 * sv[0]:
        resid = np.linalg.norm(Gn.T @ coef - Xn.T, axis=0)
        return bool(np.all(resid < tol) and np.all(coef >= -tol))
    for x in Xn:
        _, r, _ = nnls(Gn.T, x)
        if r >= tol:
            return False
    return True


def _looseness(Xn, Gn):
    """Sum over generators of their angle to the closest covered point."""
    cos = np.clip(Gn @ Xn.T, -1.0, 1.0)
    return float(np.arccos(cos.max(axis=1)).sum())


def brute_force_mch(X, Y, tol=TOL_FEAS, max_rows=30):
    """Smallest set of Y rows whose cone covers X, by exhaustive search.

    Intended as a test oracle.  Subsets are tried in order of size; among
    covering sets of the minimum size the one whose generators hug X most
    tightly (smallest summed angle from each generator to its nearest X row)
    wins, then the lexicographically smallest.  Rows without whose ray some X
    point cannot be covered are forced into every candidate once small sizes
    are exhausted, which keeps separable instances with ~10 anchors tractable
    without changing the answer.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("X and Y must have the same number of columns")
    n, m = X.shape[0], Y.shape[0]
    if n > max_rows or m > max_rows:
        raise ValidationError(
            f"brute force is limited to {max_rows} rows (got n={n}, m={m})")
    Xn = normalize_rows(X)
    Xn = Xn[np.linalg.norm(Xn, axis=1) > 0]
    Yn = normalize_rows(Y)
    usable = [j for j in range(m) if np.linalg.norm(Yn[j]) > 0]
    if Xn.shape[0] == 0:
        return ()

    def best_of(cands):
        scored = sorted((_looseness(Xn, Yn[list(c)]), c) for c in cands)
        return tuple(int(i) for i in scored[0][1])

    eager = min(len(usable), 3)
    for size in range(1, eager + 1):
        hits = [c for c in itertools.combinations(usable, size)
                if cone_feasible(Xn, Yn[list(c)], tol)]
        if hits:
            return best_of(hits)

    forced = []
    for j in usable:
        rest = [i for i in usable if i != j]
        if not rest or not cone_feasible(Xn, Yn[rest], tol):
            forced.append(j)
    if not cone_feasible(Xn, Yn[usable], tol):
        raise InfeasibleError("no subset of Y covers every row of X")
    free = [j for j in usable if j not in forced]
    for extra in range(0, len(free) + 1):
        if len(forced) + extra <= eager:
            continue
        hits = []
        for c in itertools.combinations(free, extra):
            cand = tuple(sorted(forced + list(c)))
            if cone_feasible(Xn, Yn[list(cand)], tol):
                hits.append(cand)
        if hits:
            return best_of(hits)
    raise InfeasibleError("no subset of Y covers every row of X")
