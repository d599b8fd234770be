"""From anchor sets to model parameters."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import least_squares
from sklearn.cluster import SpectralClustering

from .engine import AnchorSet, map_chunks, stacked_projections, tally_votes, top_k
from .engine import SubproblemResult
from .exceptions import (
    DegenerateClusteringWarning,
    NonIdentifiableError,
    RankDeficientError,
    ValidationError,
)
from .geometry import angles_of, as_matrix, nnls, normalize_rows

RESIDUAL_TOL = 1e-10


class Constraint(str, enum.Enum):
    NON_NEG = "nonneg"
    NON_NEG_ANCHORS_FIXED = "nonneg_anchors_fixed"


class Coefficients(NamedTuple):
    F: np.ndarray
    residuals: np.ndarray
    failed: np.ndarray


@dataclass(frozen=True)
class NmfFactors:
    A: AnchorSet
    F: np.ndarray
    residual: float


@dataclass(frozen=True)
class HmmParams:
    O: np.ndarray
    T: np.ndarray


@dataclass(frozen=True)
class LdaParams:
    O: np.ndarray
    F: np.ndarray
    alpha: np.ndarray
    R: np.ndarray
    alpha0: float
    warnings: tuple = ()


@dataclass(frozen=True)
class ScClusters:
    labels: np.ndarray
    anchor_groups: tuple
    G: np.ndarray
    anchors: AnchorSet
    warnings: tuple = field(default=())


def _indices(A):
    return [int(i) for i in (A.indices if isinstance(A, AnchorSet) else A)]


def solve_coefficients(X, Y, A, constraints=Constraint.NON_NEG):
    """Nonnegative ``F`` minimizing ``||X_i - F_i Y_A||`` row by row.

    With ``NON_NEG_ANCHORS_FIXED`` the rows of ``X`` at the anchor positions
    (``X`` and ``Y`` must then have the same rows) are pinned to unit
    vectors.  Rows whose unconstrained least-squares fit is already
    nonnegative skip the iterative solver; that fit is then the NNLS optimum.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    idx = _indices(A)
    constraints = Constraint(constraints)
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("X and Y must have the same number of columns")
    if len(set(idx)) != len(idx):
        raise ValidationError("anchor indices must be distinct")
    B = Y[idx]
    k = len(idx)
    rank = np.linalg.matrix_rank(B)
    if rank < k:
        warnings.warn(f"anchor rows have rank {rank} < {k}; "
                      "coefficients are not unique", UserWarning, stacklevel=2)
    F = np.zeros((X.shape[0], k))
    failed = np.zeros(X.shape[0], dtype=bool)
    coef = np.linalg.lstsq(B.T, X.T, rcond=None)[0].T
    todo = np.flatnonzero(np.any(coef < 0, axis=1)) if rank == k \
        else np.arange(X.shape[0])
    F[:] = coef
    for i in todo:
        F[i], _, ok = nnls(B.T, X[i])
        failed[i] = not ok
    if constraints is Constraint.NON_NEG_ANCHORS_FIXED:
        if X.shape[0] != Y.shape[0]:
            raise ValidationError("pinning anchors needs X and Y with the same rows")
        F[idx] = np.eye(k)
        failed[idx] = False
    residuals = np.linalg.norm(X - F @ B, axis=1)
    return Coefficients(F, residuals, failed)


def fit_nmf(X, A):
    """``X ~ F X_A`` with ``F >= 0`` and unit rows at the anchors."""
    X = as_matrix(X, "X")
    c = solve_coefficients(X, X, A, Constraint.NON_NEG_ANCHORS_FIXED)
    nx = np.linalg.norm(X)
    res = float(np.linalg.norm(c.residuals) / nx) if nx > 0 else 0.0
    anchors = A if isinstance(A, AnchorSet) else AnchorSet(tuple(_indices(A)), ())
    return NmfFactors(anchors, c.F, res)


def _check_full_column_rank(O, name="O"):
    sv = np.linalg.svd(O, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if sv.size < O.shape[1] or cond > 1e12:
        raise RankDeficientError(
            f"{name} is rank deficient (condition number {cond:.3g})", cond)
    return cond


def simplex_lstsq(O, b, weight=None):
    """``min ||O t - b||`` over the probability simplex.

    The sum-to-one constraint enters as a heavily weighted extra row of an
    NNLS problem, and the result is renormalized.
    """
    scale = max(np.linalg.norm(O, ord=2), np.linalg.norm(b), 1.0)
    w = 1e4 * scale if weight is None else weight
    A = np.vstack([O, np.full((1, O.shape[1]), w)])
    t, _, _ = nnls(A, np.append(b, w), maxiter=50 * O.shape[1])
    s = t.sum()
    return t / s if s > 0 else np.full(O.shape[1], 1.0 / O.shape[1])


def recover_hmm_transition(O, X_A3):
    """Column-stochastic ``T`` solving ``O T = X_{A,3}`` in least squares."""
    O = as_matrix(O, "O")
    X_A3 = as_matrix(X_A3, "X_A3")
    if O.shape != X_A3.shape:
        raise ValidationError(f"O is {O.shape} but X_A3 is {X_A3.shape}")
    _check_full_column_rank(O)
    T = np.column_stack([simplex_lstsq(O, X_A3[:, j]) for j in range(O.shape[1])])
    return T


def fit_hmm(reduction, A):
    """Emission means from the anchors' middle observations and the
    transition matrix from their successors."""
    idx = _indices(A)
    views = reduction.data.views
    O = views[1][idx].T
    X_A3 = views[2][idx].T
    return HmmParams(O, recover_hmm_transition(O, X_A3))


def fit_alpha(R, alpha0=1.0):
    """Dirichlet parameters whose second moment matches ``R``.

    Solves ``alpha0 (alpha0 + 1) R = alpha alpha^T + Diag(alpha)`` in least
    squares over all entries, starting from ``alpha0 * R 1``.  ``R`` is
    rescaled to unit total mass first.  Returns ``(alpha, warnings)``.
    """
    R = np.asarray(R, dtype=np.float64)
    total = R.sum()
    if total <= 0:
        raise ValidationError("topic second moment has nonpositive mass")
    target = alpha0 * (alpha0 + 1.0) * R / total
    x0 = alpha0 * R.sum(axis=1) / total

    def resid(a):
        return (np.outer(a, a) + np.diag(a) - target).ravel()

    alpha = least_squares(resid, x0, method="lm").x
    notes = []
    if np.any(alpha < 0):
        msg = f"{int(np.sum(alpha < 0))} negative alpha component(s) clipped to 0"
        warnings.warn(msg, UserWarning, stacklevel=2)
        notes.append(msg)
        alpha = np.clip(alpha, 0.0, None)
    return alpha, tuple(notes)


def recover_lda_params(F, Q, alpha0=1.0):
    """Topic matrix, topic second moment and Dirichlet alpha.

    ``O`` is the column-normalized ``F``; ``R`` solves ``Q = O R O^T`` in
    least squares.  ``alpha`` is only determined together with ``alpha0``,
    which the caller supplies.
    """
    F = as_matrix(F, "F")
    Q = as_matrix(Q, "Q")
    sums = F.sum(axis=0)
    if np.any(sums <= 0):
        raise ValidationError("every column of F needs a positive sum")
    O = F / sums
    Op = np.linalg.pinv(O)
    R = Op @ Q @ Op.T
    R = 0.5 * (R + R.T)
    alpha, notes = fit_alpha(R, alpha0)
    return LdaParams(O, F, alpha, R, float(alpha0), notes)


def fit_lda(Q, A, alpha0=1.0):
    c = solve_coefficients(Q, Q, A, Constraint.NON_NEG_ANCHORS_FIXED)
    return recover_lda_params(c.F, Q, alpha0)


# -- subspace clustering --------------------------------------------------

def silverman_bandwidth(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.34 if n > 1 else 0.0
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * n ** -0.2 if spread > 0 else 1e-3


def mean_shift_1d(x, bandwidth=None, bins_per_bandwidth=20):
    """Gaussian-kernel mean shift on a line; integer labels ordered by mode.

    On a line every point climbs to the density mode of its basin, and the
    basins are separated by the density minima between consecutive modes.
    The kernel density is evaluated on a grid (histogram smoothed by a
    Gaussian filter), which gives the converged clustering without
    iterating.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0, dtype=np.intp)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    step = h / bins_per_bandwidth
    lo = x.min() - 5 * h
    nb = int(np.ceil((x.max() + 5 * h - lo) / step)) + 1
    pos = np.minimum(((x - lo) / step).astype(np.intp), nb - 1)
    dens = gaussian_filter1d(np.bincount(pos, minlength=nb).astype(float),
                             bins_per_bandwidth, mode="constant", truncate=6.0)
    up = np.diff(dens) > 0
    # a mode is where the density stops rising
    modes = np.flatnonzero(up[:-1] & ~up[1:]) + 1
    if modes.size <= 1:
        return np.zeros(x.size, dtype=np.intp)
    cuts = np.array([m + np.argmin(dens[m:n]) for m, n in zip(modes[:-1], modes[1:])])
    return np.searchsorted(cuts, pos, side="right").astype(np.intp)


def _unroll(theta):
    """Cut the circle at the widest gap so the angles become a line."""
    srt = np.sort(theta)
    gaps = np.diff(np.append(srt, srt[0] + 2 * np.pi))
    cut = srt[(np.argmax(gaps) + 1) % srt.size]
    return np.mod(theta - cut, 2 * np.pi)


def _sc_subproblem(XP, cols):
    ang = angles_of(XP[:, cols])
    ok = np.flatnonzero(~ang.degenerate)
    labels = np.full(XP.shape[0], -1, dtype=np.intp)
    if ok.size == 0:
        return (), labels
    line = _unroll(ang.values[ok])
    lab = mean_shift_1d(line)
    labels[ok] = lab
    picks = set()
    for c in np.unique(lab):
        members = np.flatnonzero(lab == c)
        picks.add(int(ok[members[np.argmin(line[members])]]))
        picks.add(int(ok[members[np.argmax(line[members])]]))
    return tuple(sorted(picks)), labels


def _n_groups_by_eigengap(G, kmax):
    d = G.sum(axis=1)
    d[d <= 0] = 1.0
    Dm = 1.0 / np.sqrt(d)
    L = np.eye(len(G)) - Dm[:, None] * G * Dm[None, :]
    ev = np.sort(np.linalg.eigvalsh(L))[:kmax + 1]
    return int(np.argmax(np.diff(ev)) + 1) if ev.size > 1 else 1


def cluster_anchors_sc(X, plan, K_total, n_clusters=None, n_threads=None,
                       seed=None):
    """Cone clustering: anchors from angle clusters, grouped spectrally.

    Each projected sub-problem runs mean shift on the angles; the extreme
    points of every angle cluster are voted for.  The ``K_total`` most voted
    rows form the anchor set, ``G[i, j]`` counts the sub-problems in which
    anchors ``i`` and ``j`` share an angle cluster, and spectral clustering
    of ``G`` splits the anchors into ``n_clusters`` groups (estimated from
    the eigengap when omitted).  Every row then goes to the group whose cone
    fits it with the smallest NNLS residual.
    """
    X = as_matrix(X, "X")
    n, p = X.shape
    if not 1 <= K_total <= n:
        raise ValidationError(f"K_total={K_total} must lie in [1, {n}]")
    seed = plan.seed if seed is None else seed

    def chunk(ts):
        big = stacked_projections(plan, ts, p, X)
        XP = X @ big
        out = []
        for i, t in enumerate(ts):
            picks, labels = _sc_subproblem(XP, slice(2 * i, 2 * i + 2))
            out.append((SubproblemResult(t, picks, not picks), labels))
        return out

    parts = [r for c in map_chunks(chunk, plan.s, n_threads) for r in c]
    results = [r for r, _ in parts]
    notes = []
    if all(lab.max(initial=-1) <= 0 for _, lab in parts):
        msg = "mean shift found a single angle cluster in every sub-problem"
        warnings.warn(msg, DegenerateClusteringWarning, stacklevel=2)
        notes.append(msg)
    anchors = top_k(tally_votes(results, n), K_total, notes)
    idx = np.asarray(anchors.indices)
    G = np.zeros((K_total, K_total))
    for _, lab in parts:
        la = lab[idx]
        G += (la[:, None] == la[None, :]) & (la[:, None] >= 0)
    if n_clusters is None:
        n_clusters = _n_groups_by_eigengap(G, K_total)
    n_clusters = int(n_clusters)
    if n_clusters == 1:
        groups = np.zeros(K_total, dtype=np.intp)
    else:
        sc = SpectralClustering(n_clusters=n_clusters, affinity="precomputed",
                                n_init=10, random_state=int(seed) % 2**32,
                                assign_labels="kmeans")
        groups = sc.fit_predict(G + 1e-12)
    anchor_groups = tuple(tuple(int(a) for a in idx[groups == g])
                          for g in range(n_clusters))
    Xn = normalize_rows(X)
    resid = np.full((n, n_clusters), np.inf)
    for g, members in enumerate(anchor_groups):
        if members:
            resid[:, g] = solve_coefficients(Xn, Xn, members).residuals
    labels = np.argmin(resid, axis=1)
    return ScClusters(labels, anchor_groups, G, anchors, tuple(notes))


# -- identifiability ------------------------------------------------------

class Rank1Factors(NamedTuple):
    A: tuple
    O_i: np.ndarray
    O_j: np.ndarray


def recover_rank1_factors(X1, X2, Y=None, k=None, tol=1e-10):
    """Rank-one factors from two moment matrices sharing their factors.

    With ``X1 = O_i Diag(a) O_j^T`` and ``X2 = O_i Diag(b) O_j^T`` the
    eigenvectors of the whitened ``X2`` separate the components.  Column
    ``t`` of the returned ``O_i`` and ``O_j`` satisfy ``O_i[:, t] O_j[:, t]^T
    = a_t * (true outer product)``.  When candidate rows ``Y`` (vectorized
    column-major outer products) are given, ``A[t]`` is the row best aligned
    with component ``t``.
    """
    X1 = as_matrix(X1, "X1")
    X2 = as_matrix(X2, "X2")
    if X1.shape != X2.shape:
        raise ValidationError("X1 and X2 must have the same shape")
    U, sv, Vt = np.linalg.svd(X1, full_matrices=False)
    if k is None:
        k = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
    if k < 1 or k > min(X1.shape) or sv[k - 1] <= tol * sv[0]:
        raise NonIdentifiableError(f"X1 does not have rank k={k}")
    U, sv, V = U[:, :k], sv[:k], Vt[:k].T
    isq = 1.0 / np.sqrt(sv)
    M = isq[:, None] * (U.T @ X2 @ V) * isq[None, :]
    lam, W = np.linalg.eig(M)
    scale = max(np.max(np.abs(lam)), 1e-300)
    if np.max(np.abs(lam.imag)) > 1e-8 * scale:
        raise NonIdentifiableError("complex eigenvalues: X1, X2 do not share factors")
    lam, W = lam.real, W.real
    if k > 1:
        gaps = np.where(np.eye(k, dtype=bool), np.inf,
                        np.abs(lam[:, None] - lam[None, :]))
        if gaps.min() < 1e-8 * scale:
            raise NonIdentifiableError(
                "repeated eigenvalues: component weight ratios coincide")
    order = np.argsort(lam)
    W = W[:, order]
    P = U * np.sqrt(sv) @ W
    Qm = V * np.sqrt(sv) @ np.linalg.inv(W).T
    A = ()
    if Y is not None:
        Y = as_matrix(Y, "Y")
        outer = np.stack([np.outer(P[:, t], Qm[:, t]).ravel(order="F")
                          for t in range(k)])
        cos = np.abs(normalize_rows(outer) @ normalize_rows(Y).T)
        A = tuple(int(a) for a in np.argmax(cos, axis=1))
    return Rank1Factors(A, P, Qm)


# -- mixtures -------------------------------------------------------------

def assign_nearest(points, centers):
    """Index of the nearest center (Euclidean) for every point."""
    P = np.asarray(points, dtype=np.float64)
    C = np.asarray(centers, dtype=np.float64)
    d = (P * P).sum(1)[:, None] - 2 * P @ C.T + (C * C).sum(1)[None, :]
    return np.argmin(d, axis=1)


def gmm_cluster(reduction, A):
    """Recovered per-view centers and the nearest-center label of each
    sample (all views concatenated)."""
    centers = reduction.centers(_indices(A))
    labels = assign_nearest(np.hstack(reduction.data.views), np.hstack(centers))
    return centers, labels
