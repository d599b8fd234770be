"""Builders turning model-learning problems into conical hull instances.

NMF, LDA and subspace clustering are self-referential (``Y is X``).  GMM and
HMM use cross moments of three conditionally independent views: the rows of
``X`` are vectorized second- and (eta-contracted) third-order moment
matrices, the rows of ``Y`` the per-sample outer products of two views.
Matrices are vectorized column-major throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InsufficientDataError, ValidationError
from .geometry import ConicalHullProblem, as_matrix


@dataclass(frozen=True)
class MultiViewData:
    """Three feature views of the same ``n`` samples."""

    views: tuple
    feature_groups: Optional[tuple] = None

    def __post_init__(self):
        if len(self.views) != 3:
            raise ValidationError(f"expected 3 views, got {len(self.views)}")
        vs = tuple(as_matrix(v, f"view {i + 1}") for i, v in enumerate(self.views))
        if len({v.shape[0] for v in vs}) != 1:
            raise ValidationError(
                "views have unequal row counts: "
                + ", ".join(str(v.shape[0]) for v in vs))
        object.__setattr__(self, "views", vs)

    @property
    def n(self):
        return self.views[0].shape[0]

    @property
    def dims(self):
        return tuple(v.shape[1] for v in self.views)

    @classmethod
    def from_features(cls, X, seed=0):
        """Split the columns of a single-view matrix into three random groups
        of (nearly) equal size."""
        X = as_matrix(X, "X")
        p = X.shape[1]
        if p < 3:
            raise ValidationError("need at least 3 features to form 3 views")
        perm = np.random.default_rng(seed).permutation(p)
        groups = tuple(np.sort(g) for g in np.array_split(perm, 3))
        return cls(tuple(X[:, g] for g in groups), groups)

    @classmethod
    def from_sequences(cls, sequences):
        """All overlapping triples ``(x[t-1], x[t], x[t+1])`` of each sequence."""
        prev, cur, nxt = [], [], []
        p = None
        for i, seq in enumerate(sequences):
            S = as_matrix(seq, f"sequence {i}")
            if S.shape[0] < 3:
                raise ValidationError(
                    f"sequence {i} has length {S.shape[0]}; at least 3 required")
            if p is not None and S.shape[1] != p:
                raise ValidationError("sequences differ in observation dimension")
            p = S.shape[1]
            prev.append(S[:-2])
            cur.append(S[1:-1])
            nxt.append(S[2:])
        if p is None:
            raise InsufficientDataError("no sequences given")
        return cls((np.vstack(prev), np.vstack(cur), np.vstack(nxt)))


@dataclass(frozen=True)
class MomentReduction:
    """Conical hull instance built from cross moments.

    ``pair`` names the two views whose outer product forms ``Y`` (0-based),
    ``third`` the view contracted with the ``etas``.  ``omega`` holds the
    retained column-major positions of the vectorized ``p_a x p_b`` moment
    matrices, or None when nothing was subsampled.
    """

    X: np.ndarray
    Y: np.ndarray
    etas: np.ndarray
    omega: Optional[np.ndarray]
    q: int
    pair: tuple
    third: int
    data: MultiViewData = field(repr=False)
    seed: int = 0

    def problem(self, k):
        return ConicalHullProblem(self.X, self.Y, k)

    def centers(self, anchors):
        """Per-view rows of the anchor samples, i.e. the estimated conditional
        means, as a tuple of ``k x p_i`` arrays."""
        idx = np.asarray(list(anchors), dtype=np.intp)
        return tuple(v[idx] for v in self.data.views)


@dataclass(frozen=True)
class CooccurrenceMatrix:
    Q: np.ndarray
    doc_lengths: np.ndarray
    dropped: tuple = ()


def default_q(k):
    return max(2, math.ceil(k / 4) + 1)


def _vec_outer(A, B):
    """Rows ``vec(a_t b_t^T)`` (column-major), shape ``n x (p_a p_b)``."""
    return (B[:, :, None] * A[:, None, :]).reshape(A.shape[0], -1)


def draw_etas(q, dim, seed, kind="orthant"):
    """``q`` unit vectors in R^dim.

    ``"sphere"`` is uniform on the sphere; ``"orthant"`` folds the same draws
    into the nonnegative orthant (absolute values), which keeps the
    contracted moments inside the cone spanned by nonnegative conditional
    means.
    """
    rng = np.random.default_rng([int(seed), 0xE7A])
    E = rng.standard_normal((q, dim))
    if kind == "orthant":
        E = np.abs(E)
    elif kind != "sphere":
        raise ValidationError(f"unknown eta kind {kind!r}")
    return E / np.linalg.norm(E, axis=1, keepdims=True)


def draw_omega(size, fraction, seed):
    if not 0 < fraction <= 1:
        raise ValidationError(f"omega_fraction={fraction} must lie in (0, 1]")
    keep = max(int(round(fraction * size)), 1)
    rng = np.random.default_rng([int(seed), 0x0E6A])
    return np.sort(rng.choice(size, size=keep, replace=False))


def moment_reduction(data, pair=(0, 1), third=2, q=2, seed=0,
                     omega_fraction=None, eta="orthant"):
    """Generic cross-moment instance.

    ``X[0] = vec(A^T B) / n`` and ``X[t] = vec(A^T Diag(C eta_t) B) / n`` for
    ``t = 1..q``, with ``A, B`` the views in ``pair`` and ``C`` the third;
    ``Y[s] = vec(a_s b_s^T)``.
    """
    if q < 1:
        raise ValidationError(f"q={q} must be >= 1")
    n = data.n
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {n}")
    A, B, C = (data.views[i] for i in (*pair, third))
    omega = None
    if omega_fraction is not None:
        omega = draw_omega(A.shape[1] * B.shape[1], omega_fraction, seed)
    etas = draw_etas(q, C.shape[1], seed, eta)
    W = np.column_stack([np.ones(n), C @ etas.T])
    X = np.empty((q + 1, A.shape[1] * B.shape[1]))
    for r in range(q + 1):
        X[r] = ((A * W[:, r:r + 1]).T @ B).ravel(order="F") / n
    Y = _vec_outer(A, B)
    if omega is not None:
        X, Y = X[:, omega], Y[:, omega]
    return MomentReduction(X, Y, etas, omega, q, tuple(pair), third, data,
                           int(seed))


def reduce_nmf(X, k):
    """Self-referential instance for separable NMF; ``X`` must be >= 0."""
    X = as_matrix(X, "X")
    if np.any(X < 0):
        i, j = np.argwhere(X < 0)[0]
        raise ValidationError(f"negative entry X[{i}, {j}] = {X[i, j]}")
    return ConicalHullProblem.self_ref(X, k)


def reduce_gmm(data, k=None, q=None, seed=0, omega_fraction=None, eta="orthant"):
    """Multi-view GMM instance; anchors are samples sitting on the means.

    ``q`` defaults to ``max(2, ceil(k/4) + 1)`` (2 if ``k`` is unknown).
    """
    if q is None:
        q = default_q(k) if k is not None else 2
    return moment_reduction(data, (0, 1), 2, q, seed, omega_fraction, eta)


def reduce_hmm(sequences, k=1, q=None, seed=0, omega_fraction=None,
               eta="orthant"):
    """HMM instance over all overlapping observation triples.

    The middle and last observations form ``Y``; the first carries ``eta``.
    """
    data = MultiViewData.from_sequences(sequences)
    if data.n < k:
        raise InsufficientDataError(
            f"{data.n} triples available, at least k={k} required")
    if q is None:
        q = default_q(k)
    return moment_reduction(data, (1, 2), 0, q, seed, omega_fraction, eta)


def cooccurrence(counts):
    """Unbiased word-pair co-occurrence matrix of a document-term matrix.

    Documents shorter than two tokens carry no pair and are dropped with a
    warning.  Small negative entries may remain in finite samples.
    """
    C = as_matrix(counts, "counts")
    if np.any(C < 0):
        raise ValidationError("counts must be nonnegative")
    if not np.array_equal(C, np.round(C)):
        raise ValidationError("counts must be integers")
    m = C.sum(axis=1)
    short = np.flatnonzero(m < 2)
    if short.size:
        warnings.warn(f"dropping {short.size} document(s) with fewer than 2 tokens",
                      UserWarning, stacklevel=2)
        keep = m >= 2
        C, m = C[keep], m[keep]
    if C.shape[0] == 0:
        raise InsufficientDataError("no document has at least 2 tokens")
    denom = m * (m - 1)
    Xbar = C / np.sqrt(denom)[:, None]
    Xhat = C / denom[:, None]
    Q = Xbar.T @ Xbar - np.diag(Xhat.sum(axis=0))
    Q = 0.5 * (Q + Q.T)
    return CooccurrenceMatrix(Q, m, tuple(int(i) for i in short))


def reduce_lda(counts, k):
    """Self-referential instance on the word co-occurrence matrix."""
    return ConicalHullProblem.self_ref(cooccurrence(counts).Q, k)


def reduce_sc(X, K_total):
    """Self-referential instance for cone clustering; ``K_total`` counts the
    extreme rays of all clusters together."""
    return ConicalHullProblem.self_ref(as_matrix(X, "X"), K_total)
