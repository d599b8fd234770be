"""Synthetic generators, baselines, metrics and parameter sweeps."""

from __future__ import annotations

import csv
import enum
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import normalized_mutual_info_score, rand_score

from .engine import AnchorSet, dca, default_s, resolve_threads
from .exceptions import ConeHullError, ValidationError
from .geometry import (
    TOL_FEAS,
    ConicalHullProblem,
    ProjectionPlan,
    as_matrix,
    cone_feasible,
    nnls,
    normalize_rows,
)
from .postprocess import cluster_anchors_sc, fit_lda, gmm_cluster
from .reductions import MultiViewData, cooccurrence, reduce_gmm, reduce_hmm


class Kind(str, enum.Enum):
    SEPARABLE_NMF = "nmf"
    GMM_GRID = "gmm"
    SC_GRID = "sc"
    HMM_CHAIN = "hmm"
    LDA_CORPUS = "lda"


@dataclass(frozen=True)
class SyntheticSpec:
    """One synthetic instance family.

    ``n`` counts rows (NMF, SC), samples excluding inserted means (GMM),
    triples (HMM) or documents (LDA).  ``k`` counts anchors (NMF), clusters
    (GMM, SC), states (HMM) or topics (LDA).  ``noise`` is an additive
    Gaussian level, relative to ``mean(|X|)`` for NMF and absolute elsewhere;
    ``variance`` is the within-cluster variance (GMM) or emission noise
    variance (HMM).
    """

    kind: Kind
    n: int = 300
    p: int = 500
    k: int = 10
    noise: float = 0.0
    variance: float = 0.0
    span_angle: float = 60.0
    seed: int = 0
    dims: tuple = (20, 12, 16)
    rays_per_cone: int = 10
    doc_length: int = 100
    anchor_mass: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.noise < 0 or self.variance < 0:
            raise ValidationError("noise and variance levels must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    anchors: np.ndarray
    labels: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MetricReport:
    anchor_accuracy: float
    recovery_error: float
    clustering_accuracy: Optional[float] = None
    mutual_information: Optional[float] = None
    rand_index: Optional[float] = None
    wall_time: float = 0.0


# -- generators -----------------------------------------------------------

def _place(rng, n, anchor_rows, other_rows):
    """Shuffle anchor rows into random positions; returns (rows, positions)."""
    k = anchor_rows.shape[0]
    perm = rng.permutation(n)
    rows = np.vstack([anchor_rows, other_rows])[np.argsort(perm)]
    return rows, np.sort(perm[:k]), perm


def _gen_nmf(spec, rng):
    k, n, p = spec.k, spec.n, spec.p
    XA = rng.random((k, p))
    Fp = rng.random((n - k, k))
    X, anchors, perm = _place(rng, n, XA, Fp @ XA)
    # columns follow the sorted anchor positions
    F = np.vstack([np.eye(k), Fp])[np.argsort(perm)][:, np.argsort(perm[:k])]
    if spec.noise > 0:
        X = X + spec.noise * np.mean(np.abs(X)) * rng.standard_normal(X.shape)
    return X, GroundTruth(anchors, None, {"F": F, "XA": X[anchors]})


def _gen_gmm(spec, rng):
    k = spec.k
    base = (300, 500, 400, 300, 500)
    sizes = [base[j % len(base)] * spec.n // 2000 or 1 for j in range(k)]
    means = [rng.random((k, d)) for d in spec.dims]
    labels = np.concatenate([np.repeat(np.arange(k), sizes), np.arange(k)])
    total = labels.size
    sd = math.sqrt(spec.variance)
    views = []
    for i, d in enumerate(spec.dims):
        V = means[i][labels] + sd * rng.standard_normal((total, d))
        V[-k:] = means[i]
        views.append(V)
    if spec.noise > 0:
        views = [V + spec.noise * rng.standard_normal(V.shape) for V in views]
    perm = rng.permutation(total)
    views = [V[perm] for V in views]
    labels = labels[perm]
    inv = np.argsort(perm)
    anchors = inv[total - k:]
    return (MultiViewData(tuple(views)),
            GroundTruth(anchors, labels, {"means": means}))


def _sc_rays(spec, rng):
    k, r, p = spec.k, spec.rays_per_cone, spec.p
    if p < k + 2:
        raise ValidationError("SC generator needs p >= k + 2")
    Qb, _ = np.linalg.qr(rng.standard_normal((p, k + 1)))
    c, B = Qb[:, 0], Qb[:, 1:]
    G = rng.standard_normal((k, r, p))
    G -= (G @ c)[..., None] * c
    U = B.T[:, None, :] + 0.5 * G / math.sqrt(p)
    U -= (U @ c)[..., None] * c
    U /= np.linalg.norm(U, axis=2, keepdims=True)
    target = math.radians(spec.span_angle)
    cone_of = np.repeat(np.arange(k), r)
    cross = cone_of[:, None] != cone_of[None, :]

    def rays(theta):
        return (math.cos(theta) * c + math.sin(theta) * U).reshape(k * r, p)

    def max_cross(theta):
        R = rays(theta)
        cos = np.clip(R @ R.T, -1, 1)
        return float(np.arccos(cos[cross]).max())

    lo, hi = 0.0, math.pi / 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if max_cross(mid) < target else (lo, mid)
    return rays(0.5 * (lo + hi)), cone_of


def _gen_sc(spec, rng):
    R, cone_of = _sc_rays(spec, rng)
    k, r = spec.k, spec.rays_per_cone
    m = spec.n - k * r
    if m < 0:
        raise ValidationError("n must be at least k * rays_per_cone")
    lab = rng.integers(0, k, size=m)
    pts = np.empty((m, spec.p))
    for j in range(k):
        sel = np.flatnonzero(lab == j)
        pts[sel] = rng.random((sel.size, r)) @ R[cone_of == j]
    X, anchors, perm = _place(rng, spec.n, R, pts)
    labels = np.concatenate([cone_of, lab])[np.argsort(perm)]
    if spec.noise > 0:
        X = X + spec.noise * rng.standard_normal(X.shape)
    ray_cone = labels[anchors]
    return X, GroundTruth(anchors, labels, {"ray_cone": ray_cone})


def _gen_hmm(spec, rng):
    k, p = spec.k, spec.p
    if p < k:
        raise ValidationError("HMM generator needs p >= k")
    blocks = np.array_split(rng.permutation(p), k)
    O = np.zeros((p, k))
    for j, b in enumerate(blocks):
        O[b, j] = rng.uniform(0.5, 1.5, size=b.size)
    T = 0.8 * np.eye(k) + 0.2 * rng.dirichlet(np.ones(k), size=k).T
    length = spec.n + 2
    h = np.empty(length, dtype=np.intp)
    h[0] = rng.integers(k)
    cum = np.cumsum(T, axis=0)
    u = rng.random(length)
    for t in range(1, length):
        h[t] = min(np.searchsorted(cum[:, h[t - 1]], u[t], side="right"), k - 1)
    obs = O[:, h].T
    if spec.variance > 0:
        obs = obs + math.sqrt(spec.variance) * rng.standard_normal(obs.shape)
    return [obs], GroundTruth(np.arange(0), h, {"O": O, "T": T})


def _gen_lda(spec, rng):
    k, p = spec.k, spec.p
    words = rng.permutation(p)
    anchors = np.sort(words[:k])
    anchor_of = words[:k]
    rest = words[k:]
    O = np.zeros((p, k))
    for j in range(k):
        O[rest, j] = (1 - spec.anchor_mass) * rng.dirichlet(np.ones(rest.size))
        O[anchor_of[j], j] = spec.anchor_mass
    alpha = np.full(k, 1.0 / k) if spec.variance == 0 else np.full(k, spec.variance)
    theta = rng.dirichlet(alpha, size=spec.n)
    probs = theta @ O.T
    probs /= probs.sum(axis=1, keepdims=True)
    counts = np.vstack([rng.multinomial(spec.doc_length, pr) for pr in probs])
    return counts.astype(np.float64), GroundTruth(
        anchors, None, {"O": O, "alpha": alpha, "anchor_of": anchor_of})


_GENERATORS = {
    Kind.SEPARABLE_NMF: _gen_nmf,
    Kind.GMM_GRID: _gen_gmm,
    Kind.SC_GRID: _gen_sc,
    Kind.HMM_CHAIN: _gen_hmm,
    Kind.LDA_CORPUS: _gen_lda,
}


def generate(spec):
    """Draw ``(data, ground_truth)`` for ``spec``; deterministic in its seed."""
    rng = np.random.default_rng([int(spec.seed), 0xBE7C])
    return _GENERATORS[spec.kind](spec, rng)


# -- baselines ------------------------------------------------------------

def _cone_residual(targets, gens):
    if gens.shape[0] == 0:
        return np.linalg.norm(targets, axis=1)
    out = np.empty(targets.shape[0])
    for i, y in enumerate(targets):
        out[i] = nnls(gens.T, y)[1]
    return out


def greedy_anchor_baseline(X, Y, k):
    """Residual pursuit on unit-normalized rows.

    The first pick is the Y row farthest (largest NNLS residual) from the
    ray through the centroid of X; each later pick is the Y row with the
    largest residual against the cone of the rows picked so far.  Ties go to
    the lowest index.
    """
    X = normalize_rows(as_matrix(X, "X"))
    Y = normalize_rows(as_matrix(Y, "Y"))
    m = Y.shape[0]
    if not 1 <= k <= m:
        raise ValidationError(f"k={k} must lie in [1, {m}]")
    chosen = []
    centroid = X.mean(axis=0, keepdims=True)
    gens = centroid if np.linalg.norm(centroid) > 0 else np.zeros((0, Y.shape[1]))
    scores = []
    for _ in range(k):
        r = _cone_residual(Y, gens)
        r[chosen] = -np.inf
        j = int(np.argmax(r))
        chosen.append(j)
        scores.append(float(r[j]))
        gens = Y[chosen]
    return AnchorSet(tuple(chosen), tuple(scores))


def backward_removal_baseline(X, tol=TOL_FEAS):
    """Drop, in index order, every row lying in the cone of the rows still
    kept; what remains is simplicial."""
    X = as_matrix(X, "X")
    if np.any(X < 0):
        raise ValidationError("backward removal needs a nonnegative matrix")
    Xn = normalize_rows(X)
    keep = [i for i in range(X.shape[0]) if np.linalg.norm(Xn[i]) > 0]
    for i in list(keep):
        rest = [j for j in keep if j != i]
        if rest and cone_feasible(Xn[i:i + 1], Xn[rest], tol):
            keep = rest
    return AnchorSet(tuple(keep), tuple(1.0 for _ in keep))


# -- metrics --------------------------------------------------------------

def anchor_accuracy(est, true):
    true = set(int(i) for i in true)
    return len(true & set(int(i) for i in est)) / max(len(true), 1)


def ray_anchor_accuracy(Y, est, true, tol=1e-10):
    """Anchor accuracy where a selected row scores if it spans the same ray as
    a distinct planted anchor (duplicated rows are interchangeable)."""
    true = np.asarray(true, dtype=int)
    est = np.asarray(est, dtype=int)
    if est.size == 0 or true.size == 0:
        return 0.0
    U = normalize_rows(np.asarray(Y, dtype=np.float64))
    same = U[est] @ U[true].T >= 1.0 - tol
    r, c = linear_sum_assignment(-same.astype(float))
    return float(same[r, c].sum() / true.size)


def matched_relative_error(est_rows, true_rows):
    """Relative Frobenius error after optimally pairing rows."""
    E = np.atleast_2d(np.asarray(est_rows, dtype=np.float64))
    T = np.atleast_2d(np.asarray(true_rows, dtype=np.float64))
    cost = ((E[:, None, :] - T[None, :, :]) ** 2).sum(-1)
    r, c = linear_sum_assignment(cost)
    return float(np.sqrt(cost[r, c].sum()) / np.linalg.norm(T))


def clustering_accuracy(true, pred):
    """Fraction correctly labelled under the best one-to-one relabelling."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    tu, ti = np.unique(true, return_inverse=True)
    pu, pi = np.unique(pred, return_inverse=True)
    M = np.zeros((pu.size, tu.size))
    np.add.at(M, (pi, ti), 1)
    r, c = linear_sum_assignment(-M)
    return float(M[r, c].sum() / true.size)


def cluster_metrics(true, pred):
    return (clustering_accuracy(true, pred),
            float(normalized_mutual_info_score(true, pred)),
            float(rand_score(true, pred)))


# -- method runners -------------------------------------------------------

METHODS = ("dca", "greedy", "backward")


def _plan(s, seed):
    return ProjectionPlan(s=s, seed=seed)


def _run_nmf(X, truth, spec, method, s, seed):
    k = spec.k
    if method == "dca":
        est = dca(ConicalHullProblem.self_ref(X, k), _plan(s, seed)).anchor_set
    elif method == "greedy":
        est = greedy_anchor_baseline(X, X, k)
    else:
        est = backward_removal_baseline(np.clip(X, 0, None))
    idx = list(est.indices)[:max(len(est.indices), 1)]
    return MetricReport(anchor_accuracy(idx, truth.anchors),
                        matched_relative_error(X[idx], X[truth.anchors]))


def _run_gmm(data, truth, spec, method, s, seed):
    if method != "dca":
        raise ValidationError("GMM sweeps support the dca method only")
    red = reduce_gmm(data, k=spec.k, seed=seed)
    est = dca(red.problem(spec.k), _plan(s, seed)).anchor_set
    centers, labels = gmm_cluster(red, est)
    err = matched_relative_error(np.hstack(centers), np.hstack(truth.params["means"]))
    acc, nmi, ri = cluster_metrics(truth.labels, labels)
    return MetricReport(ray_anchor_accuracy(red.Y, est.indices, truth.anchors),
                        err, acc, nmi, ri)


def sc_precision(anchor_groups, truth):
    """Anchor precision/recall, plus the cluster-sensitive precision where a
    planted ray only counts if its group is matched to its own cone."""
    pos = {int(a): c for a, c in zip(truth.anchors, truth.params["ray_cone"])}
    est = [a for g in anchor_groups for a in g]
    hits = [a for a in est if a in pos]
    precision = len(hits) / max(len(est), 1)
    recall = len(hits) / max(len(pos), 1)
    n_cones = int(max(pos.values())) + 1
    M = np.zeros((len(anchor_groups), n_cones))
    for g, members in enumerate(anchor_groups):
        for a in members:
            if a in pos:
                M[g, pos[a]] += 1
    r, c = linear_sum_assignment(-M)
    sensitive = float(M[r, c].sum() / max(len(est), 1))
    return precision, recall, sensitive


def _run_sc(X, truth, spec, method, s, seed):
    if method != "dca":
        raise ValidationError("SC sweeps support the dca method only")
    K = spec.k * spec.rays_per_cone
    res = cluster_anchors_sc(X, _plan(s, seed), K, n_clusters=spec.k)
    precision, _, sensitive = sc_precision(res.anchor_groups, truth)
    acc, nmi, ri = cluster_metrics(truth.labels, res.labels)
    est = list(res.anchors.indices)
    err = matched_relative_error(normalize_rows(X[est]),
                                 normalize_rows(X[truth.anchors]))
    return MetricReport(precision, err, acc, nmi, ri)


def _run_hmm(seqs, truth, spec, method, s, seed):
    if method != "dca":
        raise ValidationError("HMM sweeps support the dca method only")
    red = reduce_hmm(seqs, k=spec.k, seed=seed)
    est = dca(red.problem(spec.k), _plan(s, seed)).anchor_set
    O_hat = red.data.views[1][list(est.indices)]
    O = truth.params["O"].T
    err = matched_relative_error(O_hat, O)
    states = [int(np.argmax(O @ o)) for o in O_hat]
    return MetricReport(len(set(states)) / spec.k, err)


def topic_l1_error(O_hat, O):
    """Mean column l1 distance after optimally pairing topics."""
    cost = np.abs(O_hat[:, :, None] - O[:, None, :]).sum(axis=0)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def _run_lda(counts, truth, spec, method, s, seed):
    Q = cooccurrence(counts).Q
    if method == "dca":
        est = dca(ConicalHullProblem.self_ref(Q, spec.k), _plan(s, seed)).anchor_set
    elif method == "greedy":
        est = greedy_anchor_baseline(Q, Q, spec.k)
    else:
        raise ValidationError("LDA sweeps support dca and greedy")
    params = fit_lda(Q, est)
    return MetricReport(anchor_accuracy(est.indices, truth.anchors),
                        topic_l1_error(params.O, truth.params["O"]))


_RUNNERS = {
    Kind.SEPARABLE_NMF: _run_nmf,
    Kind.GMM_GRID: _run_gmm,
    Kind.SC_GRID: _run_sc,
    Kind.HMM_CHAIN: _run_hmm,
    Kind.LDA_CORPUS: _run_lda,
}


def evaluate(spec, method="dca", s=None, seed=None):
    """Generate one instance, run one method, score it against the truth."""
    data, truth = generate(spec)
    if s is None:
        s = default_s(max(spec.k, 1), 1.0, 0.05)
    seed = spec.seed if seed is None else seed
    t0 = time.perf_counter()
    rep = _RUNNERS[spec.kind](data, truth, spec, method, int(s), int(seed))
    return replace(rep, wall_time=time.perf_counter() - t0)


# -- sweeps ---------------------------------------------------------------

METRICS = ("anchor_accuracy", "recovery_error", "clustering_accuracy",
           "mutual_information", "rand_index")
SPEC_COLUMNS = ("kind", "n", "p", "k", "noise", "variance", "span_angle", "seed")


class SweepRow(NamedTuple):
    spec: SyntheticSpec
    method: str
    s: int
    seeds: int
    failures: int
    mean: dict
    std: dict
    wall_time: float
    error: str


def _cell(spec, method, s, n_seeds):
    reports, errors = [], []
    for j in range(n_seeds):
        trial = replace(spec, seed=spec.seed + j)
        try:
            reports.append(evaluate(trial, method, s))
        except (ConeHullError, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"seed {trial.seed}: {exc}")
    mean, std = {}, {}
    for m in METRICS:
        vals = [getattr(r, m) for r in reports if getattr(r, m) is not None]
        mean[m] = float(np.mean(vals)) if vals else None
        std[m] = float(np.std(vals)) if vals else None
    wall = float(np.mean([r.wall_time for r in reports])) if reports else 0.0
    return SweepRow(spec, method, int(s), n_seeds, len(errors), mean, std, wall,
                    "; ".join(errors[:3]))


def run_sweep(specs, methods=("dca",), s_values=(None,), n_seeds=10,
              n_threads=None):
    """Every (spec, method, s) cell averaged over ``n_seeds`` trials.

    Trial ``j`` of a cell uses seed ``spec.seed + j``, so cells that differ
    only in a level share their random draws.  Failures are counted per cell
    and the sweep carries on.  Rows come back in input order.
    """
    cells = [(sp, m, s if s is not None else default_s(max(sp.k, 1), 1.0, 0.05))
             for sp in specs for m in methods for s in s_values]
    threads = resolve_threads(n_threads)
    if threads == 1 or len(cells) == 1:
        return [_cell(sp, m, s, n_seeds) for sp, m, s in cells]
    with ThreadPoolExecutor(max_workers=min(threads, len(cells))) as pool:
        return list(pool.map(lambda c: _cell(*c, n_seeds), cells))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v.value if isinstance(v, enum.Enum) else v)


def sweep_csv(rows, timing=False):
    """CSV text for sweep rows; wall time is included only on request so
    that reruns stay byte-identical by default."""
    header = list(SPEC_COLUMNS) + ["method", "s", "seeds", "failures"]
    for m in METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    if timing:
        header.append("wall_time")
    header.append("error")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        line = [_fmt(getattr(r.spec, c)) for c in SPEC_COLUMNS]
        line += [r.method, r.s, r.seeds, r.failures]
        for m in METRICS:
            line += [_fmt(r.mean[m]), _fmt(r.std[m])]
        if timing:
            line.append(_fmt(r.wall_time))
        line.append(r.error)
        w.writerow(line)
    return buf.getvalue()
