"""Divide-and-conquer anchoring.

The divide step projects ``X`` and ``Y`` onto ``s`` random planes and solves
each planar minimal-conical-hull problem in closed form; the conquer step
counts how often every row of ``Y`` was returned and keeps the ``k`` most
frequent.  Sub-problems are independent, so they are solved in fixed-size
chunks on a thread pool and reassembled in index order; the output never
depends on the number of threads.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import InvalidPlanError, UnderdeterminedError, ValidationError
from .geometry import (
    TOL_ZERO,
    ConicalHullProblem,
    ProjectionPlan,
    anchor_2d,
    angles_of,
    as_matrix,
    brute_force_mch,
    draw_projection,
    pointed_frame,
    wrap_angle,
)

log = logging.getLogger(__name__)

CHUNK = 64
MEMBERSHIP_TOL = 1e-9


def resolve_threads(n_threads=None):
    """Thread count: explicit value, else CONEHULL_THREADS, else CPU count."""
    cap = os.environ.get("CONEHULL_THREADS")
    cap = int(cap) if cap and cap.strip() else None
    if n_threads is None:
        n_threads = cap if cap is not None else (os.cpu_count() or 1)
    elif cap is not None:
        n_threads = min(n_threads, cap)
    return max(int(n_threads), 1)


def map_chunks(fn, n_items, n_threads):
    chunks = [range(a, min(a + CHUNK, n_items)) for a in range(0, n_items, CHUNK)]
    n_threads = resolve_threads(n_threads)
    if n_threads == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=min(n_threads, len(chunks))) as pool:
        return list(pool.map(fn, chunks))


def stacked_projections(plan, ts, p, data):
    return np.concatenate([draw_projection(plan, t, p, data) for t in ts], axis=1)


@dataclass(frozen=True)
class SubproblemResult:
    t: int
    anchors: tuple
    discarded: bool = False
    coverage_violation: bool = False


@dataclass(frozen=True)
class VoteTally:
    """Per-row vote fraction over the non-discarded sub-problems."""

    g_hat: np.ndarray
    s_effective: int
    counts: np.ndarray


@dataclass(frozen=True)
class AnchorSet:
    indices: tuple
    scores: tuple
    warnings: tuple = ()

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


class DCAResult(NamedTuple):
    anchor_set: AnchorSet
    tally: VoteTally
    results: list


def solve_subproblems(problem, plan, ts, data=None):
    """Solve the sub-problems with indices ``ts``; returns SubproblemResults."""
    X, Y = problem.X, problem.Y
    big = stacked_projections(plan, ts, problem.p, data)
    XP = X @ big
    YP = XP if problem.self_referential else Y @ big
    out = []
    d = plan.d
    for i, t in enumerate(ts):
        cols = slice(d * i, d * (i + 1))
        if d == 2:
            xa = angles_of(XP[:, cols])
            ya = None if problem.self_referential else angles_of(YP[:, cols])
            res = anchor_2d(xa, ya)
            out.append(SubproblemResult(t, res.anchors, res.discarded,
                                        res.coverage_violation))
        else:
            try:
                anchors = brute_force_mch(XP[:, cols], YP[:, cols])
                out.append(SubproblemResult(t, tuple(anchors)))
            except Exception:  # infeasible projected instance
                out.append(SubproblemResult(t, (), True, True))
    return out


def tally_votes(results, m):
    """Vote fractions ``g_hat[i] = (# sub-problems returning i) / s_effective``."""
    counts = np.zeros(m, dtype=np.int64)
    s_eff = 0
    for r in results:
        if r.discarded:
            continue
        s_eff += 1
        for i in set(r.anchors):
            counts[i] += 1
    g = counts / s_eff if s_eff else np.zeros(m)
    return VoteTally(g, s_eff, counts)


def top_k(tally, k, notes=()):
    """The k best-voted rows; ties go to the lowest index.

    Raises UnderdeterminedError (carrying the positively voted rows) when
    fewer than k rows received any vote.
    """
    counts = tally.counts
    order = np.lexsort((np.arange(len(counts)), -counts))
    positive = [int(i) for i in order if counts[i] > 0]
    if len(positive) < k:
        partial = AnchorSet(tuple(positive),
                            tuple(float(tally.g_hat[i]) for i in positive),
                            tuple(notes))
        raise UnderdeterminedError(
            f"only {len(positive)} rows received votes, {k} anchors requested",
            anchor_set=partial, tally=tally)
    chosen = positive[:k]
    return AnchorSet(tuple(chosen), tuple(float(tally.g_hat[i]) for i in chosen),
                     tuple(notes))


def dca(problem, plan, n_threads=None, data=None):
    """Anchor rows of ``problem.Y`` covering ``problem.X``.

    Parameters
    ----------
    problem : ConicalHullProblem
    plan : ProjectionPlan
        ``plan.d == 2`` uses the closed-form planar solver; larger ``d`` falls
        back to exhaustive search and is only meant for tiny instances.
    n_threads : int, optional
        Worker threads for the divide step (capped by CONEHULL_THREADS).
    data : array, optional
        Source matrix for the ``data_rows`` ensemble; defaults to ``Y``.

    Returns
    -------
    DCAResult
        ``(anchor_set, tally, results)``; ``results`` is ordered by ``t``.
    """
    if plan.d > problem.p:
        raise InvalidPlanError(
            f"projected dimension d={plan.d} exceeds ambient p={problem.p}")
    if data is None:
        data = problem.Y
    chunks = map_chunks(
        lambda ts: solve_subproblems(problem, plan, ts, data), plan.s, n_threads)
    results = [r for chunk in chunks for r in chunk]
    tally = tally_votes(results, problem.m)
    notes = []
    n_disc = sum(r.discarded for r in results)
    if n_disc * 2 > plan.s:
        msg = f"{n_disc} of {plan.s} sub-problems discarded (projected cone not pointed)"
        log.warning(msg)
        notes.append(msg)
    n_viol = sum(r.coverage_violation for r in results)
    if n_viol:
        notes.append(f"{n_viol} sub-problems had a side with no covering generator")
    return DCAResult(top_k(tally, problem.k, notes), tally, results)


def default_s(k, c_hat=1.0, delta=0.05):
    """Sub-problem count ``ceil((3k / c_hat) * ln(k / delta))``, at least 1."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if c_hat <= 0:
        raise ValueError("c_hat must be positive")
    val = 3.0 * k / c_hat * math.log(k / delta)
    # guard against ln(e) evaluating to 1 + ulp
    return max(int(math.ceil(round(val, 9))), 1)


def calibrate_c_hat(problem, plan, n_threads=None):
    """Estimate the geometry constant from a pilot of ``2k`` sub-problems.

    The estimate is ``k`` times the gap between the k-th and (k+1)-th vote
    fractions, floored at one vote's worth so it stays positive.
    """
    pilot = ProjectionPlan(s=max(2 * problem.k, 1), d=plan.d,
                           ensemble=plan.ensemble, seed=plan.seed)
    chunks = map_chunks(
        lambda ts: solve_subproblems(problem, pilot, ts, problem.Y),
        pilot.s, n_threads)
    tally = tally_votes([r for c in chunks for r in c], problem.m)
    g = np.sort(tally.g_hat)[::-1]
    k = problem.k
    gap = g[k - 1] - (g[k] if len(g) > k else 0.0)
    floor = 1.0 / max(tally.s_effective, 1)
    return k * max(gap, floor)


class Membership(NamedTuple):
    covered: np.ndarray
    violations: np.ndarray
    s_effective: int


def cone_membership(X, Y, plan, n_threads=None):
    """Projected test of whether each row of X lies in cone(Y).

    On every plane whose projected Y rays fit in a half-plane, a row of X
    scores a violation when its angle falls outside the span of Y's angles.
    A row is reported covered iff it never scores one.  Passing the test only
    certifies coverage in every sampled projection; a row outside the cone
    slips through with probability decaying exponentially in ``s``.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[0] == 0:
        return Membership(np.zeros(0, bool), np.zeros(0, np.int64), 0)
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("X and Y must have the same number of columns")
    p = X.shape[1]
    if plan.d != 2:
        raise InvalidPlanError("cone membership uses planar projections (d=2)")

    def chunk(ts):
        big = stacked_projections(plan, ts, p, Y)
        XP, YP = X @ big, Y @ big
        eps = np.zeros((len(ts), X.shape[0]), dtype=np.int64)
        used = 0
        for i in range(len(ts)):
            cols = slice(2 * i, 2 * i + 2)
            ya = angles_of(YP[:, cols])
            yv = ya.values[~ya.degenerate]
            frame = pointed_frame(yv) if yv.size else None
            if frame is None:
                continue
            used += 1
            mu, lo, hi = frame
            xa = angles_of(XP[:, cols])
            rx = wrap_angle(xa.values - mu)
            out = (rx < lo - MEMBERSHIP_TOL) | (rx > hi + MEMBERSHIP_TOL)
            eps[i] = out & ~xa.degenerate
        return eps.sum(axis=0), used

    parts = map_chunks(chunk, plan.s, n_threads)
    total = np.sum([e for e, _ in parts], axis=0)
    s_eff = sum(u for _, u in parts)
    return Membership(total == 0, total, s_eff)


def cross_section(points, axis=None):
    """Central projection of rays onto the plane tangent to the unit sphere
    at ``axis`` (default: the normalized mean of the unit rays)."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    U = P / np.linalg.norm(P, axis=1, keepdims=True)
    a = U.mean(axis=0) if axis is None else np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    dots = U @ a
    if np.any(dots <= 0):
        raise ValidationError("every ray must make an acute angle with the axis")
    return U / dots[:, None]


def _angle_at(vertex, u, v):
    a, b = vertex - u, vertex - v
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True)
class SuccessDiagnostics:
    alpha: float
    beta: float
    margin: float
    recommended_s: Optional[int]
    identifiable: bool
    notes: tuple = field(default=())


def success_diagnostics(A1, A2, A3, B1=None, C1=None, k=1, delta=0.05):
    """Detection angles for anchor A2 against decoy B1 and data point C1.

    Points are cross-section coordinates (see :func:`cross_section`).
    ``alpha`` is the interior angle of the anchor polygon at A2, ``beta`` the
    angle at B1 between A2 and C1 (0 when no decoy is given).  The margin
    ``(alpha - 2 beta) / 2 pi`` feeds :func:`default_s` with ``c_hat = k *
    margin``.
    """
    A1, A2, A3 = (np.asarray(v, dtype=np.float64) for v in (A1, A2, A3))
    alpha = _angle_at(A2, A1, A3)
    beta = 0.0
    if B1 is not None:
        if C1 is None:
            raise ValueError("a decoy B1 needs the data point C1")
        beta = _angle_at(np.asarray(B1, float), A2, np.asarray(C1, float))
    margin = (alpha - 2.0 * beta) / (2.0 * np.pi)
    if margin <= 0:
        return SuccessDiagnostics(alpha, beta, margin, None, False,
                                  ("anchor A2 not reliably identifiable",))
    rec = max(default_s(k, k * margin, delta), 1)
    return SuccessDiagnostics(alpha, beta, margin, rec, True)
