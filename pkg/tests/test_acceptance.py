"""Acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and
records a single PASS/FAIL line, collected in the terminal summary.
"""

import math
import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conehull.bench import (
    Kind,
    SyntheticSpec,
    backward_removal_baseline,
    evaluate,
    generate,
    greedy_anchor_baseline,
    run_sweep,
    sc_precision,
)
from conehull.engine import dca, success_diagnostics
from conehull.exceptions import NonIdentifiableError, UnderdeterminedError
from conehull.geometry import (
    ConicalHullProblem,
    ProjectionPlan,
    anchor_2d,
    angles_of,
    brute_force_mch,
)
from conehull.matrixio import write_matrix
from conehull.postprocess import (
    cluster_anchors_sc,
    fit_hmm,
    recover_hmm_transition,
    recover_rank1_factors,
)
from conehull.reductions import cooccurrence, reduce_hmm

pytestmark = pytest.mark.acceptance


def _recovered(problem, plan):
    try:
        return set(dca(problem, plan).anchor_set.indices)
    except UnderdeterminedError:
        return set()


def _planar_instance(rng):
    m = int(rng.integers(2, 31))
    base = rng.uniform(0, 2 * np.pi)
    th = base + rng.uniform(0, rng.uniform(0.1, 0.98 * np.pi), size=m)
    Y = np.column_stack([np.cos(th), np.sin(th)]) * rng.uniform(0.2, 5.0, (m, 1))
    if rng.random() < 0.3:
        return Y, Y
    n = int(rng.integers(1, 31))
    W = rng.random((n, m)) * (rng.random((n, m)) < rng.uniform(0.05, 0.5))
    W[np.arange(n), rng.integers(0, m, size=n)] += rng.random(n)
    return W @ Y, Y


def test_c01_planar_solver_matches_oracle(report):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        X, Y = _planar_instance(rng)
        fast = anchor_2d(angles_of(X), angles_of(Y)).anchors
        mismatches += set(fast) != set(brute_force_mch(X, Y))
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 60
    report("criterion 1", ok, f"{mismatches} mismatches in 1000 instances, {dt:.1f}s")
    assert ok


def test_c02_noise_free_nmf_recovery(report):
    k = 10
    s = 4 * math.ceil(3 * k * math.log(k))
    t0 = time.perf_counter()
    perfect = 0
    for seed in range(100):
        X, truth = generate(SyntheticSpec(Kind.SEPARABLE_NMF, n=300, p=500, k=k,
                                          seed=seed))
        got = _recovered(ConicalHullProblem.self_ref(X, k), ProjectionPlan(s=s, seed=seed))
        perfect += got == set(truth.anchors.tolist())
    agree = 0
    for seed in range(5):
        X, truth = generate(SyntheticSpec(Kind.SEPARABLE_NMF, n=300, p=500, k=k,
                                          seed=seed))
        rng = np.random.default_rng(seed)
        others = np.setdiff1d(np.arange(300), truth.anchors)
        rows = np.sort(np.concatenate([truth.anchors,
                                       rng.choice(others, 40, replace=False)]))
        cols = np.sort(rng.choice(500, 50, replace=False))
        C = X[np.ix_(rows, cols)]
        planted = set(np.flatnonzero(np.isin(rows, truth.anchors)).tolist())
        a = _recovered(ConicalHullProblem.self_ref(C, k), ProjectionPlan(s=s, seed=seed))
        b = set(greedy_anchor_baseline(C, C, k).indices)
        c = set(backward_removal_baseline(C).indices)
        agree += a == b == c == planted
    dt = time.perf_counter() - t0
    ok = perfect >= 95 and agree == 5 and dt < 300
    report("criterion 2", ok, f"s={s}, {perfect}/100 exact, 50x50 three-way "
           f"agreement {agree}/5, {dt:.1f}s")
    assert ok


def decoy_instance(shrink=0.1):
    """Cone over a triangle in the plane z = 1 with a decoy generator B1.

    Returns (X, Y, points) with X = {C1, C2} and Y = {A1, A2, A3, B1}.
    """
    B1, A2, A3 = np.array([0.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, -1.0])
    C2, C1 = np.array([0.0, -0.3]), np.array([0.3, 0.2])
    A1 = C1 - 1.5 * (B1 - C1)
    pts = dict(A1=A1, A2=A2, A3=A3, B1=B1, C1=C1, C2=C2)
    lift = {n: np.append(shrink * v, 1.0) for n, v in pts.items()}
    X = np.vstack([lift["C1"], lift["C2"]])
    Y = np.vstack([lift[n] for n in ("A1", "A2", "A3", "B1")])
    return X, Y, {n: shrink * v for n, v in pts.items()}


def test_c03_decoy_selection_probability(report):
    X, Y, pts = decoy_instance()
    d = success_diagnostics(pts["A1"], pts["A2"], pts["A3"], pts["B1"], pts["C1"])
    N = 100_000
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = dca(ConicalHullProblem(X, Y, 3), ProjectionPlan(s=N, seed=3))
    dt = time.perf_counter() - t0
    emp = res.tally.counts[3] / N
    target = d.beta / (2 * np.pi)
    sigma = math.sqrt(target * (1 - target) / N)
    ok = abs(emp - target) <= 3 * sigma and dt < 120
    report("criterion 3", ok, f"empirical {emp:.5f} vs beta/2pi {target:.5f}, "
           f"3 sigma {3 * sigma:.5f}; beta/pi {2 * target:.5f}; {dt:.1f}s")
    assert ok


def decoy_cone(seed, k=4, p=12, n_decoys=20, n_x=30, tight=0.9):
    """Anchors, X points near each anchor, and decoys pulled towards them."""
    rng = np.random.default_rng(seed)
    A = rng.random((k, p))
    c = A.mean(axis=0)
    X = np.vstack([tight * A + (1 - tight) * c, rng.dirichlet(np.ones(k), n_x) @ A])
    lam = rng.uniform(0.25, 0.7, (n_decoys, 1))
    D = lam * A[rng.integers(k, size=n_decoys)] \
        + (1 - lam) * (rng.dirichlet(np.ones(k), n_decoys) @ A)
    return ConicalHullProblem(X, np.vstack([A, D]), k)


def test_c04_failure_rate_below_bound(report):
    k = 4
    worst = []
    ok = True
    for inst in range(6):
        prob = decoy_cone(inst, k=k)
        pilot = dca(prob, ProjectionPlan(s=50_000, seed=10**6 + inst)).tally
        g = pilot.counts / pilot.s_effective
        margin = g[:k].min() - g[k:].max()
        for s in (10, 20, 40, 80, 160):
            fails = sum(_recovered(prob, ProjectionPlan(s=s, seed=j)) != set(range(k))
                        for j in range(200))
            bound = k * math.exp(-s * margin / 3)
            worst.append((fails / 200 - bound, inst, s, fails / 200, bound, margin))
            ok &= fails / 200 <= bound
    gap, inst, s, rate, bound, margin = max(worst)
    report("criterion 4", ok, f"tightest cell: instance {inst} margin {margin:.3f}, "
           f"s={s}, failure rate {rate:.3f} vs bound {min(bound, 99):.3f}")
    assert ok


def test_c05_gmm_phase_transition(report):
    noise = [round(0.05 * i, 2) for i in range(10)]
    variance = [round(0.01 * i, 2) for i in range(10)]
    specs = [SyntheticSpec(Kind.GMM_GRID, n=2000, k=5, noise=a, variance=v)
             for v in variance for a in noise]
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = run_sweep(specs, ["dca"], [None], n_seeds=10)
    dt = time.perf_counter() - t0
    acc = np.array([r.mean["clustering_accuracy"] for r in rows]).reshape(10, 10)
    at = acc[1, 0]
    rises = [(variance[i], noise[j + 1]) for i in range(10) for j in range(9)
             if acc[i, j + 1] > acc[i, j]]
    ok = at >= 0.95 and not rises and dt < 1200
    report("criterion 5", ok, f"accuracy {at:.3f} at noise 0, variance 0.01 "
           f"(variance 0: {acc[0, 0]:.3f}); {len(rises)}/90 noise steps increase; "
           f"{dt:.0f}s")
    assert ok


def test_c06_hmm_recovery(report):
    spec = SyntheticSpec(Kind.HMM_CHAIN, n=5000, p=10, k=2, seed=0)
    seqs, truth = generate(spec)
    O = truth.params["O"]
    assert abs(O[:, 0] @ O[:, 1]) == 0.0
    red = reduce_hmm(seqs, k=2, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        A = dca(red.problem(2), ProjectionPlan(s=40, seed=0)).anchor_set
    est = fit_hmm(red, A).O
    E = np.array([[np.linalg.norm(est[:, i] - O[:, j]) / np.linalg.norm(O[:, j])
                   for j in range(2)] for i in range(2)])
    r, c = linear_sum_assignment(E)
    col_err = E[r, c].max()
    rng = np.random.default_rng(6)
    T = rng.dirichlet(np.ones(2), size=2).T
    t_err = np.abs(recover_hmm_transition(O, O @ T) - T).max()
    ok = col_err <= 0.1 and t_err <= 1e-8
    report("criterion 6", ok, f"max column relative error {col_err:.2e}, "
           f"transition round-trip error {t_err:.1e}")
    assert ok


def test_c07_lda(report):
    Q = cooccurrence(np.array([[2, 1], [1, 1]])).Q
    golden = np.abs(Q - np.array([[1 / 3, 5 / 6], [5 / 6, 0]])).max()
    errs = [evaluate(SyntheticSpec(Kind.LDA_CORPUS, n=2000, p=50, k=3, seed=seed),
                     "dca").recovery_error for seed in range(5)]
    ok = golden <= 1e-12 and max(errs) <= 0.15
    report("criterion 7", ok, f"golden Q error {golden:.1e}; topic l1 error "
           f"max {max(errs):.3f} over 5 corpora")
    assert ok


def test_c08_subspace_clustering(report):
    K = 40
    rows = []
    for span in (20.0, 40.0, 60.0):
        for seed in range(3):
            spec = SyntheticSpec(Kind.SC_GRID, n=500, p=300, k=4, span_angle=span,
                                 seed=seed, rays_per_cone=10)
            X, truth = generate(spec)
            res = cluster_anchors_sc(X, ProjectionPlan(s=8 * K, seed=seed), K,
                                     n_clusters=4)
            rows.append(sc_precision(res.anchor_groups, truth))
    P = np.array(rows)
    ok = P[:, 0].min() >= 0.9 and P[:, 1].min() >= 0.9 and P[:, 2].min() >= 0.85
    report("criterion 8", ok, f"min precision {P[:, 0].min():.3f}, recall "
           f"{P[:, 1].min():.3f}, cluster-sensitive {P[:, 2].min():.3f} "
           "over spans 20/40/60 x 3 seeds")
    assert ok


def _s_for_95(p, n_inst=200, k=5):
    instances = []
    for j in range(n_inst):
        X, truth = generate(SyntheticSpec(Kind.SEPARABLE_NMF, n=100, p=p, k=k, seed=j))
        instances.append((ConicalHullProblem.self_ref(X, k), set(truth.anchors.tolist())))
    for s in range(1, 200):
        hits = sum(_recovered(prob, ProjectionPlan(s=s, seed=j)) == truth
                   for j, (prob, truth) in enumerate(instances))
        if hits >= 0.95 * n_inst:
            return s
    return None


def test_c09_s_independent_of_dimension(report):
    need = {p: _s_for_95(p) for p in (50, 200, 800)}
    vals = list(need.values())
    ratio = max(vals) / min(vals)
    ok = ratio <= 1.5
    report("criterion 9", ok, "s for 95% recovery: " +
           ", ".join(f"p={p}: {s}" for p, s in need.items()) + f"; ratio {ratio:.2f}")
    assert ok


def test_c10_rank1_identifiability(report):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 6))
        pi, pj = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        Oi, Oj = rng.random((pi, k)), rng.random((pj, k))
        a = rng.uniform(0.5, 2.0, k)
        ratios = rng.permutation(np.linspace(0.5, 3.0, k)) + rng.uniform(0, 0.1, k)
        b = a * ratios
        X1, X2 = Oi @ np.diag(a) @ Oj.T, Oi @ np.diag(b) @ Oj.T
        f = recover_rank1_factors(X1, X2, k=k)
        est = [np.outer(f.O_i[:, t], f.O_j[:, t]) for t in range(k)]
        true = [a[t] * np.outer(Oi[:, t], Oj[:, t]) for t in range(k)]
        cost = np.array([[np.abs(e - t).max() for t in true] for e in est])
        r, c = linear_sum_assignment(cost)
        worst = max(worst, cost[r, c].max() / np.abs(X1).max())
    Oi, Oj = rng.random((4, 3)), rng.random((4, 3))
    X1 = Oi @ Oj.T
    try:
        recover_rank1_factors(X1, X1, k=3)
        raised = False
    except NonIdentifiableError:
        raised = True
    ok = worst <= 1e-8 and raised
    report("criterion 10", ok, f"max relative error {worst:.1e} over 100 instances; "
           f"a=b raises: {raised}")
    assert ok


def _run(args, cwd, threads_env=None):
    env = dict(os.environ)
    env.pop("CONEHULL_THREADS", None)
    if threads_env is not None:
        env["CONEHULL_THREADS"] = str(threads_env)
    proc = subprocess.run([sys.executable, "-m", "conehull", *args], cwd=cwd, env=env,
                          capture_output=True)
    return proc.returncode, proc.stdout


def _tree(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            path = os.path.join(base, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_c11_thread_determinism(report, tmp_path):
    X, _ = generate(SyntheticSpec(Kind.SEPARABLE_NMF, n=300, p=200, k=8, seed=1))
    write_matrix(tmp_path / "x.bin", X, "binary")
    G = np.random.default_rng(2).random((300, 14))
    write_matrix(tmp_path / "g.txt", G)
    S, _ = generate(SyntheticSpec(Kind.SC_GRID, n=120, p=40, k=2, rays_per_cone=4))
    write_matrix(tmp_path / "sc.txt", S)
    write_matrix(tmp_path / "y.txt", X[:20])
    commands = {
        "anchor": ["anchor", "--x", "x.bin", "--k", "8", "--s", "700", "--seed", "5",
                   "--out", "{out}"],
        "reduce": ["reduce", "--model", "gmm", "--input", "g.txt", "--k", "3",
                   "--views", "5,5,4", "--seed", "5", "--out-x", "{out}/x.txt",
                   "--out-y", "{out}/y.txt"],
        "fit": ["fit", "--model", "sc", "--input", "sc.txt", "--k", "8",
                "--clusters", "2", "--s", "200", "--seed", "5", "--out", "{out}"],
        "member": ["member", "--x", "x.bin", "--y", "y.txt", "--s", "300",
                   "--seed", "5", "--out", "{out}/verdicts.txt"],
        "bench": ["bench", "--suite", "nmf", "--set", "n=60", "--set", "p=30",
                  "--set", "k=4", "--grid", "noise=0,0.1,0.2", "--seeds", "4",
                  "--s-values", "20,40", "--seed", "5", "--out", "{out}"],
    }
    variants = [("env", 1), ("env", 8), ("flag", 1), ("flag", 8)]
    mismatched = []
    for name, cmd in commands.items():
        outputs = []
        for mode, n in variants:
            out = tmp_path / f"{name}-{mode}-{n}"
            out.mkdir()
            args = [a.replace("{out}", str(out)) for a in cmd]
            if mode == "flag" and name != "reduce":
                args += ["--threads", str(n)]
            code, stdout = _run(args, tmp_path, n if mode == "env" else None)
            outputs.append((code, stdout, _tree(out)))
        if any(o != outputs[0] for o in outputs[1:]) or outputs[0][0] != 0:
            mismatched.append(name)
    ok = not mismatched
    report("criterion 11", ok, f"{len(commands) - len(mismatched)}/{len(commands)} "
           "commands byte-identical across thread caps 1 and 8"
           + (f"; differing: {', '.join(mismatched)}" if mismatched else ""))
    assert ok
