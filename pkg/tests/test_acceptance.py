"""End-to-end acceptance checks, one test and one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py`` (the lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import mpmath
import numpy as np
import pytest
from scipy import integrate

from flowprob.boundary import gram_matrix, sphere_sample, GaussianLoadModel, sample_loads
from flowprob.gas import SteadySolver, feasible_mask, quadratic_form
from flowprob.kde import (KdeModel, MinMaxKde, bandwidths, box_probability, grad_box_probability,
                          grad_minmax_probability, grad_probability_inlet, kde_pdf, minmax_box_probability)
from flowprob.network import build_incidence, network_from_dict, path_matrix_is_exact
from flowprob.srd import srd_probability
from flowprob.transport import ExpProfile, TransportChain, simulate_upwind, solve_chain

from conftest import cached_scenario

RESULTS: list[str] = []


def report(criterion, checks):
    """Record one line for the criterion and fail the test if any check failed."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{name}={'ok' if good else 'FAIL'} ({info})" for name, good, info in checks)
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def phi_interval(p0, phi, lo, hi, mean, sd):
    b_hi = math.sqrt(max(p0**2 - lo**2, 0.0) / phi)
    b_lo = math.sqrt(max(p0**2 - hi**2, 0.0) / phi)
    return float(mpmath.ncdf((b_hi - mean) / sd) - mpmath.ncdf((b_lo - mean) / sd))


def timed(fun, *args, **kw):
    t0 = time.perf_counter()
    out = fun(*args, **kw)
    return out, time.perf_counter() - t0


def in_range(v, lo, hi):
    return lo <= v <= hi


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_single_edge():
    t0 = time.perf_counter()
    sc = cached_scenario("example1")
    srd = sc.estimate("srd", 50000, 0).value
    kde = sc.estimate("kde", 50000, 0).value
    mc = sc.estimate("mc", 50000, 0).value
    elapsed = time.perf_counter() - t0
    oracle = phi_interval(60, 100, 40, 60, 4, 0.5)
    report(1, [
        ("srd", abs(srd - 0.8275) <= 5e-4, f"{srd:.6f}"),
        ("kde", in_range(kde, 0.820, 0.835), f"{kde:.4f}"),
        ("mc", in_range(mc, 0.820, 0.835), f"{mc:.4f}"),
        ("oracle", abs(srd - oracle) <= 1e-3, f"|srd-Phi|={abs(srd - oracle):.1e}"),
        ("runtime", elapsed < 5, f"{elapsed:.2f}s"),
    ])


# -- 2 ---------------------------------------------------------------------------

def test_criterion_2_two_edge_tree():
    t0 = time.perf_counter()
    sc = cached_scenario("example2")
    srd = sc.estimate("srd", 10**4, 0).value
    elapsed = time.perf_counter() - t0
    oracle = phi_interval(60, 100, 40, 60, 4, 0.5) * phi_interval(60, 100, 30, 50, 4, 0.5)
    # order relation at equal N: best of five to damp scheduler noise
    runs = {m: min(timed(sc.estimate, m, 10**4, 0)[1] for _ in range(5)) for m in ("srd", "kde", "mc")}
    faster = runs["kde"] < runs["srd"] and runs["mc"] < runs["srd"]
    report(2, [
        ("srd", abs(srd - 0.7495) <= 2e-3, f"{srd:.5f}"),
        ("oracle", abs(oracle - 0.7495) <= 1e-3 and abs(srd - oracle) <= 1e-3, f"product={oracle:.5f}"),
        ("runtime", elapsed < 10, f"{elapsed:.2f}s"),
        ("kde,mc faster than srd", faster, ", ".join(f"{k} {v * 1e3:.1f}ms" for k, v in runs.items())),
    ])


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_gaslib():
    t0 = time.perf_counter()
    sc = cached_scenario("gaslib11")
    det = sc.deterministic()
    kde = sc.estimate("kde", 10**5, 0).value
    mc = sc.estimate("mc", 10**5, 0).value
    res = sc.optimize(10**5, 0, 0.75)
    elapsed = time.perf_counter() - t0
    ref_det = np.array([46.10, 52.04, 51.08])
    ref_opt = np.array([47.51, 53.33, 52.44])
    report(3, [
        ("deterministic", bool(np.all(np.abs(det - ref_det) <= 0.05)), np.round(det, 3).tolist()),
        ("kde", in_range(kde, 0.349, 0.362), f"{kde:.4f}"),
        ("mc", in_range(mc, 0.349, 0.362), f"{mc:.4f}"),
        ("optimum", bool(np.all(np.abs(res.x - ref_opt) <= 0.05)), np.round(res.x, 3).tolist()),
        ("kkt", res.kkt.max_residual <= 1e-5, f"{res.kkt.max_residual:.1e}"),
        ("P_N", abs(res.estimate.value - 0.75) <= 5e-3, f"{res.estimate.value:.5f}"),
        ("runtime", elapsed < 600, f"{elapsed:.1f}s"),
    ])


# -- 4 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_dynamic_single_edge():
    sc = cached_scenario("example3")
    assert sc.model.n_terms == 30 and sc.grid.size == 101
    kde = sc.estimate("kde", 10**5, 1).value
    mc = sc.estimate("mc", 10**5, 1).value
    report(4, [
        ("kde", in_range(kde, 0.740, 0.746), f"{kde:.4f}"),
        ("mc", in_range(mc, 0.740, 0.746), f"{mc:.4f}"),
        ("gap", abs(kde - mc) <= 0.002, f"{abs(kde - mc):.4f}"),
    ])


# -- 5 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_water_network():
    sc = cached_scenario("water")
    det = sc.deterministic()
    kde = sc.estimate("kde", 10**5, 0).value
    mc = sc.estimate("mc", 10**5, 0).value
    res = sc.optimize(10**5, 0, 0.75)
    ref_opt = np.array([5.936, 6.560, 2.576])
    report(5, [
        ("deterministic", bool(np.all(np.abs(det - [5.78, 6.39, 2.51]) <= 0.02)), np.round(det, 4).tolist()),
        ("kde", in_range(kde, 0.373, 0.380), f"{kde:.4f}"),
        ("mc", in_range(mc, 0.373, 0.380), f"{mc:.4f}"),
        ("optimum", bool(np.all(np.abs(res.x - ref_opt) <= 0.01)), np.round(res.x, 4).tolist()),
        ("kkt", res.kkt.max_residual <= 1e-5, f"{res.kkt.max_residual:.1e}"),
    ])


# -- 6 ---------------------------------------------------------------------------

def _smooth_chain():
    d, m, L = [-2.0, -1.0, -3.0], [-0.5, 0.0, -0.2], [1.0, 0.5, 1.5]
    a, c, w = [1.0, 2.0, 1.0], [0.3, 0.5, 1.0], [1.0, 2.0, 1.5]
    profiles, downstream = [None] * 3, 0.0
    for k in reversed(range(3)):
        profiles[k] = ExpProfile(a[k] + downstream, m[k] / d[k], L[k])
        downstream = float(profiles[k](0.0))
    bs = [(lambda t, k=k: a[k] + c[k] * (1 - np.cos(w[k] * np.asarray(t)))) for k in range(3)]
    return TransportChain(tuple(d), tuple(m), tuple(L), tuple(profiles), 5.0), bs


def _prop_a():
    ch, bs = _smooth_chain()
    errs = []
    for dx in (1 / 100, 1 / 200, 1 / 400):
        r = simulate_upwind(ch, bs, dx)
        exact = np.array([solve_chain(ch, bs, t, 0.0, 1) for t in r.times])
        errs.append(float(np.abs(r.outlet - exact).max()))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = errs[1] <= 5e-3 and all(2 / 1.5 <= q <= 3 for q in ratios)
    return ok, f"err(1/200)={errs[1]:.1e}, ratios={ratios[0]:.2f},{ratios[1]:.2f}"


def _fd_rel(a, b):
    return abs(a - b) / max(abs(b), 1e-6)


def _prop_b():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n, size = int(rng.integers(1, 4)), int(rng.integers(2, 40))
        x = rng.normal(size=(size, n)) * rng.uniform(0.5, 2.0, n)
        lo = rng.uniform(-2.0, -0.5, n)
        up = lo + rng.uniform(0.5, 3.0, n)
        model = KdeModel.fit(x)
        mm = MinMaxKde.fit(x - 0.3, x + np.abs(rng.normal(size=x.shape)))
        gu = grad_box_probability(model, lo, up, "upper")
        gl = grad_box_probability(model, lo, up, "lower")
        gm = grad_minmax_probability(mm, lo, up + 1.0)
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1e-5
            fdu = (box_probability(model, lo, up + e).value - box_probability(model, lo, up - e).value) / 2e-5
            fdl = (box_probability(model, lo + e, up).value - box_probability(model, lo - e, up).value) / 2e-5
            fdm = (minmax_box_probability(mm, lo, up + 1.0 + e).value
                   - minmax_box_probability(mm, lo, up + 1.0 - e).value) / 2e-5
            worst = max(worst, _fd_rel(gu[k], fdu), _fd_rel(gl[k], fdl), _fd_rel(gm[k], fdm))
        a = rng.uniform(0.8, 1.2, n)
        c = rng.uniform(0.0, 800.0, (size, n))
        plo = rng.uniform(20.0, 35.0, n)
        pup = plo + rng.uniform(10.0, 30.0, n)
        h = bandwidths(np.sqrt(a * 2500 - c))
        mass = lambda q: box_probability(KdeModel(np.sqrt(a * q * q - c), h, np.ones(size, bool)),  # noqa: E731
                                         plo, pup).value
        g = grad_probability_inlet(KdeModel(np.sqrt(a * 2500 - c), h, np.ones(size, bool)), plo, pup, 50.0, a)
        worst = max(worst, _fd_rel(g, (mass(50 + 1e-4) - mass(50 - 1e-4)) / 2e-4))
    return worst <= 1e-4, f"worst rel err {worst:.1e}"


def _prop_c():
    worst = 0.0
    for n in (1, 2, 3):
        rng = np.random.default_rng(n)
        model = KdeModel.fit(rng.normal(size=(6, n)))
        lo, up = -0.5 * np.ones(n), np.linspace(0.4, 0.9, n)
        ref, _ = integrate.nquad(lambda *z: kde_pdf(model, [z])[0], list(zip(lo, up)),
                                 opts={"epsabs": 1e-12, "epsrel": 1e-12})
        worst = max(worst, abs(box_probability(model, lo, up).value - ref))
    return worst <= 1e-8, f"worst {worst:.1e}"


def _prop_d():
    sc2 = cached_scenario("example2")
    same = sc2.estimate("srd", 4000, 5).value == sc2.estimate("srd", 4000, 5).value
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        p0, phi = rng.uniform(50, 100), rng.uniform(1, 200)
        mean, sd = rng.uniform(0.5, 8), rng.uniform(0.1, 3)
        lo, hi = rng.uniform(0.05, 0.6) * p0, p0
        net = network_from_dict({"nodes": [{"id": 0, "kind": "supply", "p0": p0},
                                           {"id": 1, "kind": "demand", "bounds": [lo, hi]}],
                                 "edges": [{"from": 0, "to": 1, "phi": phi}]})
        est = srd_probability(quadratic_form(net, [1]), GaussianLoadModel.from_std([mean], [sd]), [lo], [hi],
                              sphere_sample(1, 2, 0)).value
        b_hi = math.sqrt((p0**2 - lo**2) / phi)
        exact = float(mpmath.ncdf((b_hi - mean) / sd) - mpmath.ncdf(-mean / sd))
        worst = max(worst, abs(est - exact))
    return same and worst <= 1e-10, f"repeatable={same}, n=1 worst {worst:.1e}"


def _random_tree(rng, n):
    nodes = [{"id": 0, "kind": "supply", "p0": 80.0}] + [{"id": v, "kind": "demand", "bounds": [1.0, 80.0]}
                                                         for v in range(1, n)]
    edges = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        pair = (u, v) if rng.random() < 0.5 else (v, u)
        edges.append({"from": pair[0], "to": pair[1], "phi": float(rng.uniform(0.01, 2.0))})
    return {"nodes": nodes, "edges": edges}


def _prop_e():
    rng = np.random.default_rng(4)
    ok = all(path_matrix_is_exact(build_incidence(network_from_dict(_random_tree(rng, int(n)))))
             for n in rng.integers(2, 51, 100))
    return ok, "100 trees, 2..50 nodes"


def _prop_f():
    sc = cached_scenario("example2")
    rng = np.random.default_rng(11)
    pts = rng.normal(4.0, 1.0, size=(60000, 2))
    good = pts[feasible_mask(sc.net, sc.solver, pts)]
    a, b = good[:10**4], good[10**4:2 * 10**4]
    bad = int(np.count_nonzero(~feasible_mask(sc.net, sc.solver, 0.5 * (a + b))))
    return bad == 0, f"{bad} violations in 10^4 pairs"


def _prop_g():
    worst = max(float(np.abs(gram_matrix(nf, T) - np.eye(nf + 1)).max()) for nf, T in [(29, 4.0), (40, 10.0)])
    return worst <= 1e-8, f"max dev {worst:.1e}"


def _prop_h():
    ch, bs = _smooth_chain()
    worst = 0.0
    for t in np.linspace(0, 5, 201):
        for k in range(1, ch.n):
            r = solve_chain(ch, bs, t, ch.lengths[k - 1], k) - solve_chain(ch, bs, t, 0.0, k + 1) - bs[k - 1](t)
            worst = max(worst, abs(r))
        worst = max(worst, abs(solve_chain(ch, bs, t, ch.lengths[-1], ch.n) - bs[-1](t)))
    return worst <= 1e-9, f"max residual {worst:.1e}"


def test_criterion_6_property_suite():
    checks = []
    for key, fun in zip("abcdefgh", (_prop_a, _prop_b, _prop_c, _prop_d, _prop_e, _prop_f, _prop_g, _prop_h)):
        ok, info = fun()
        checks.append((f"({key})", ok, info))
    report(6, checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
