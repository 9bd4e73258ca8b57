"""End-to-end acceptance criteria; each test prints one PASS/FAIL line before asserting."""
import math
import time

import numpy as np
import pytest

from mdsf import checks
from mdsf import losses as L
from mdsf.attention import dilated_attention_branch
from mdsf.bench import doubling_ratios, scan_bench
from mdsf.cli import surface_rows
from mdsf.fusion import DFMambaEncoder, afr, scm_blend
from mdsf.pyramid import PyramidSet
from mdsf.synthetic import smoke_train
from mdsf.tensor import Tensor


def report(n, ok, detail):
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")


def test_c01_scan_oracle():
    t0 = time.perf_counter()
    err = checks.scan_oracle_error(20, seed=0)
    dt = time.perf_counter() - t0
    ok = err <= 1e-10 and dt < 5
    report(1, ok, f"max abs err {err:.2e} (tol 1e-10), {dt:.2f}s (limit 5s)")
    assert ok


@pytest.mark.slow
def test_c02_linear_scan_quadratic_attention():
    t0 = time.perf_counter()
    rows = scan_bench((8192, 16384, 32768), reps=9)
    dt = time.perf_counter() - t0
    scan = doubling_ratios([r.scan_ns for r in rows])
    attn = doubling_ratios([r.attn_ns for r in rows])
    ok = all(1.6 <= r <= 2.6 for r in scan) and all(r >= 3.2 for r in attn) and dt < 120
    report(2, ok, f"scan ratios {[round(r, 2) for r in scan]} in [1.6, 2.6], "
                  f"attention ratios {[round(r, 2) for r in attn]} >= 3.2, {dt:.1f}s (limit 120s)")
    assert ok


def test_c03_receptive_field():
    rng = np.random.default_rng(3)
    worst = 0.0
    probes = 0
    for d in (1, 2, 3):
        Q, K, V = (rng.standard_normal((4, 12, 12)) for _ in range(3))
        base = dilated_attention_branch(Q, K, V, d).data
        while probes < 50 * d:
            p, q = rng.integers(0, 12, 2), rng.integers(0, 12, 2)
            if np.abs(p - q).max() <= d:
                continue
            Q2, K2, V2 = Q.copy(), K.copy(), V.copy()
            for arr in (Q2, K2, V2):
                arr[:, q[0], q[1]] += rng.standard_normal(4)
            out = dilated_attention_branch(Q2, K2, V2, d).data
            worst = max(worst, np.abs(out[:, p[0], p[1]] - base[:, p[0], p[1]]).max())
            probes += 1
    ok = worst == 0.0
    report(3, ok, f"max change outside radius {worst:g} over {probes} probes (d = 1, 2, 3; must be exactly 0)")
    assert ok


def test_c04_msda_oracle():
    err = checks.msda_oracle_error(20, seed=0, size=8)
    ok = err <= 1e-10
    report(4, ok, f"8x8 max abs err {err:.2e} (tol 1e-10)")
    assert ok


def test_c05_closed_forms():
    w_a = float(L.wasserstein_sq([0, 0, 2, 2], [3, 4, 2, 2]).data)
    w_b = float(L.wasserstein_sq([0, 0, 2, 2], [0, 0, 4, 6]).data)
    tau_s = L.LossConfig().tau_s
    omega = float(L.area_weight(tau_s, tau_s).data)
    e = np.array([[1.0, -2.0, 0.0]])
    csc = float(L.csc_loss(e, e, [[0.0, 0.0, 3.0]]).data)
    ok = w_a == 25.0 and w_b == 5.0 and abs(omega - math.exp(-1)) <= 1e-12 and abs(csc - 2 / 3) <= 1e-12
    report(5, ok, f"W2^2 = {w_a!r}, {w_b!r} (exact 25, 5); omega err {abs(omega - math.exp(-1)):.1e}; "
                  f"csc err {abs(csc - 2 / 3):.1e} (tol 1e-12)")
    assert ok


def _fd_cx(fn, p, g, h=1e-6):
    hi, lo = np.array(p, float), np.array(p, float)
    hi[0] += h
    lo[0] -= h
    return (float(fn(hi, g).data) - float(fn(lo, g).data)) / (2 * h)


def test_c06_zero_iou_gradient():
    rng = np.random.default_rng(6)
    tau_s = L.LossConfig().tau_s
    weakest, iou_worst, pairs = math.inf, 0.0, 0
    while pairs < 20:
        gw, gh = rng.uniform(0.005, 0.03, 2)
        if gw * gh > 0.1 * tau_s:
            continue
        g = [rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), gw, gh]
        p = [g[0] + rng.choice([-1, 1]) * rng.uniform(0.05, 0.3), g[1] + rng.uniform(-0.02, 0.02),
             rng.uniform(0.005, 0.03), rng.uniform(0.005, 0.03)]
        if float(L.iou(p, g).data) != 0.0:
            continue
        weakest = min(weakest, abs(_fd_cx(L.sa_wiou, p, g)))
        iou_worst = max(iou_worst, abs(_fd_cx(L.iou_loss, p, g)))
        pairs += 1
    surface = np.array([r[1] for r in surface_rows("sawiou", 41)])
    decreasing = bool(np.all(np.diff(surface) < 0))
    ok = weakest > 1e-6 and iou_worst == 0.0 and decreasing
    report(6, ok, f"min |dSA-WIoU/dcx| {weakest:.2e} (> 1e-6), max |d(1-IoU)/dcx| {iou_worst:g} (== 0) "
                  f"over {pairs} disjoint pairs; surface strictly decreasing: {decreasing}")
    assert ok


@pytest.mark.slow
def test_c07_gradient_suite():
    t0 = time.perf_counter()
    results = checks.run_gradcheck("all", seed=7)
    dt = time.perf_counter() - t0
    worst = {suite: max(r.values()) for suite, r in results.items()}
    ok = all(err <= checks.tolerance(s) for s, err in worst.items()) and dt < 600
    detail = ", ".join(f"{s} {e:.1e}/{checks.tolerance(s):g}" for s, e in worst.items())
    report(7, ok, f"{detail}; {dt:.0f}s (limit 600s)")
    assert ok


def _cross_grad(enc, levels, src, dst, rng):
    """Largest |d <w, E_dst> / d N_src| for a random probe vector w."""
    xs = [Tensor(m, requires_grad=True) for m in levels]
    out = enc(PyramidSet(*xs))[dst]
    (out * Tensor(rng.standard_normal(out.shape))).sum().backward()
    g = xs[src - 3].grad
    return 0.0 if g is None else float(np.abs(g).max())


def test_c08_alpha_identity_and_cross_scale_flow():
    rng = np.random.default_rng(8)
    branch, gate = rng.standard_normal((2, 4, 4)), rng.uniform(size=(2, 4, 4))
    blend_exact = np.array_equal(scm_blend(branch, gate, 0.0).data, branch)

    enc = DFMambaEncoder(6, (1, 2, 3), 3, rng=rng)
    levels = [rng.standard_normal((6, s, s)) for s in (8, 4, 2)]
    enc.set_alpha(0.0)
    out = enc(PyramidSet(*(Tensor(m) for m in levels)))
    encoder_exact = all(np.array_equal(e.data, afr(enc.levels[i].msda(levels[i]), levels[i],
                                                   enc.levels[i].ln_w, enc.levels[i].ln_b).data)
                        for i, e in enumerate(out))
    enc.set_alpha(1.0)
    pairs = [(4, 3), (3, 4), (5, 4), (4, 5)]
    active = min(_cross_grad(enc, levels, s, d, rng) for s, d in pairs)
    enc.zero_modulator_projection()
    zeroed = max(_cross_grad(enc, levels, s, d, rng) for s, d in pairs)
    ok = blend_exact and encoder_exact and active >= 1e-8 and zeroed <= 1e-12
    report(8, ok, f"alpha=0 identity: blend {blend_exact}, encoder {encoder_exact}; "
                  f"min adjacent |dE/dN| {active:.2e} (>= 1e-8), with W_p zeroed {zeroed:g} (<= 1e-12)")
    assert ok


@pytest.mark.slow
def test_c09_smoke_training():
    t0 = time.perf_counter()
    first = smoke_train(steps=300, size=64, seed=0)
    dt = time.perf_counter() - t0
    second = smoke_train(steps=300, size=64, seed=0)
    totals = np.array([r.total for r in first])
    ratio = totals[-1] / totals[0]
    finite = all(r.first_nonfinite() is None for r in first)
    same = [r.as_dict() for r in first] == [r.as_dict() for r in second]
    ok = ratio <= 0.5 and finite and same and dt < 600
    report(9, ok, f"total {totals[0]:.4f} -> {totals[-1]:.4f} (ratio {ratio:.3f} <= 0.5), finite {finite}, "
                  f"deterministic {same}, {dt:.1f}s per run (limit 600s)")
    assert ok


def test_c10_csc_scale_invariance():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(50):
        G = int(rng.integers(1, 6))
        e3, e4, e5 = (rng.standard_normal((G, 8)) for _ in range(3))
        s = rng.uniform(0.01, 100, 3)
        a = float(L.csc_loss(e3, e4, e5).data)
        b = float(L.csc_loss(s[0] * e3, s[1] * e4, s[2] * e5).data)
        c = float(L.csc_loss(2 * e3, 3 * e4, 5 * e5).data)
        worst = max(worst, abs(a - b), abs(a - c))
    ok = worst <= 1e-12
    report(10, ok, f"max |csc - csc(rescaled)| {worst:.1e} over 50 trials (tol 1e-12)")
    assert ok
