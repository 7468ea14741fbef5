"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (see ``record`` in conftest); the lines
are repeated together in the terminal summary under "acceptance criteria".
Registration runs on the phantom are cached so that several criteria can
share one solve.
"""

import json
import time
from functools import lru_cache

import numpy as np
import pytest

from bioreg.cli import main
from bioreg.core import DisplacementField2D, pixel_coordinates
from bioreg.elasticity import Material, compliance_matrix, reg_bim, reg_l2grad, stiffness_matrix
from bioreg.errors import DegenerateSample
from bioreg.metrics import asd, boundary_points, dice, hausdorff, jaccard, jacobian_det_map, jacobian_metric, paired_ttest
from bioreg.objective import LossConfig, fd_gradient, loss_seg, loss_sim, total_loss
from bioreg.phantom import PhantomSpec, endpoint_error, make_pair
from bioreg.rasterio import Raster, parse, serialize
from bioreg.solver import SolverConfig, register
from bioreg.warp import warp_mask

from conftest import record, rel_err
from test_objective import instance

NOISE_SEED = 0


@lru_cache(maxsize=None)
def phantom(noise=0.0):
    return make_pair(PhantomSpec(noise=noise, seed=NOISE_SEED if noise else None))


@lru_cache(maxsize=None)
def solve(noise=0.0, lam=0.05, gamma=0.0, nu=0.4, with_masks=False):
    """Register the phantom pair; returns ``(result, seconds)``."""
    p = phantom(noise)
    cfg = SolverConfig(loss=LossConfig(lam=lam, gamma=gamma, material=Material(1.0, nu)))
    masks = (p.s_m, p.s_f) if with_masks else None
    t0 = time.perf_counter()
    res = register(p.I_m, p.I_f, masks, cfg)
    return res, time.perf_counter() - t0


def cavity_dice(p, u):
    return dice(warp_mask(p.s_m["cavity"], u, "hard"), p.s_f["cavity"])


def mean_disp(res):
    return float(res.u_star.magnitude().mean())


def test_1_stiffness_inverts_compliance():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        m = Material(float(rng.uniform(0.1, 100.0)), float(rng.uniform(0.0, 0.499)))
        worst = max(worst, np.abs(stiffness_matrix(m) @ compliance_matrix(m) - np.eye(3)).max())
    secs = time.perf_counter() - t0
    ok = record("1 stiffness", worst <= 1e-12 and secs < 1.0, f"max |C S - I| = {worst:.2e}, {secs:.3f} s")
    assert ok


def test_2_rigid_motions_cost_nothing():
    t0 = time.perf_counter()
    shape = (96, 96)
    x1, x2 = pixel_coordinates(shape)
    fields = [DisplacementField2D(np.full(shape, a), np.full(shape, b)) for a, b in ((1.0, 0.0), (-2.5, 3.7), (0.3, 0.3))]
    theta = 0.01
    fields.append(DisplacementField2D(-theta * x2, theta * x1))
    worst = max(reg_bim(u)[0] for u in fields)
    secs = time.perf_counter() - t0
    ok = record("2 rigid null space", worst < 1e-12 and secs < 1.0, f"max reg_bim = {worst:.2e}, {secs:.3f} s")
    assert ok


def _entries(rng, n):
    idx = rng.choice(2 * 12 * 12, size=n, replace=False)
    return [tuple(int(v) for v in np.unravel_index(k, (2, 12, 12))) for k in idx]


def _sampled(field, entries):
    a = field.to_array()
    return np.array([a[e] for e in entries])


def test_3_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = LossConfig(lam=0.05, gamma=0.01)
    worst = {}
    for seed in range(20):
        I_m, I_f, masks, u = instance(seed)
        s_m, s_f = masks
        funcs = {
            "sim": lambda v: loss_sim(I_f, I_m, v),
            "seg": lambda v: loss_seg(s_m, s_f, v),
            "bim": lambda v: reg_bim(v),
            "l2grad": lambda v: reg_l2grad(v),
            "total": lambda v: (lambda lb: (lb.total, lb.grad))(total_loss(cfg, I_m, I_f, masks, v)),
        }
        entries = _entries(rng, 48)
        for name, f in funcs.items():
            analytic = _sampled(f(u)[1], entries)
            fd = _sampled(fd_gradient(lambda v: f(v)[0], u, 1e-6, entries), entries)
            worst[name] = max(worst.get(name, 0.0), rel_err(analytic, fd))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and secs < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert record("3 gradient oracle", ok, f"worst rel. error {detail}; {secs:.1f} s")


def test_4_bim_is_quadratic_in_scale():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5):
        u = DisplacementField2D(rng.normal(size=(24, 24)), rng.normal(size=(24, 24)), (1.0, 1.3))
        base = reg_bim(u)[0]
        for s in (0.5, 2.0, 10.0):
            ratio = reg_bim(u * s)[0] / base
            worst = max(worst, abs(ratio / s**2 - 1.0))
    assert record("4 homogeneity", worst < 1e-10, f"max relative deviation {worst:.1e}")


def test_5a_phantom_endpoint_error():
    res, secs = solve()
    p = phantom()
    mean, mx = endpoint_error(res.u_star, p.u_gt, p.roi)
    ok = mean < 0.5 and mx < 1.5 and secs < 60.0
    assert record("5a phantom EPE", ok, f"mean {mean:.3f} mm, max {mx:.3f} mm, {res.iterations} iterations, {secs:.1f} s")


def test_5b_phantom_registered_dice():
    res, _ = solve()
    d = cavity_dice(phantom(), res.u_star)
    assert record("5b registered cavity Dice", d >= 0.95, f"{d:.4f} (need >= 0.95)")


def test_5c_phantom_unregistered_dice():
    p = phantom()
    d = cavity_dice(p, DisplacementField2D.zeros(p.I_f.shape, p.I_f.spacing))
    assert record("5c unregistered cavity Dice", d <= 0.90, f"{d:.4f} (need <= 0.90)")


def test_6_regularizer_smooths_noisy_result():
    r0, t0 = solve(noise=0.01, lam=0.0)
    r1, t1 = solve(noise=0.01, lam=0.05)
    j0, j1 = jacobian_metric(r0.u_star)[0], jacobian_metric(r1.u_star)[0]
    ok = j1 < j0 and t0 + t1 < 120.0
    assert record("6 |det J - 1| ordering", ok, f"lambda=0.05: {j1:.4f}, lambda=0: {j0:.4f}, {t0 + t1:.1f} s")


LAMBDAS = (0.005, 0.05, 0.5)


def test_7a_displacement_shrinks_with_lambda():
    mags = [mean_disp(solve(lam=lam)[0]) for lam in LAMBDAS]
    ok = all(a >= b for a, b in zip(mags, mags[1:]))
    detail = ", ".join(f"{lam}: {m:.4f}" for lam, m in zip(LAMBDAS, mags))
    assert record("7a mean |u| non-increasing in lambda", ok, detail + " mm")


def test_7b_dice_drops_at_large_lambda():
    p = phantom()
    d_mid = cavity_dice(p, solve(lam=0.05)[0].u_star)
    d_big = cavity_dice(p, solve(lam=0.5)[0].u_star)
    assert record("7b Dice lower at lambda=0.5", d_big < d_mid, f"lambda=0.5: {d_big:.4f}, lambda=0.05: {d_mid:.4f}")


def test_8_poisson_ratio_barely_matters():
    p = phantom()
    ds = [cavity_dice(p, solve(nu=nu)[0].u_star) for nu in (0.35, 0.4, 0.45)]
    spread = max(ds) - min(ds)
    assert record("8 nu insensitivity", spread < 0.02, f"Dice {', '.join(f'{d:.4f}' for d in ds)}; spread {spread:.4f}")


def test_9_segmentation_term_helps():
    p = phantom(0.01)
    d0 = cavity_dice(p, solve(noise=0.01, gamma=0.0, with_masks=True)[0].u_star)
    d1 = cavity_dice(p, solve(noise=0.01, gamma=0.01, with_masks=True)[0].u_star)
    assert record("9 gamma effect", d1 >= d0, f"gamma=0.01: {d1:.4f}, gamma=0: {d0:.4f}")


def _square(shape, r0, c0, n):
    m = np.zeros(shape, dtype=bool)
    m[r0:r0 + n, c0:c0 + n] = True
    return m


def _metric_examples():
    """Named example checks for the metrics module; returns failing names."""
    failed = []

    def check(name, cond):
        if not cond:
            failed.append(name)

    a = _square((10, 10), 1, 1, 4)
    b = _square((10, 10), 1, 3, 4)
    far = _square((10, 10), 6, 6, 3)
    check("dice a=a", dice(a, a) == 1.0)
    check("dice disjoint", dice(a, far) == 0.0)
    check("dice half overlap", dice(a, b) == 0.5)
    check("jaccard a=a", jaccard(a, a) == 1.0)
    check("jaccard disjoint", jaccard(a, far) == 0.0)
    check("jaccard half overlap", jaccard(a, b) == 8 / 24)

    single = np.zeros((5, 5), dtype=bool)
    single[2, 3] = True
    check("boundary single", boundary_points(single).tolist() == [[3.0, 2.0]])
    check("boundary square", len(boundary_points(_square((8, 8), 2, 2, 4))) == 12)
    full = np.ones((5, 5), dtype=bool)
    check("boundary full image", len(boundary_points(full)) == 16)

    check("hd a=a", hausdorff(a, a) == 0.0)
    check("hd unit squares 3 apart", hausdorff(_square((8, 8), 2, 1, 1), _square((8, 8), 2, 4, 1)) == 3.0)
    big, small = _square((20, 20), 2, 2, 14), _square((20, 20), 8, 8, 2)
    hd_bs = hausdorff(big, small)
    far_big = np.sqrt(((boundary_points(big)[:, None] - boundary_points(small)[None]) ** 2).sum(-1)).min(1).max()
    check("hd asymmetric", hd_bs == pytest.approx(far_big))
    check("asd a=a", asd(a, a) == 0.0)
    sq, moved = _square((20, 20), 3, 3, 10), _square((20, 20), 3, 6, 10)
    check("asd translation", 0.0 < asd(sq, moved) <= 3.0)

    shape = (12, 12)
    x1, x2 = pixel_coordinates(shape)
    z = DisplacementField2D.zeros(shape)
    check("det J identity", np.all(jacobian_det_map(z).data == 1.0) and jacobian_metric(z)[0] == 0.0)
    dil = DisplacementField2D(0.05 * x1, 0.05 * x2)
    check("det J dilation", np.allclose(jacobian_det_map(dil).data, 1.1025, atol=1e-12, rtol=0)
          and jacobian_metric(dil)[0] == pytest.approx(0.1025, abs=1e-12))
    th = 0.02
    rot = DisplacementField2D(-th * x2, th * x1)
    check("det J rotation", np.allclose(jacobian_det_map(rot).data, 1.0 + th * th, atol=1e-12, rtol=0))

    x = np.zeros(5)
    try:
        paired_ttest(x, x)
        check("t-test degenerate", False)
    except DegenerateSample:
        pass
    d = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    t, dof, p = paired_ttest(d, np.zeros(5))
    check("t-test reference", abs(t - 4.2426) < 1e-4 and dof == 4 and abs(p - 0.0132) < 1e-3)
    t2, _, p2 = paired_ttest(np.zeros(5), d)
    check("t-test sign flip", t2 == -t and p2 == p)
    return failed


def test_10_metric_examples_and_properties():
    failed = _metric_examples()
    rng = np.random.default_rng(10)
    identity_err, hd_lt_asd = 0.0, 0
    for _ in range(100):
        shape = tuple(rng.integers(4, 16, 2))
        a = rng.random(shape) < rng.uniform(0.1, 0.9)
        b = rng.random(shape) < rng.uniform(0.1, 0.9)
        a.flat[0] = b.flat[-1] = True
        d = dice(a, b)
        identity_err = max(identity_err, abs(jaccard(a, b) - d / (2 - d)))
        hd_lt_asd += hausdorff(a, b) < asd(a, b)
    ok = not failed and identity_err < 1e-12 and hd_lt_asd == 0
    detail = f"{'all examples pass' if not failed else 'failed: ' + ', '.join(failed)}; " \
             f"jaccard identity err {identity_err:.1e}; hd < asd in {hd_lt_asd}/100 pairs"
    assert record("10 metric checks", ok, detail)


def _random_raster(rng):
    kind = str(rng.choice(["image", "field", "mask"]))
    h, w = (int(v) for v in rng.integers(1, 24, 2))
    sp = tuple(float(v) for v in rng.uniform(0.05, 5.0, 2))
    if kind == "mask":
        c = int(rng.integers(1, 4))
        return Raster(kind, rng.integers(0, 2, (h, w, c)).astype(np.uint8), sp, tuple(f"s{k}" for k in range(c)))
    c = 1 if kind == "image" else 2
    bits = rng.integers(0, 2**32, (h, w, c), dtype=np.uint64).astype("<u4")
    return Raster(kind, bits.view("<f4"), sp)


def _run_cli(*argv):
    return main([str(a) for a in argv])


def test_11_round_trip_and_deterministic_reports(tmp_path):
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(100):
        r = _random_raster(rng)
        blob = serialize(r)
        back = parse(blob)
        same = (back.kind == r.kind and back.spacing == r.spacing and back.labels == r.labels
                and back.data.dtype == r.data.dtype and back.data.tobytes() == r.data.tobytes()
                and serialize(back) == blob)
        bad += not same

    pre = tmp_path / "ph"
    assert _run_cli("phantom", "--size", 48, "--ri", 7, "--ro", 11, "--out-prefix", pre) == 0
    args = ["--moving", f"{pre}_moving.brf", "--fixed", f"{pre}_fixed.brf",
            "--moving-masks", f"{pre}_moving_masks.brf", "--fixed-masks", f"{pre}_fixed_masks.brf",
            "--gt-dvf", f"{pre}_gt_dvf.brf", "--roi", f"{pre}_roi.brf", "--iters", 40]
    outputs = [tmp_path / "r.json", tmp_path / "m.json", tmp_path / "u.brf"]
    blobs = []
    for _ in range(2):
        # same output paths both times, since reports echo their file names
        assert _run_cli("register", *args, "--out-dvf", outputs[2], "--report", outputs[0]) == 0
        assert _run_cli("metrics", "--dvf", outputs[2], "--moving-masks", f"{pre}_moving_masks.brf",
                        "--fixed-masks", f"{pre}_fixed_masks.brf", "--report", outputs[1]) == 0
        blobs.append([p.read_bytes() for p in outputs])
        for p in outputs:
            p.unlink()
    deterministic = blobs[0] == blobs[1]
    json.loads(blobs[0][0])
    ok = bad == 0 and deterministic
    assert record("11 format round-trip", ok, f"{100 - bad}/100 rasters bit-exact; reports identical: {deterministic}")


SOLVER_RUNS = [
    dict(),
    dict(lam=0.005),
    dict(lam=0.5),
    dict(nu=0.35),
    dict(nu=0.45),
    dict(noise=0.01, lam=0.0),
    dict(noise=0.01, lam=0.05),
    dict(noise=0.01, gamma=0.0, with_masks=True),
    dict(noise=0.01, gamma=0.01, with_masks=True),
]


def test_solver_moving_average_trend():
    """The 10-iteration moving average of the total loss never rises."""
    rises = []
    for kw in SOLVER_RUNS:
        res, _ = solve(**kw)
        totals = np.array([h["total"] for h in res.history])
        ma = np.convolve(totals, np.ones(10) / 10, mode="valid")
        up = np.nonzero(np.diff(ma) > 0)[0]
        if up.size:
            rises.append(f"{kw or 'defaults'} first rise at {up[0] + 10}")
    detail = "no rises" if not rises else f"{len(rises)}/{len(SOLVER_RUNS)} runs rise; " + "; ".join(rises)
    assert record("solver moving-average trend", not rises, detail)
