"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the lines
interleaved with pytest's own output; they are printed either way).
"""
import json
import time

import numpy as np
import pytest

from ballotadv import channel as CH, classifiers as C, election as E, synth
from ballotadv.attacks import pgd, projections as P, sweep
from ballotadv.cli import main
from oracles import (best_k_subset, central_difference, l1_projection_bisection,
                     max_relative_error, moments_by_enumeration)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed <= limit
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                  f"({elapsed:.1f} s, limit {limit:g} s)")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def random_distributions(g, count):
    """Valid (p_b, delta) pairs with a strictly positive margin."""
    out = []
    while len(out) < count:
        p_b = g.uniform(0.001, 1.0)
        lo, hi = max(1e-3, 2 * p_b - 1), p_b
        if lo < hi:
            out.append((p_b, g.uniform(lo, hi)))
    return out


@pytest.fixture(scope="module")
def combined():
    return synth.generate_dataset(synth.DatasetSpec.preset("combined-small", seed=0))[0]


@pytest.fixture(scope="module")
def combined_linear(combined):
    return C.train(combined.split("train"), "linear", C.TrainConfig(lr=0.01, standardize=True))[0]


@pytest.fixture(scope="module")
def combined_mlp(combined):
    return C.train(combined.split("train"), "mlp", C.TrainConfig())[0]


def test_criterion_01_derivation_validation(report):
    t = time.perf_counter()
    gaps = []
    for delta in (0.04, 0.02, 0.08):
        dist = E.VoteDistribution(0.45, delta)
        a = E.solve_pc_star(dist, 100_000, 0.05)
        rate, _ = E.monte_carlo_success(dist, a.p_c_star, 100_000, 10_000, seed=1)
        gaps.append(abs(rate - 0.95))
    report(1, "Monte Carlo rate at p_c* within 0.01 of 0.95", all(g <= 0.01 for g in gaps),
           f"max |rate - 0.95| = {max(gaps):.4f} over delta in (0.04, 0.02, 0.08)",
           time.perf_counter() - t, 60)


def test_criterion_02_z_zero(report):
    t = time.perf_counter()
    worst = 0.0
    for p_b, delta in random_distributions(np.random.default_rng(2), 1000):
        honest = moments_by_enumeration(p_b, delta, 0.0)[0]
        attacked = moments_by_enumeration(p_b, delta, 1.0)[0]
        want = delta / (honest - attacked)
        got = E.solve_pc_star(E.VoteDistribution(p_b, delta), 100_000, 0.5).p_c_star
        worst = max(worst, abs(got - want))
    report(2, "p_c*(alpha=0.5) equals delta/d", worst <= 1e-12,
           f"max error {worst:.2e} on 1000 distributions", time.perf_counter() - t, 1)


def test_criterion_03_moments(report):
    t = time.perf_counter()
    g = np.random.default_rng(3)
    worst = 0.0
    for p_b, delta in random_distributions(g, 1000):
        p_c = g.uniform()
        m, v = E.compromised_vote_moments(E.VoteDistribution(p_b, delta), p_c)
        em, ev = moments_by_enumeration(p_b, delta, p_c)
        worst = max(worst, abs(m - em), abs(v - ev))
    report(3, "closed-form moments match enumeration", worst <= 1e-12,
           f"max error {worst:.2e} on 1000 cases", time.perf_counter() - t, 1)


def _kink_free(model, g):
    while True:
        x = g.uniform(0, 1, 2000)
        if not isinstance(model, C.Mlp) or np.min(np.abs(model.w1 @ x + model.b1)) > 1e-3:
            return x


def _rebuild(model, params):
    if isinstance(model, C.Mlp):
        return C.Mlp(*params)
    return C.LinearTwoLogit(params[0], params[1])


def test_criterion_04_gradients(report):
    t = time.perf_counter()
    g = np.random.default_rng(4)
    worst = 0.0
    for case in range(100):
        kind = ("linear", "mlp")[case % 2]
        loss = ("ce", "dlr")[(case // 2) % 2]
        model = C.init_model(kind, 100 + case, hidden=16)
        if kind == "linear":
            model = C.LinearTwoLogit(g.normal(0, 0.05, 2000), g.normal())
        x = _kink_free(model, g)
        y = int(g.integers(2))
        coords = g.choice(2000, 10, replace=False)
        fd = central_difference(lambda v: C.LOSSES[loss](model.logits(v[None]), y)[0][0], x, coords)
        worst = max(worst, max_relative_error(C.grad_input(model, x, y, loss)[coords], fd))
        params = [np.array(p, dtype=np.float64) for p in model.parameters()]
        _, grads = C.grad_params(model, x[None], [y], loss)
        for pi, p in enumerate(params):
            pc = g.choice(p.size, min(5, p.size), replace=False)

            def f(v, pi=pi):
                trial = [q.copy() for q in params]
                trial[pi] = v
                return C.grad_params(_rebuild(model, trial), x[None], [y], loss)[0]

            fd = central_difference(f, p, pc)
            worst = max(worst, max_relative_error(np.asarray(grads[pi]).reshape(-1)[pc], fd))
    report(4, "input and parameter gradients match finite differences", worst <= 1e-4,
           f"max relative error {worst:.2e} over 100 cases", time.perf_counter() - t, 30)


def test_criterion_05_projections(report):
    t = time.perf_counter()
    g = np.random.default_rng(5)
    l1_worst = 0.0
    for _ in range(10_000):
        v = g.normal(0, 1, 8)
        eps = g.uniform(0.05, 4.0)
        l1_worst = max(l1_worst, np.max(np.abs(P.project_l1(v, eps) - l1_projection_bisection(v, eps))))
    topk_ok = True
    for _ in range(200):
        v = g.normal(0, 1, 12)
        k = int(g.integers(1, 12))
        kept = P.project_l0_topk(v, k)
        topk_ok &= abs(np.sum(kept ** 2) - best_k_subset(v, k)) <= 1e-12 and np.count_nonzero(kept) <= k
    x = g.uniform(0, 1, (50, 2000))
    d = g.normal(0, 0.3, (50, 2000))
    sig = P.sigma_map(x)
    idem = {
        "linf": lambda u: P.project_linf(u, 0.1),
        "l2": lambda u: P.project_l2(u, 2.0),
        "l1": lambda u: P.project_l1(u, 5.0),
        "l0": lambda u: P.project_l0_topk(u, 20),
        "l0_linf": lambda u: P.project_l0_linf(u, 20, 0.25),
        "l0_sigma": lambda u: P.project_l0_sigma(u, x, 20, 10.0, sig),
        "box": lambda u: P.project_box(u, x),
    }
    idem_ok = all(np.allclose(f(f(d)), f(d), rtol=0, atol=1e-12) for f in idem.values())
    report(5, "projections match oracles and are idempotent", l1_worst <= 1e-9 and topk_ok and idem_ok,
           f"l1 max error {l1_worst:.2e} on 10000 instances, top-k exhaustive "
           f"{'ok' if topk_ok else 'mismatch'}, idempotence {'ok' if idem_ok else 'broken'}",
           time.perf_counter() - t, 60)


def test_criterion_06_clean_accuracy(report, combined, combined_mlp):
    t = time.perf_counter()
    bubbles = synth.generate_dataset(synth.DatasetSpec.preset("bubbles-small", seed=0))[0]
    mlp_b = C.train(bubbles.split("train"), "mlp", C.TrainConfig())[0]
    acc_b = C.evaluate(mlp_b, bubbles.split("val"))[0]
    val = combined.split("val")
    acc_c = C.evaluate(combined_mlp, val)[0]
    acc_cb = C.evaluate(combined_mlp, val.only("blank", "filled"))[0]
    ok = acc_b >= 0.99 and acc_c >= 0.97 and acc_cb >= 0.99
    report(6, "clean accuracy", ok,
           f"bubbles model on bubbles val {acc_b:.4f}, combined model on combined val {acc_c:.4f}, "
           f"on bubbles-only val {acc_cb:.4f}", time.perf_counter() - t, 300)


def test_criterion_07_attack_sanity(report, combined, combined_linear, combined_mlp):
    t = time.perf_counter()
    val = combined.split("val")
    cfg = sweep.default_config("linf", {"epsilon": 1.0})
    unbounded = sweep.robust_accuracy(combined_linear, val, cfg)
    bad = []
    for name, model, subset in (("linear", combined_linear, val), ("mlp", combined_mlp, val.subset(np.arange(250)))):
        for kind in pgd.KINDS:
            acc = [r.robust_accuracy for r in sweep.attack_sweep(model, subset, sweep.grid_configs(kind))]
            if any(b > a for a, b in zip(acc, acc[1:])):
                bad.append(f"{name}/{kind} {acc}")
    report(7, "attack sanity", unbounded == 0.0 and not bad,
           f"linear robust accuracy at linf eps=255/255 = {unbounded:.3f}; six-budget grids "
           f"{'non-increasing for every kind' if not bad else 'increase in ' + '; '.join(bad)}",
           time.perf_counter() - t, 300)


def test_criterion_08_dlr(report):
    t = time.perf_counter()
    z = np.random.default_rng(8).normal(0, 10, (10_000, 2))
    l0, _ = C.dlr_binary(z, 0)
    l1, _ = C.dlr_binary(z, 1)
    eq = np.repeat(z[:, :1], 2, axis=1)
    e0, _ = C.dlr_binary(eq, 0)
    e1, _ = C.dlr_binary(eq, 1)
    ok = np.array_equal(l0, -l1) and not np.any(e0) and not np.any(e1)
    report(8, "DLR antisymmetry and zero at equal logits", ok, "10000 random logit pairs",
           time.perf_counter() - t, 1)


def test_criterion_09_channel(report, combined, combined_mlp):
    t = time.perf_counter()
    val = combined.split("val")
    cfg = sweep.default_config("linf", {"epsilon": 16 / 255}, steps_scale=0.2)
    out = sweep.run_attack(combined_mlp, val, cfg)
    adv = CH.AdvSet(val.x[out.eligible], out.x_adv, out.labels, out.eligible)
    robust, _ = CH.physical_robust_accuracy(combined_mlp, adv, CH.preset("identity"))
    g = np.random.default_rng(9)
    ident = 0.0
    for _ in range(20):
        a = g.uniform(size=(40, 50))
        ident = max(ident, CH.rmse(a, a), CH.kl_divergence_hist(a, a), abs(CH.ssim(a, a) - 1))
    calib = 0.0
    x = val.x[:100] * 0.9 + 0.05
    for scale, offset in ((0.8, 0.05), (0.6, 0.2), (1.02, -0.03), (0.9, 0.0)):
        ch = CH.ChannelConfig(contrast_scale=scale, contrast_offset=offset, quant_levels=None)
        batch = CH.scan(x, ch)
        s, o = CH.calibrate_contrast(batch)
        calib = max(calib, np.max(np.abs(CH.apply_calibration(batch.images, s, o).reshape(x.shape) - x)))
    ok = robust == out.robust_accuracy and ident <= 1e-12 and calib <= 1e-3
    report(9, "channel identities", ok,
           f"identity channel robust accuracy {robust:.4f} vs digital {out.robust_accuracy:.4f}; "
           f"metric identity error {ident:.1e}; calibration error {calib:.1e}",
           time.perf_counter() - t, 60)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_pipeline(report, tmp_path):
    times = []
    for name in ("first", "second"):
        t = time.perf_counter()
        code = main(["run", "--seed", "0", "--out", str(tmp_path / name)])
        times.append(time.perf_counter() - t)
        assert code == 0
    a, b = _tree(tmp_path / "first"), _tree(tmp_path / "second")
    rep = tmp_path / "first" / "report"
    shaped = all((rep / f).is_file() for f in ("table2_digital.csv", "table3_physical.csv",
                                                "table4_fidelity.csv"))
    gen = json.loads((tmp_path / "first" / "data" / "run-manifest.json").read_text())
    n_images = sum(gen["settings"]["spec"]["counts"].values())
    summary = (rep / "summary.txt").read_text().strip().splitlines()[-1].strip()
    ok = a == b and shaped and n_images == 5000 and max(times) <= 600
    report(10, "physical-gap pipeline", ok,
           f"{n_images} images, {len(a)} files byte-identical across runs: {a == b}; "
           f"{summary}", max(times), 600)
