import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ballotadv import classifiers as C, synth
from ballotadv.attacks import pgd, sweep
from ballotadv.attacks.pgd import AttackConfig, NormConstraint
from ballotadv.data import BubbleSet
from oracles import linear_linf_optimum


def _linear(seed, scale=0.05):
    g = np.random.default_rng(seed)
    return C.LinearTwoLogit(g.normal(0, scale, 2000), g.normal(0, 0.5))


@pytest.fixture(scope="module")
def small_data():
    spec = synth.DatasetSpec({"blank": 300, "filled": 120, "penrest": 40, "check": 40,
                              "cross": 40, "line_fill": 40, "scribble": 40}, seed=5)
    ds, _ = synth.generate_dataset(spec)
    return ds


@pytest.fixture(scope="module")
def trained_linear(small_data):
    m, _ = C.train(small_data.split("train"), "linear",
                   C.TrainConfig(epochs=10, lr=0.01, standardize=True))
    return m


@pytest.fixture(scope="module")
def trained_mlp(small_data):
    m, _ = C.train(small_data.split("train"), "mlp", C.TrainConfig(epochs=15, batch_size=32))
    return m


ALL_CONSTRAINTS = [NormConstraint("linf", 8 / 255), NormConstraint("l2", 1.5),
                   NormConstraint("l1", 6.0), NormConstraint("l0", 0.0, 15),
                   NormConstraint("l0_linf", 32 / 255, 25),
                   NormConstraint("l0_sigma", 0.0, 30, 10.0)]


# ---------------------------------------------------------------- configuration


def test_constraint_validation():
    with pytest.raises(pgd.AttackConfigError):
        NormConstraint("l3", 1.0)
    with pytest.raises(pgd.AttackConfigError):
        NormConstraint("linf", -0.1)
    with pytest.raises(pgd.AttackConfigError):
        NormConstraint("l0", 0.0, 0)
    with pytest.raises(pgd.AttackConfigError):
        NormConstraint("l0_sigma", 0.0, 5)
    with pytest.raises(pgd.AttackConfigError):
        AttackConfig(NormConstraint("l2", 1.0), restarts=0)
    with pytest.raises(pgd.AttackConfigError):
        AttackConfig(NormConstraint("l2", 1.0), step_size_init=0.0)
    with pytest.raises(pgd.AttackConfigError):
        AttackConfig(NormConstraint("l2", 1.0), direction="sideways")


def test_config_json_round_trip():
    cfg = AttackConfig(NormConstraint("l0_sigma", 0.0, 3, 10.0), steps=75, step_size_init=15.0,
                       restarts=10, random_start=True, loss_kind="ce", direction="under", seed=4)
    doc = json.loads(json.dumps(cfg.to_dict()))
    assert AttackConfig.from_dict(doc) == cfg
    with pytest.raises(pgd.AttackConfigError, match="unknown"):
        AttackConfig.from_dict({**doc, "momentum": 0.75})


def test_constraint_nesting():
    a, b = NormConstraint("l0_linf", 16 / 255, 20), NormConstraint("l0_linf", 64 / 255, 20)
    assert b.contains(a) and not a.contains(b)
    assert not NormConstraint("l2", 5).contains(NormConstraint("l1", 1))
    assert NormConstraint("linf", 0.1).contains(NormConstraint("linf", 0.1))


def test_checkpoint_schedule():
    assert pgd.checkpoints(100) == [22, 41, 57, 70, 80, 87, 93, 99]
    assert pgd.checkpoints(1) == [1]


# ---------------------------------------------------------------- single attacks


@pytest.mark.parametrize("kind", ["linf", "l2", "l1", "l0_linf"])
def test_zero_budget_is_identity(kind):
    m = _linear(0)
    g = np.random.default_rng(1)
    x = g.uniform(size=(40, 50))
    k = 5 if kind == "l0_linf" else None
    for label in (0, 1):
        ex = pgd.pgd_attack(m, x, label, AttackConfig(NormConstraint(kind, 0.0, k), steps=10,
                                                      random_start=True))
        assert np.array_equal(ex.x_adv, x)
        assert ex.success == bool(C.predict(m, x) != label)


def test_linear_linf_reaches_analytic_optimum():
    g = np.random.default_rng(2)
    for case in range(40):
        m = _linear(case)
        x = g.uniform(size=2000)
        label = int(g.integers(2))
        eps = float(g.choice([1 / 255, 4 / 255, 16 / 255, 0.5]))
        cfg = AttackConfig(NormConstraint("linf", eps), steps=5, step_size_init=2 * eps,
                           stop_on_success=False)
        ex = pgd.pgd_attack(m, x, label, cfg)
        best, x_star = linear_linf_optimum(m.weights, m.bias, x, label, eps)
        assert abs(ex.final_loss - best) <= 1e-9
        assert np.max(np.abs(ex.x_adv - x_star)) <= 1e-12
        assert ex.success == (C.predict(m, x_star) != label)


def test_linear_success_rule_matches_closed_form():
    g = np.random.default_rng(3)
    for case in range(30):
        m = _linear(case, scale=0.002)
        x = np.full(2000, 0.5)
        eps = 0.01
        s = float(m.weights @ x + m.bias)
        label = int(s > 0)
        ex = pgd.pgd_attack(m, x, label, AttackConfig(NormConstraint("linf", eps), steps=3))
        reach = s - eps * np.abs(m.weights).sum() if label == 1 else s + eps * np.abs(m.weights).sum()
        flipped = reach <= 0 if label == 1 else reach > 0
        assert ex.success == flipped


@pytest.mark.parametrize("constraint", ALL_CONSTRAINTS, ids=lambda c: c.kind)
def test_results_are_feasible(constraint, trained_mlp, small_data):
    ds = small_data.split("val")
    cfg = AttackConfig(constraint, steps=20, random_start=True, restarts=2, seed=3)
    res = pgd.attack_batch(trained_mlp, ds.x, ds.labels, cfg)
    delta = res.x_adv - ds.x
    assert np.all(res.x_adv >= 0) and np.all(res.x_adv <= 1)
    assert np.all(constraint.satisfied(delta, ds.x))
    np.testing.assert_array_equal(res.success, C.predict(trained_mlp, res.x_adv) != ds.labels)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(ALL_CONSTRAINTS), st.integers(0, 2**31 - 1), st.booleans())
def test_feasible_on_random_linear_models(constraint, seed, random_start):
    g = np.random.default_rng(seed)
    m = _linear(seed)
    x = g.uniform(size=(3, 2000))
    y = g.integers(0, 2, 3)
    cfg = AttackConfig(constraint, steps=8, random_start=random_start, seed=seed)
    res = pgd.attack_batch(m, x, y, cfg)
    assert np.all(constraint.satisfied(res.x_adv - x, x))
    assert np.all((res.x_adv >= 0) & (res.x_adv <= 1))


def test_attacks_are_deterministic_and_job_independent(trained_mlp, small_data):
    ds = small_data
    cfg = AttackConfig(NormConstraint("l0", 0.0, 10), steps=5, random_start=True, restarts=2, seed=9)
    a = pgd.attack_batch(trained_mlp, ds.x[:150], ds.labels[:150], cfg, jobs=1)
    b = pgd.attack_batch(trained_mlp, ds.x[:150], ds.labels[:150], cfg, jobs=3)
    assert a.x_adv.tobytes() == b.x_adv.tobytes()
    assert np.array_equal(a.steps, b.steps) and np.array_equal(a.success, b.success)


def test_random_start_depends_on_example_index_not_batch(trained_mlp, small_data):
    cfg = AttackConfig(NormConstraint("linf", 4 / 255), steps=3, random_start=True, seed=1)
    x, y = small_data.x[:10], small_data.labels[:10]
    full = pgd.attack_batch(trained_mlp, x, y, cfg)
    part = pgd.attack_batch(trained_mlp, x[5:], y[5:], cfg, indices=np.arange(5, 10))
    assert full.x_adv[5:].tobytes() == part.x_adv.tobytes()


def test_more_restarts_never_hurt(trained_mlp, small_data):
    ds = small_data.split("val")
    base = AttackConfig(NormConstraint("l0", 0.0, 20), steps=10, random_start=True, seed=2)
    one = pgd.attack_batch(trained_mlp, ds.x, ds.labels, base)
    three = pgd.attack_batch(trained_mlp, ds.x, ds.labels,
                             AttackConfig(**{**base.__dict__, "restarts": 3}))
    assert np.all(three.success >= one.success)


def test_perceptron_l2_breaks_a_blank_bubble(trained_mlp, small_data):
    blanks = small_data.split("val").only("blank")
    ok = np.flatnonzero(C.predict(trained_mlp, blanks.x) == 0)
    cfg = sweep.default_config("l2", {"epsilon": 2.0}, direction="over")
    res = pgd.attack_batch(trained_mlp, blanks.x[ok], 0, cfg)
    assert res.success.any()


# ---------------------------------------------------------------- robust accuracy


def test_zero_budget_keeps_full_accuracy(trained_linear, small_data):
    ds = small_data.split("val")
    cfg = AttackConfig(NormConstraint("linf", 0.0), steps=5)
    assert sweep.robust_accuracy(trained_linear, ds, cfg) == 1.0


def test_unbounded_linf_breaks_linear_model(trained_linear, small_data):
    ds = small_data.split("val")
    cfg = sweep.default_config("linf", {"epsilon": 1.0}, steps_scale=0.02)
    assert sweep.robust_accuracy(trained_linear, ds, cfg) == 0.0


def test_direction_eligibility(trained_linear, small_data):
    ds = small_data.split("val")
    cfg = AttackConfig(NormConstraint("l2", 1.0), steps=5)
    for direction, label in (("over", 0), ("under", 1)):
        out = sweep.run_attack(trained_linear, ds, AttackConfig(**{**cfg.__dict__, "direction": direction}))
        assert np.all(ds.labels[out.eligible] == label)
        assert np.all(C.predict(trained_linear, ds.x[out.eligible]) == label)
    both = sweep.run_attack(trained_linear, ds, cfg)
    assert len(both.eligible) == int(np.sum(C.predict(trained_linear, ds.x) == ds.labels))


def test_empty_dataset_rejected(trained_linear):
    empty = BubbleSet(np.zeros((0, 40, 50)), [], [])
    with pytest.raises(ValueError, match="empty"):
        sweep.robust_accuracy(trained_linear, empty, AttackConfig(NormConstraint("linf", 0.1)))


def test_single_config_sweep_equals_robust_accuracy(trained_mlp, small_data):
    ds = small_data.split("val")
    cfg = sweep.default_config("l2", {"epsilon": 1.0}, steps_scale=0.2)
    rows = sweep.attack_sweep(trained_mlp, ds, [cfg])
    assert rows[0].robust_accuracy == sweep.robust_accuracy(trained_mlp, ds, cfg)


def test_duplicate_rows_identical(trained_mlp, small_data):
    ds = small_data.split("val")
    cfg = sweep.default_config("l1", {"epsilon": 4.0}, steps_scale=0.1)
    a, b = sweep.attack_sweep(trained_mlp, ds, [cfg, cfg])
    assert a == b


@pytest.mark.parametrize("kind", sweep.BUDGET_GRIDS)
def test_grid_sweep_is_monotone(kind, trained_linear, small_data):
    ds = small_data.split("val")
    configs = sweep.grid_configs(kind, steps_scale=0.05)
    rows = sweep.attack_sweep(trained_linear, ds, configs)
    accs = [r.robust_accuracy for r in rows]
    assert all(b <= a for a, b in zip(accs, accs[1:]))
    assert all(r.success_over + r.success_under == round((1 - r.robust_accuracy) * r.n_eval)
               for r in rows)


def test_carry_forward_counts_nested_successes(trained_mlp, small_data):
    ds = small_data.split("val")
    small = sweep.default_config("l2", {"epsilon": 2.0}, steps_scale=0.3)
    # A deliberately weak attack at the larger budget.
    weak = AttackConfig(NormConstraint("l2", 3.0), steps=1, step_size_init=1e-6)
    rows, outs = sweep.attack_sweep(trained_mlp, ds, [small, weak], keep_outcomes=True)
    assert rows[1].robust_accuracy <= rows[0].robust_accuracy
    plain = sweep.attack_sweep(trained_mlp, ds, [small, weak], carry_forward=False)
    assert plain[1].robust_accuracy >= rows[1].robust_accuracy


def test_imperceptible_budgets():
    cfgs = sweep.imperceptible_configs()
    assert [c.constraint.kind for c in cfgs] == list(pgd.KINDS)
    labels = [sweep.budget_label(c) for c in cfgs]
    assert labels == ["eps=16/255", "eps=2", "eps=20", "k=1", "k=20,eps=64/255", "k=1,kappa=10"]


def test_sweep_csv(tmp_path, trained_linear, small_data):
    ds = small_data.split("val")
    cfg = AttackConfig(NormConstraint("linf", 0.0), steps=1)
    rows = sweep.attack_sweep(trained_linear, ds, [cfg])
    p = tmp_path / "s.csv"
    sweep.write_sweep_csv(p, rows, {"model": "lin"})
    lines = p.read_text().splitlines()
    assert lines[0] == "model," + ",".join(sweep.SWEEP_COLUMNS)
    assert lines[1].startswith("lin,linf,0.000000,,,both,")
