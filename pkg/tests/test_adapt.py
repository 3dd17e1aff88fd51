import numpy as np
import pytest

from helpers_objective import baseline_gradient_error, imuda_gradient_error, random_instance
from imuda.adapt import (
    AdaptConfig,
    adapt_baseline,
    adapt_imuda,
    build_network,
    continue_pretraining,
    evaluate,
    imuda_objective,
    pretrain,
)
from imuda.data import LabeledDataset, gen_blobs
from imuda.errors import ConfigError, DimensionError
from imuda.experiments import fit_gmm, make_pseudo, make_scenario
from imuda.ndcore import make_rng, one_hot

FAST = dict(iterations=60, projections=16, batch_size=32, pretrain_epochs=10, eval_every=20)


@pytest.fixture(scope="module")
def moons():
    sc = make_scenario("two-moons", 0, n=200)
    cfg = AdaptConfig(**FAST)
    params0 = pretrain(sc.source, cfg)
    pseudo = make_pseudo(fit_gmm(params0, sc.source, cfg), params0, sc.source, cfg)
    return sc, cfg, params0, pseudo


def test_config_defaults_and_validation():
    cfg = AdaptConfig()
    assert (cfg.lam, cfg.tau, cfg.projections) == (1e-2, 0.95, 100)
    with pytest.raises(ConfigError, match="term_mask"):
        AdaptConfig(term_mask=(False, False, False, False))
    with pytest.raises(ConfigError, match="batch_size"):
        AdaptConfig(batch_size=1)
    with pytest.raises(ConfigError, match="tau"):
        AdaptConfig(tau=1.0)
    assert AdaptConfig.from_dict(cfg.to_dict()) == cfg


def test_evaluate_counts():
    net = build_network(AdaptConfig(hidden=(), embed_dim=2, embed_activation="linear"), 2, 2)
    net.encoder[0].weight[:] = np.eye(2)
    net.classifier[0].weight[:] = np.eye(2)
    x = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5)
    truth = [0] * 5 + [1] * 5
    assert evaluate(net, LabeledDataset(x, one_hot(truth, 2))).accuracy == 1.0
    wrong = [0] * 5 + [1, 1, 0, 0, 0]  # 7 of 10 correct
    ev = evaluate(net, LabeledDataset(x, one_hot(wrong, 2)))
    assert ev.accuracy == 0.7
    assert ev.confusion.tolist() == [[5, 3], [0, 2]]
    net.classifier[0].bias[:] = [100.0, 0.0]  # constant class-0 predictor
    balanced = LabeledDataset(np.vstack([x, x[::-1]]), one_hot(truth + truth[::-1], 2))
    assert evaluate(net, balanced).accuracy == 0.5


@pytest.mark.parametrize("seed", range(4))
def test_imuda_objective_gradient(seed):
    err, gap = imuda_gradient_error(seed)
    assert gap > 1e-4
    assert err < 1e-4


@pytest.mark.parametrize("mask", [(True, False, False, False), (False, True, False, False),
                                  (False, False, True, False), (False, False, False, True)])
def test_each_term_gradient(mask):
    err, _ = imuda_gradient_error(11, mask=mask)
    assert err < 1e-4


def test_deeper_net_gradient():
    err, gap = imuda_gradient_error(5, hidden=(4,), f=3, k=3, n=5)
    assert gap > 1e-4 and err < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_baseline_objective_gradient(seed):
    assert baseline_gradient_error(seed) < 1e-4


def test_total_is_masked_weighted_sum():
    net, xs, ys, xt, zp, yp, proj = random_instance(1)
    terms, total, _ = imuda_objective(net, xs, ys, xt, zp, yp, proj, 0.3, (True, False, True, False))
    assert total == pytest.approx(0.3 * terms[0] + terms[2], abs=1e-12)


def test_pretrain_zero_epochs_and_determinism():
    src = gen_blobs(2, 50, [[-3, 0], [3, 0]], 0.2, make_rng(0))
    cfg = AdaptConfig(pretrain_epochs=0)
    init = build_network(cfg, 2, 2)
    out = pretrain(src, cfg)
    for (_, a), (_, b) in zip(init.arrays(), out.arrays()):
        assert np.array_equal(a, b)
    cfg = AdaptConfig(pretrain_epochs=3)
    a, b = pretrain(src, cfg), pretrain(src, cfg)
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.arrays(), b.arrays()))


def test_pretrain_separable_blobs():
    src = gen_blobs(3, 100, [[-4, 0], [4, 0], [0, 5]], 0.3, make_rng(1))
    params = pretrain(src, AdaptConfig())
    assert evaluate(params, src).accuracy == 1.0


def test_pretrain_two_moons_fits_source(moons):
    sc = make_scenario("two-moons", 3)
    assert evaluate(pretrain(sc.source, AdaptConfig()), sc.source).accuracy > 0.99


def test_source_only_mask_equals_continued_pretraining(moons):
    sc, cfg, params0, pseudo = moons
    cfg = cfg.replace(term_mask=(True, False, False, False))
    adapted, report = adapt_imuda(params0, sc.source, sc.target, pseudo, cfg, sc.target_eval)
    reference = continue_pretraining(params0, sc.source, cfg)
    for (_, a), (_, b) in zip(adapted.arrays(), reference.arrays()):
        assert np.array_equal(a, b)
    accs = [c["source_acc"] for c in report.checkpoints]
    assert accs[-1] >= accs[0]


def test_report_bookkeeping_and_determinism(moons):
    sc, cfg, params0, pseudo = moons
    before = (pseudo.samples.copy(), pseudo.labels.copy())
    _, r1 = adapt_imuda(params0, sc.source, sc.target, pseudo, cfg, sc.target_eval)
    _, r2 = adapt_imuda(params0, sc.source, sc.target, pseudo, cfg, sc.target_eval)
    assert np.array_equal(pseudo.samples, before[0]) and np.array_equal(pseudo.labels, before[1])
    assert r1.to_dict() == r2.to_dict()
    np.testing.assert_allclose(r1.total, r1.terms @ np.array(r1.term_weights), atol=1e-9, rtol=0)
    assert r1.terms.shape == (cfg.iterations, 4)
    assert [c["iteration"] for c in r1.checkpoints] == [0, 20, 40, 60]
    assert set(r1.final_swd) == {"swd_source_pseudo", "swd_target_pseudo"}
    assert r1.source_only_acc == evaluate(params0, sc.target_eval).accuracy


def test_adapt_rejects_labeled_target_and_large_batches(moons):
    sc, cfg, params0, pseudo = moons
    with pytest.raises(TypeError):
        adapt_imuda(params0, sc.source, sc.target_eval, pseudo, cfg)
    with pytest.raises(DimensionError):
        adapt_imuda(params0, sc.source, sc.target, pseudo, cfg.replace(batch_size=10_000))


def test_baseline_identical_domains_has_zero_gap(moons):
    sc, cfg, params0, _ = moons
    _, same = adapt_baseline(params0, sc.source, sc.source.unlabeled(), cfg)
    _, shifted = adapt_baseline(params0, sc.source, sc.target, cfg, sc.target_eval)
    # per-batch values are pure sampling noise; on the full sets the gap is exactly zero
    assert same.final_swd["swd_source_target"] == 0.0
    assert shifted.final_swd["swd_source_target"] > 0.0
    _, again = adapt_baseline(params0, sc.source, sc.target, cfg, sc.target_eval)
    assert again.to_dict() == shifted.to_dict()


def test_plateau_stop(moons):
    sc, cfg, params0, pseudo = moons
    cfg = cfg.replace(iterations=400, plateau_stop=True, plateau_window=20, plateau_tol=0.5)
    _, report = adapt_imuda(params0, sc.source, sc.target, pseudo, cfg)
    assert report.stopped_early and report.iterations_run < 400
    assert report.checkpoints[-1]["iteration"] == report.iterations_run

