import numpy as np
import pytest

from augrmixat import trainer
from augrmixat.adversarial import AttackSpec
from augrmixat.augment import IDENTITY, AugmentConfig
from augrmixat.losses import augrmixat_loss
from augrmixat.model import SGD
from augrmixat.numerics import Rng, one_hot
from augrmixat.trainer import SWEEP_FIELDS, TrainConfig, TrainingDiverged, lambda_sweep, reports_to_csv, \
    sweep_pairs, sweep_to_csv, train, train_augrmixat, train_pgdat, train_standard, unknown_keys


def _blobs(n=64, seed=0):
    r = Rng(seed)
    y = np.arange(n) % 2
    X = np.where(y[:, None, None, None] == 1, 0.75, 0.25) + 0.05 * r.normal((n, 1, 4, 4))
    return np.clip(X, 0, 1).astype(np.float32), y


def _cfg(**kw):
    base = dict(arch="mlp", epochs=1, batch_size=16, lr0=0.05, attack=AttackSpec(eps=0.031, step=0.007, iters=2,
                loss_kind="kl_consistency"))
    return TrainConfig(**{**base, **kw})


def test_config_validation():
    for bad in ({"lambda1": -1}, {"lambda2": -0.5}, {"batch_size": 0}, {"epochs": 0}, {"mode": "trades"},
                {"precision": "half"}, {"mix_gamma": 2.0}):
        with pytest.raises(ValueError):
            _cfg(**bad).validate()


def test_config_dict_roundtrip_and_unknown_keys():
    cfg = _cfg(lambda2=8.0, seed=3)
    d = cfg.to_dict()
    assert TrainConfig.from_dict(d).to_dict() == d
    assert unknown_keys({"epochs": 1, "bogus": 2, "attack": {"eps": 0.1, "radius": 1}}) == ["bogus", "attack.radius"]
    with pytest.raises(KeyError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    # partial nested dicts keep the training-attack defaults
    assert TrainConfig.from_dict({"attack": {"iters": 3}}).attack.step == 0.007


def test_standard_converges_on_separable_data():
    X, y = _blobs(256)
    _, reports = train_standard(X, y, _cfg(epochs=5, lr0=0.1))
    assert reports[-1].ce < 0.1
    assert reports[-1].train_top1 >= 0.95


def test_same_seed_same_weights():
    X, y = _blobs()
    a, ra = train_augrmixat(X, y, _cfg(epochs=2))
    b, rb = train_augrmixat(X, y, _cfg(epochs=2))
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    assert [r.total for r in ra] == [r.total for r in rb]
    c, _ = train_augrmixat(X, y, _cfg(epochs=2, seed=1))
    assert not np.array_equal(a.params[0], c.params[0])


def test_pgdat_with_zero_budget_is_standard():
    X, y = _blobs()
    cfg = _cfg(epochs=2, attack=AttackSpec(eps=0.0, step=0.007, iters=3))
    a, _ = train_pgdat(X, y, cfg)
    b, _ = train_standard(X, y, cfg)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


def test_degenerate_augrmixat_is_standard():
    X, y = _blobs()
    cfg = _cfg(epochs=3, lambda1=0.0, lambda2=0.0, attack=AttackSpec(iters=0, init_sigma=0.0),
               augment=AugmentConfig(ops=(IDENTITY,)), mix_methods=("mixup",), mix_gamma=1.0)
    a, _ = train_augrmixat(X, y, cfg)
    b, _ = train_standard(X, y, cfg)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


def test_algorithm_call_order(monkeypatch):
    calls = []

    def wrap(name, fn):
        def inner(*a, **k):
            calls.append(name)
            return fn(*a, **k)
        return inner

    for name in ("augment_batch", "pgd_generate", "rmix", "augrmixat_loss"):
        monkeypatch.setattr(trainer, name, wrap(name, getattr(trainer, name)))
    monkeypatch.setattr(SGD, "step", wrap("step", SGD.step))
    X, y = _blobs(32)
    train_augrmixat(X, y, _cfg(batch_size=16))
    expected = ["augment_batch", "pgd_generate", "rmix", "augrmixat_loss", "step"]
    assert calls == expected * 2


def test_attack_sees_parameters_before_the_step(monkeypatch):
    seen = []
    real = trainer.pgd_generate

    def spy(stack, x, spec, rng):
        seen.append([p.copy() for p in stack.params])
        return real(stack, x, spec, rng)

    monkeypatch.setattr(trainer, "pgd_generate", spy)
    X, y = _blobs(32)
    cfg = _cfg(batch_size=32, momentum=0.0, weight_decay=0.0)
    init = trainer.init_model(X.shape[1:], 2, cfg)
    train_augrmixat(X, y, cfg)
    for p, q in zip(seen[0], init.params):
        np.testing.assert_array_equal(p, q)


def test_single_step_matches_hand_assembled_gradient(monkeypatch):
    captured = {}
    real_rmix = trainer.rmix

    def spy(*a, **k):
        out = real_rmix(*a, **k)
        captured["views"] = out
        return out

    monkeypatch.setattr(trainer, "rmix", spy)
    r = Rng(0)
    X = r.uniform(size=(8, 1, 1, 1)).astype(np.float64)
    y = np.arange(8) % 2
    cfg = _cfg(arch="linear", batch_size=8, momentum=0.0, weight_decay=0.0, lr0=0.3, lambda1=0.7, lambda2=1.3,
               precision="double")
    init = trainer.init_model(X.shape[1:], 2, cfg)
    W0, b0 = (p.copy() for p in init.params)
    stack, _ = train_augrmixat(X, y, cfg)
    Xm, Xbar, Xhat, Ym, _ = captured["views"]
    xs = [v.reshape(8, 1) for v in (Xm, Xbar, Xhat)]
    logits = [x @ W0.T + b0 for x in xs]
    lb = augrmixat_loss(*logits, Ym, 0.7, 1.3)
    gs = (lb.grad_clean, lb.grad_aug, lb.grad_adv)
    gW = sum(g.T @ x for g, x in zip(gs, xs))
    gb = sum(g.sum(axis=0) for g in gs)
    assert W0.size == 2
    np.testing.assert_allclose(stack.params[0], W0 - 0.3 * gW, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(stack.params[1], b0 - 0.3 * gb, rtol=1e-12, atol=1e-15)


def test_reported_loss_is_batch_mean_and_identity_holds(monkeypatch):
    totals = []
    real = trainer.augrmixat_loss

    def spy(*a, **k):
        lb = real(*a, **k)
        assert lb.total == pytest.approx(lb.ce + a[4] * lb.js_aug + a[5] * lb.js_adv, abs=1e-6)
        totals.append(lb.total)
        return lb

    monkeypatch.setattr(trainer, "augrmixat_loss", spy)
    X, y = _blobs(40)
    _, reports = train_augrmixat(X, y, _cfg(batch_size=16, lambda2=2.0))
    assert len(totals) == 3  # final partial batch is trained
    assert reports[0].total == pytest.approx(np.mean(totals), rel=1e-12)
    r = reports[0]
    assert r.total == pytest.approx(r.ce + r.js_aug + 2.0 * r.js_adv, abs=1e-6)


def test_divergence_is_reported():
    X, y = _blobs()
    with pytest.raises(TrainingDiverged, match="diverged at epoch 0"):
        train_standard(X, y, _cfg(lr0=1e30, epochs=2))


def test_bad_inputs_rejected():
    X, y = _blobs()
    with pytest.raises(ValueError):
        train_standard(X, y[:-1], _cfg())
    with pytest.raises(ValueError):
        train_standard(X, y + 5, _cfg(), num_classes=2)


def test_reports_csv_header():
    X, y = _blobs(16)
    _, reports = train_standard(X, y, _cfg(epochs=2))
    lines = reports_to_csv(reports).splitlines()
    assert lines[0] == "epoch,lr,ce,js_aug,js_adv,total,train_top1,wall_ms"
    assert len(lines) == 3


def test_sweep_pairs_layout():
    assert sweep_pairs([1], [1]) == [(1, 1)]
    pairs = sweep_pairs([1, 2, 4], [1, 8, 32])
    assert len(pairs) == 3 + 3 - 1
    assert pairs == [(1, 1), (2, 1), (4, 1), (1, 8), (1, 32)]
    with pytest.raises(ValueError):
        sweep_pairs([], [1])


def test_lambda_sweep_single_pair_csv():
    X, y = _blobs(16)
    rows = lambda_sweep(X, y, _cfg(), [1.0], [1.0])
    assert len(rows) == 1 and set(SWEEP_FIELDS) <= set(rows[0])
    text = sweep_to_csv(rows)
    header, row = text.splitlines()
    assert header == "lambda1,lambda2,clean,fgsm,pgd10,pgd20,cw20,corr,occ"
    assert [float(v) for v in row.split(",")] == [float(rows[0][k]) for k in SWEEP_FIELDS]
