import numpy as np
import pytest
from dataclasses import replace

from styleaudit.discriminator import (
    Discriminator,
    DistortionPair,
    EarlyStopping,
    LabeledExample,
    TrainConfig,
    loss,
    score,
    score_many,
    train,
)
from styleaudit.errors import Degenerate, DimMismatch, InvalidConfig
from styleaudit.extractor import StyleRepresentation

from oracles import gradient_check, random_net


def rep(v, plan="p0"):
    return StyleRepresentation(np.asarray(v, dtype=np.float32), "x", plan)


def constant_net(dim, output):
    """A network whose output is ``output`` for every input."""
    d = Discriminator.zeros((dim, 4, 1))
    d.biases[-1][:] = np.arctanh(output)
    return d


# --- loss ------------------------------------------------------------------------

def test_loss_worked_values():
    d = constant_net(3, 0.5)
    assert loss(d, [LabeledExample(rep([1, 2, 3]), 1.0)]) == pytest.approx(0.25)
    assert loss(d, [LabeledExample(rep([1, 2, 3]), -1.0)]) == pytest.approx(2.25)


def test_loss_zero_at_perfect_fit_and_identical_pairs():
    d = constant_net(2, 0.3)
    ex = [LabeledExample(rep([0.0, 1.0]), 1.0)]
    pair = DistortionPair(rep([5.0, 5.0]), rep([5.0, 5.0]))
    assert loss(constant_net(2, 1 - 1e-12), ex) < 1e-20
    assert loss(d, ex, [pair]) == pytest.approx(loss(d, ex, []))


def test_loss_terms_averaged_independently(rng):
    d = random_net(rng, (4, 6, 1))
    X, P, G = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    y = np.array([1.0, -1.0, 1.0])
    reg = np.mean((y - d.predict(X)) ** 2)
    dis = np.mean((d.predict(G) - d.predict(P)) ** 2)
    assert d.loss_and_grad(X, y, P, G)[0] == pytest.approx(reg + dis, rel=1e-12)


def test_loss_independent_of_pairs_when_disabled(rng):
    d = random_net(rng, (4, 6, 1))
    batch = [LabeledExample(rep(rng.normal(size=4)), 1.0), LabeledExample(rep(rng.normal(size=4)), -1.0)]
    pairs_a = [DistortionPair(rep(rng.normal(size=4)), rep(rng.normal(size=4))) for _ in range(3)]
    pairs_b = [DistortionPair(rep(rng.normal(size=4)), rep(rng.normal(size=4))) for _ in range(7)]
    vals = {loss(d, batch, p, use_distortion_term=False) for p in ([], pairs_a, pairs_b)}
    assert len(vals) == 1


def test_loss_dim_mismatch():
    with pytest.raises(DimMismatch):
        loss(constant_net(3, 0.1), [LabeledExample(rep([1.0, 2.0]), 1.0)])


def test_labels_must_be_unit():
    with pytest.raises(ValueError):
        LabeledExample(rep([1.0]), 0.5)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    worst = max(gradient_check(rng) for _ in range(10))
    assert worst < 1e-4


# --- scoring ---------------------------------------------------------------------

def test_zero_network_scores_zero(rng):
    d = Discriminator.zeros((5, 8, 3, 1))
    assert score(d, rep(rng.normal(size=5))) == 0.0


def test_scores_bounded(rng):
    d = random_net(rng, (6, 10, 1))
    for W in d.weights:
        W *= 50
    s = score_many(d, rng.normal(scale=100, size=(200, 6)))
    assert np.all(np.abs(s) < 1.0)
    assert score(d, rep(np.full(6, 1e6))) < 1.0


def test_score_refuses_other_plan(rng):
    d = Discriminator.zeros((3, 2, 1), tap_plan_hash="p0")
    assert score(d, rep([1, 2, 3], "p0")) == 0.0
    with pytest.raises(DimMismatch):
        score(d, rep([1, 2, 3], "p1"))
    with pytest.raises(DimMismatch):
        score(d, rep([1, 2], "p0"))


# --- training --------------------------------------------------------------------

def blobs(rng, n=50, dim=16, gap=3.0, n_test=0):
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    pos = rng.normal(size=(n + n_test, dim)) + gap / 2 * u
    neg = rng.normal(size=(n + n_test, dim)) - gap / 2 * u
    if n_test:
        return pos[:n], neg[:n], pos[n:], neg[n:]
    return pos, neg


def test_separable_blobs_reach_low_validation_error(rng):
    pos, neg, Vp, Vn = blobs(np.random.default_rng(5), gap=8.0, n_test=30)
    # separability first: a hyperplane between the class means has positive margin
    w = pos.mean(0) - neg.mean(0)
    c = w @ (pos.mean(0) + neg.mean(0)) / 2
    assert (pos @ w - c).min() > 0 and (neg @ w - c).max() < 0
    d = train(pos, neg, cfg=TrainConfig(use_distortion_term=False, seed=3))
    assert d.history["best_val_loss"] < 0.1
    assert score_many(d, Vp).mean() > score_many(d, Vn).mean()


def test_training_deterministic(rng):
    pos, neg = blobs(rng, n=20, dim=6)
    pairs = (rng.normal(size=(8, 6)), rng.normal(size=(8, 6)))
    cfg = TrainConfig(max_epochs=5, patience=2, seed=7, hidden=(8, 4))
    a, b = train(pos, neg, pairs, cfg), train(pos, neg, pairs, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    c = train(pos, neg, pairs, replace(cfg, seed=8))
    assert not all(np.array_equal(x, y) for x, y in zip(a.params(), c.params()))


def test_returned_parameters_are_best_epoch(rng):
    pos, neg = blobs(rng, n=30, dim=8, gap=0.5)
    vp, vn = blobs(rng, n=10, dim=8, gap=0.5)
    d = train(pos, neg, cfg=TrainConfig(learning_rate=3e-2, max_epochs=40, patience=5, use_distortion_term=False,
                                        hidden=(16, 8)), valid=(vp, vn))
    h = d.history
    assert h["best_val_loss"] == min(h["val_loss"])
    assert h["val_loss"].index(min(h["val_loss"])) + 1 == h["best_epoch"]
    X = np.concatenate([vp, vn])
    y = np.r_[np.ones(10), -np.ones(10)]
    assert np.mean((y - d.predict(X)) ** 2) == pytest.approx(h["best_val_loss"], rel=1e-12)


def test_early_stopping_contract():
    stopper = EarlyStopping(patience=10)
    losses = [1.0, 0.8, 0.6, 0.5, 0.4] + [0.4 + 0.01 * k for k in range(1, 50)]
    stopped_at = None
    for epoch, v in enumerate(losses, start=1):
        if stopper.update(epoch, v, state=epoch):
            stopped_at = epoch
            break
    assert stopped_at is not None and stopped_at <= 15
    assert stopper.best_epoch == 5 and stopper.best_state == 5


def test_early_stopping_tie_keeps_earlier():
    s = EarlyStopping(3)
    for e, v in enumerate([0.5, 0.5, 0.5], 1):
        s.update(e, v, e)
    assert s.best_epoch == 1


def test_degenerate_inputs():
    same = np.ones((6, 4))
    with pytest.raises(Degenerate):
        train(same, same[:3], cfg=TrainConfig(use_distortion_term=False))


def test_distortion_term_requires_pairs(rng):
    pos, neg = blobs(rng, n=10, dim=4)
    with pytest.raises(InvalidConfig):
        train(pos, neg, None, TrainConfig(use_distortion_term=True))


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(patience=100, max_epochs=100).validate()
    with pytest.raises(InvalidConfig):
        TrainConfig(learning_rate=0).validate()


def test_save_load_round_trip(rng, tmp_path):
    pos, neg = blobs(rng, n=10, dim=5)
    d = train(pos, neg, cfg=TrainConfig(max_epochs=3, patience=1, use_distortion_term=False, hidden=(6,)),
              artist_id="alice", tap_plan_hash="p0")
    path = d.save(tmp_path / "alice.npz")
    e = Discriminator.load(path)
    assert e.artist_id == "alice" and e.tap_plan_hash == "p0" and e.layer_sizes == (5, 6, 1)
    X = rng.normal(size=(7, 5))
    np.testing.assert_array_equal(d.predict(X), e.predict(X))
    with pytest.raises(DimMismatch):
        score(e, rep(X[0], "other"))
