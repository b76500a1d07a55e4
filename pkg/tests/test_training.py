"""AdamW update arithmetic and training-loop determinism/bookkeeping."""

import numpy as np
import pytest

from hypercross import data, encoders, losses, training
from hypercross.encoders import EncoderConfig
from hypercross.errors import TrainingDivergedError
from hypercross.losses import LossBreakdown, LossConfig
from hypercross.training import AdamWState, TrainConfig, adamw_step


def _state_for(params):
    return AdamWState.for_arrays(params)


def test_adamw_zero_grad_zero_decay_is_noop():
    cfg = TrainConfig(lr=1e-4, weight_decay=0.0)
    p = [np.array([1.0, -2.0, 3.0])]
    before = p[0].copy()
    adamw_step(p, [np.zeros(3)], _state_for(p), cfg)
    assert np.array_equal(p[0], before)


def test_adamw_zero_grad_applies_pure_decay():
    cfg = TrainConfig(lr=1e-4, weight_decay=0.05)
    p = [np.array([2.0, -4.0])]
    adamw_step(p, [np.zeros(2)], _state_for(p), cfg)
    assert p[0] == pytest.approx(np.array([2.0, -4.0]) * (1.0 - 5e-6), rel=1e-15)


def test_adamw_first_step_scalar_hand_value():
    cfg = TrainConfig()  # lr 1e-4, wd 0.05, betas (0.9, 0.999), eps 1e-8
    p = [np.array([1.0])]
    adamw_step(p, [np.array([1.0])], _state_for(p), cfg)
    # bias-corrected m-hat = v-hat = 1 at step 1, so
    # p <- 1 - lr * 1/(1 + eps) - lr*wd*1
    expected = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8)) - 5e-6
    assert p[0][0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.999895, abs=1e-6)


def test_adamw_decay_mask_excludes_tensors():
    cfg = TrainConfig(lr=1e-2, weight_decay=0.1)
    p = [np.array([1.0]), np.array([1.0])]
    adamw_step(p, [np.zeros(1), np.zeros(1)], _state_for(p), cfg,
               decay=[True, False])
    assert p[0][0] < 1.0
    assert p[1][0] == 1.0


def test_adamw_shape_validation():
    cfg = TrainConfig()
    p = [np.zeros((2, 2))]
    with pytest.raises(ValueError):
        adamw_step(p, [np.zeros(3)], _state_for(p), cfg)
    with pytest.raises(ValueError):
        adamw_step(p, [np.zeros((2, 2)), np.zeros(1)], _state_for(p), cfg)


# ---------------------------------------------------------------- train loop


def tiny_setup(epochs=2, lam2=1.0, lr=1e-3, seed=5, n_per_node=2):
    spec = data.SyntheticSpec(
        tree_depth=2, branching=3, samples_per_node=n_per_node,
        noise_sigma=0.3, seed=1, brain_dim=12, text_dim=10,
    )
    ds = data.generate_synthetic(spec)
    bc = EncoderConfig(input_dim=12, hidden_dim=8, output_dim=6, depth=3, seed=7)
    tc = EncoderConfig(input_dim=10, hidden_dim=8, output_dim=6, depth=2, seed=8)
    cfg = TrainConfig(
        epochs=epochs, batch_size=4096, lr=lr, weight_decay=0.01,
        loss=LossConfig(tau=0.2, lambda1=0.5, lambda2=lam2, p=2.0, q=1.25),
        seed=seed,
    )
    return ds, bc, tc, cfg


def test_train_log_has_one_finite_entry_per_epoch():
    ds, bc, tc, cfg = tiny_setup(epochs=2)
    ds = ds.subset(np.arange(8))
    result = training.train(ds, bc, tc, cfg)
    assert len(result.log) == 2
    assert all(rec.finite() for rec in result.log)


def test_train_same_seed_bitwise_identical(tmp_path):
    ds, bc, tc, cfg = tiny_setup(epochs=3)
    r1 = training.train(ds, bc, tc, cfg)
    r2 = training.train(ds, bc, tc, cfg)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    encoders.save_checkpoint(p1, bc, r1.brain_params, tc, r1.text_params)
    encoders.save_checkpoint(p2, bc, r2.brain_params, tc, r2.text_params)
    assert p1.read_bytes() == p2.read_bytes()
    assert r1.log == r2.log


def test_train_different_seed_differs():
    ds, bc, tc, cfg = tiny_setup(epochs=3)
    r1 = training.train(ds, bc, tc, cfg)
    from dataclasses import replace
    r2 = training.train(ds, bc, tc, replace(cfg, seed=cfg.seed + 1))
    assert not np.array_equal(r1.brain_params.in_w, r2.brain_params.in_w)


def test_train_lr_zero_leaves_parameters_untouched():
    ds, bc, tc, cfg = tiny_setup(epochs=2, lr=0.0)
    init_b = encoders.init_params(bc)
    result = training.train(ds, bc, tc, cfg)
    for (_, a), (_, b) in zip(init_b.tensors(), result.brain_params.tensors()):
        assert np.array_equal(a, b)


def test_train_loss_decreases_over_200_epochs():
    ds, bc, tc, cfg = tiny_setup(epochs=200, lr=1e-3, n_per_node=8)
    result = training.train(ds, bc, tc, cfg)
    assert result.log[-1].total < result.log[0].total
    assert all(rec.finite() for rec in result.log)


def test_train_progress_sink_sees_every_epoch():
    ds, bc, tc, cfg = tiny_setup(epochs=4)
    seen = []
    training.train(ds, bc, tc, cfg, progress=lambda e, rec: seen.append((e, rec)))
    assert [e for e, _ in seen] == [1, 2, 3, 4]
    assert all(isinstance(rec, LossBreakdown) for _, rec in seen)


def test_train_empty_dataset_rejected():
    ds, bc, tc, cfg = tiny_setup()
    with pytest.raises(ValueError):
        training.train(ds.subset(np.array([], dtype=int)), bc, tc, cfg)


def test_train_dimension_mismatch_rejected():
    ds, bc, tc, cfg = tiny_setup()
    bad = EncoderConfig(input_dim=99, hidden_dim=8, output_dim=6, depth=3, seed=7)
    with pytest.raises(ValueError):
        training.train(ds, bad, tc, cfg)


def test_train_invalid_loss_config_rejected():
    ds, bc, tc, cfg = tiny_setup()
    from dataclasses import replace
    bad = replace(cfg, loss=LossConfig(q=0.5, c=1.0))  # c*q < 1
    with pytest.raises(ValueError):
        training.train(ds, bc, tc, bad)


def test_train_zero_epochs_returns_initial_params():
    ds, bc, tc, cfg = tiny_setup(epochs=0)
    init_b = encoders.init_params(bc)
    result = training.train(ds, bc, tc, cfg)
    assert result.log == []
    for (_, a), (_, b) in zip(init_b.tensors(), result.brain_params.tensors()):
        assert np.array_equal(a, b)


def test_train_resume_from_initial_params():
    ds, bc, tc, cfg = tiny_setup(epochs=2)
    first = training.train(ds, bc, tc, cfg)
    resumed = training.train(
        ds, bc, tc, cfg, initial=(first.brain_params, first.text_params)
    )
    assert not np.array_equal(
        first.brain_params.in_w, resumed.brain_params.in_w
    )


def test_train_aborts_on_non_finite_loss(monkeypatch):
    ds, bc, tc, cfg = tiny_setup(epochs=2)

    def poisoned(vb, vt, r, loss_cfg):
        bad = LossBreakdown(np.nan, 0.0, 0.0, np.nan)
        return bad, np.zeros_like(vb), np.zeros_like(vt)

    monkeypatch.setattr(training, "joint_loss_grad", poisoned)
    with pytest.raises(TrainingDivergedError) as err:
        training.train(ds, bc, tc, cfg)
    assert err.value.epoch == 1
    assert err.value.batch_index == 0


def test_epoch_permutation_deterministic_and_counter_based():
    a = training.epoch_permutation(3, 1, 50)
    b = training.epoch_permutation(3, 1, 50)
    c = training.epoch_permutation(3, 2, 50)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(np.sort(a), np.arange(50))


def test_derive_seed_stable_and_distinct():
    assert training.derive_seed(7, 1) == training.derive_seed(7, 1)
    assert training.derive_seed(7, 1) != training.derive_seed(7, 2)
    assert 0 <= training.derive_seed(123, 4, 5) < 2 ** 32


def test_paper_protocol_defaults():
    cfg = TrainConfig()
    assert cfg.epochs == 200
    assert cfg.batch_size == 4096
    assert cfg.lr == 1e-4
    assert cfg.weight_decay == 0.05
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
