import math

import numpy as np
import pytest

from minvent import checkpoint as ck
from minvent import graph as gr
from minvent import pruning as pr
from minvent import trainer as tr
from minvent.errors import ChecksumError, ContractError, InputError, NumericError, VersionError
from minvent.synth import DatasetManifest, build_dataset

SMALL = gr.NetConfig(input_length=64, widths=(4, 6, 8, 8, 8), dense_units=(8, 8), seed=1)


def toy_regression(n=48, seed=0, length=64):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2, length)).astype(np.float32)
    y = (x[:, 0].mean(axis=1) * 3 + 10).astype(np.float32)
    return x[: n * 3 // 4], y[: n * 3 // 4], x[n * 3 // 4:], y[n * 3 // 4:]


def strip_wall(history):
    return [{k: v for k, v in row.items() if k != "wall_seconds"} for row in history]


# -- config -------------------------------------------------------------------------------

@pytest.mark.parametrize("field,value", [("optimizer", "rmsprop"), ("learning_rate", 0.0),
                                         ("batch_size", 0), ("max_epochs", -1),
                                         ("early_stop_patience", 0), ("finetune_epochs", -2)])
def test_config_validation(field, value):
    with pytest.raises(InputError):
        tr.TrainConfig(**{field: value}).validate()


def test_patience_cannot_exceed_max_epochs():
    with pytest.raises(InputError):
        tr.TrainConfig(max_epochs=3, early_stop_patience=4).validate()
    tr.TrainConfig().validate()


# -- training loop ------------------------------------------------------------------------

def test_constant_label_is_learned():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 2, 64)).astype(np.float32)
    y = np.full(64, 7.5, dtype=np.float32)
    g = gr.build_neural_net_a(SMALL)
    # 25 epochs of 8 batches = 200 steps
    trained, _ = tr.train(g, (x[:48], y[:48], x[48:], y[48:]),
                          tr.TrainConfig(batch_size=6, max_epochs=25, early_stop_patience=25))
    pred = tr.predict(trained, x[48:])[:, 0]
    assert np.all(np.abs(pred - 7.5) <= 0.01 * 7.5)


@pytest.mark.parametrize("optimizer", tr.OPTIMIZERS)
def test_same_seed_reproduces_history(optimizer):
    data = toy_regression()
    cfg = tr.TrainConfig(optimizer=optimizer, learning_rate=1e-3, batch_size=8, max_epochs=3,
                         early_stop_patience=3, seed=4)
    runs = [tr.train(gr.build_neural_net_a(SMALL), data, cfg) for _ in range(2)]
    assert strip_wall(runs[0][1]) == strip_wall(runs[1][1])
    for k in runs[0][0].params:
        np.testing.assert_array_equal(runs[0][0].params[k], runs[1][0].params[k])


def test_different_seed_changes_history():
    data = toy_regression()
    h = [tr.train(gr.build_neural_net_a(SMALL), data, tr.TrainConfig(batch_size=8, max_epochs=2, early_stop_patience=2,
                                                                  seed=s))[1]
         for s in (0, 1)]
    assert strip_wall(h[0]) != strip_wall(h[1])


def test_train_does_not_modify_input_graph():
    g = gr.build_neural_net_a(SMALL)
    before = {k: v.copy() for k, v in g.params.items()}
    tr.train(g, toy_regression(), tr.TrainConfig(batch_size=8, max_epochs=1, early_stop_patience=1))
    for k in before:
        np.testing.assert_array_equal(before[k], g.params[k])


def test_early_stopping_restores_best_and_halts_within_patience():
    data = toy_regression()
    trained, hist = tr.train(gr.build_neural_net_a(SMALL), data,
                             tr.TrainConfig(learning_rate=0.05, batch_size=8, max_epochs=30, early_stop_patience=2))
    vals = [row["val_rmse"] for row in hist]
    best = int(np.argmin(vals))
    assert len(hist) - 1 - best <= 2
    assert tr.rmse_of(trained, data[2], data[3]) == pytest.approx(vals[best], rel=1e-6)


def test_nan_loss_reports_epoch_batch_and_grad_norm():
    x_tr, y_tr, x_va, y_va = toy_regression()
    g = gr.build_neural_net_a(SMALL)
    g.params["out.bias"][:] = np.nan
    with pytest.raises(NumericError, match=r"epoch 1, batch 0.*grad-norm="):
        tr.train(g, (x_tr, y_tr, x_va, y_va), tr.TrainConfig(max_epochs=1, early_stop_patience=1))


def test_regression_needs_scalar_output_and_data():
    with pytest.raises(ContractError):
        tr.train(gr.build_neural_net_a(gr.NetConfig(**{**SMALL.__dict__, "output_units": 3})), toy_regression())
    x = np.zeros((0, 2, 64), np.float32)
    with pytest.raises(InputError):
        tr.train(gr.build_neural_net_a(SMALL), (x, np.zeros(0), x, np.zeros(0)))


def test_finetune_zero_epochs_is_a_copy():
    g = gr.build_neural_net_a(SMALL)
    out, hist = tr.finetune(g, toy_regression(), tr.TrainConfig(finetune_epochs=0))
    assert hist == [] and out is not g
    np.testing.assert_array_equal(out.params["out.weight"], g.params["out.weight"])


def test_finetune_keeps_scaling_and_runs_fixed_epochs():
    data = toy_regression()
    a, _ = tr.train(gr.build_neural_net_a(SMALL), data,
                    tr.TrainConfig(batch_size=8, max_epochs=2, early_stop_patience=2))
    b, hist = tr.finetune(a, data, tr.TrainConfig(batch_size=8, finetune_epochs=3, early_stop_patience=1))
    assert len(hist) == 3
    for k, v in a.scaling.items():
        np.testing.assert_array_equal(b.scaling[k], v)


# -- checkpoints ----------------------------------------------------------------------------

def pruned_with_skips():
    g = gr.build_neural_net_a(SMALL)
    g.scaling = tr.fit_scaling(*toy_regression()[:2])
    b, _ = pr.make_neural_net_b(g, 0.7, "dense-skip", 0.3, 0)
    return b


def test_checkpoint_roundtrip_is_byte_identical(tmp_path):
    g = pruned_with_skips()
    opt = tr.Adam()
    opt.step({k: v.copy() for k, v in g.params.items()}, {k: np.ones_like(v) for k, v in g.params.items()})
    hist = [{"epoch": 1, "train_rmse": 1.5, "val_rmse": 2.25, "wall_seconds": 0.5}]
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ck.save_checkpoint(g, opt.state_dict(), p1, epoch=1, history=hist)
    loaded = ck.load_checkpoint(p1)
    ck.save_checkpoint(loaded.graph, loaded.optimizer_state, p2, epoch=loaded.epoch, history=loaded.history)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.history == hist and loaded.epoch == 1
    x = np.random.default_rng(0).normal(size=(3, 2, 64)).astype(np.float32)
    np.testing.assert_array_equal(tr.predict(loaded.graph, x), tr.predict(g, x))
    restored = tr.Adam()
    restored.load_state_dict(loaded.optimizer_state)
    assert restored.t == 1 and set(restored.m) == set(opt.m)


def test_eval_only_drops_optimizer_state_keeps_history(tmp_path):
    g = gr.build_neural_net_a(SMALL)
    opt = tr.SGDMomentum()
    opt.step({k: v.copy() for k, v in g.params.items()}, {k: np.ones_like(v) for k, v in g.params.items()})
    hist = [{"epoch": e, "train_rmse": 1.0 / e, "val_rmse": 2.0 / e, "wall_seconds": 0.25} for e in (1, 2)]
    path = ck.save_checkpoint(g, opt.state_dict(), tmp_path / "m.ckpt", epoch=2, history=hist)
    assert ck.load_checkpoint(path).optimizer_state is not None
    loaded = ck.load_checkpoint(path, eval_only=True)
    assert loaded.optimizer_state is None
    assert loaded.history == hist


def test_checkpoint_payload_flip_and_version_detected(tmp_path):
    g = gr.build_neural_net_a(SMALL)
    blob = bytearray(ck.encode_checkpoint(ck.Checkpoint(g)))
    rng = np.random.default_rng(0)
    for pos in rng.integers(len(blob) // 2, len(blob) - 4, size=5):
        bad = bytearray(blob)
        bad[pos] ^= 0x10
        with pytest.raises(ChecksumError):
            ck.decode_checkpoint(bytes(bad))
    bad = bytearray(blob)
    bad[4] = 9
    with pytest.raises(VersionError):
        ck.decode_checkpoint(bytes(bad))


def test_history_csv_columns():
    text = ck.history_csv([{"epoch": 1, "train_rmse": 1.0, "val_rmse": 2.0, "wall_seconds": 0.1}])
    assert text.splitlines()[0] == "epoch,train_rmse,val_rmse,wall_seconds"
    assert text.splitlines()[1].startswith("1,1.000000,2.000000")


# -- proxy pretraining and transfer -----------------------------------------------------------

def test_proxy_dataset_shape_and_determinism():
    x, labels = tr.make_proxy_dataset(20, n_classes=4, length=100, seed=2)
    assert x.shape == (20, 2, 100) and x.dtype == np.float32
    assert set(labels) <= set(range(4))
    x2, l2 = tr.make_proxy_dataset(20, n_classes=4, length=100, seed=2)
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(labels, l2)


def test_incompatible_proxy_rejected():
    g = gr.build_neural_net_a(SMALL)
    with pytest.raises(ContractError):
        tr.pretrain_proxy(g, tr.make_proxy_dataset(10, length=80))


def test_proxy_accuracy_beats_chance():
    # 10 s windows: enough cycles to separate the rate bands
    g = gr.build_neural_net_a(gr.NetConfig(input_length=250, width_mult=0.125, dense_units=(32, 32)))
    k = 4
    cls, _, acc = tr.pretrain_proxy(g, tr.make_proxy_dataset(400, n_classes=k, length=250, seed=0),
                                    tr.TrainConfig(max_epochs=10, early_stop_patience=4))
    n_val = 80
    chance = 1 / k
    sigma = math.sqrt(chance * (1 - chance) / n_val)
    assert acc > chance + 3 * sigma
    assert cls.output_shape() == (k,)


def test_transfer_copies_conv_exactly_and_keeps_fresh_head():
    donor = tr.attach_head(gr.build_neural_net_a(gr.NetConfig(**{**SMALL.__dict__, "seed": 5})), 4)
    target = gr.build_neural_net_a(SMALL)
    moved = tr.transfer_head(donor, target)
    for layer in target.layers:
        for suffix in ("weight", "bias"):
            key = f"{layer.layer_id}.{suffix}"
            if key not in target.params:
                continue
            src = donor if layer.kind == "conv1d" else target
            np.testing.assert_array_equal(moved.params[key], src.params[key])
    assert moved.output_shape() == (1,)


def test_transfer_rejects_mismatched_trunk():
    donor = gr.build_neural_net_a(gr.NetConfig(**{**SMALL.__dict__, "widths": (4, 6, 8, 8, 16)}))
    with pytest.raises(ContractError):
        tr.transfer_head(donor, gr.build_neural_net_a(SMALL))


def test_attach_head_requires_dense_tail():
    g = gr.build_neural_net_a(SMALL)
    g.layers = g.layers[:-3]
    with pytest.raises(ContractError):
        tr.attach_head(g, 3)


def test_pretrained_trunk_beats_random_init_after_one_epoch():
    # reduced scale: 20 s windows, 12 subjects, one shared pretrained trunk
    length = 500
    data = build_dataset(DatasetManifest(n_subjects=12, n_female=6, n_male=6, windows_per_subject=40,
                                         window_seconds=length / 25, rng_seed=0))
    cfg = gr.NetConfig(input_length=length, width_mult=0.125, dense_units=(32, 32))
    cls, _, _ = tr.pretrain_proxy(gr.build_neural_net_a(cfg), tr.make_proxy_dataset(600, length=length),
                                  tr.TrainConfig(max_epochs=8, early_stop_patience=3))
    wins = []
    for s in range(5):
        g = gr.build_neural_net_a(gr.NetConfig(**{**cfg.__dict__, "seed": s + 10}))
        _, h_rand = tr.train(g, data, tr.TrainConfig(seed=s), epochs=1)
        _, h_pre = tr.train(tr.transfer_head(cls, g), data, tr.TrainConfig(seed=s), epochs=1)
        wins.append(h_rand[0]["val_rmse"] - h_pre[0]["val_rmse"])
    assert np.median(wins) > 0
