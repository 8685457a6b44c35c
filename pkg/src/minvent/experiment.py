"""Desk-scale A-vs-B experiment: the library path behind ``minvent`` train/prune/compare."""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import stats as st
from .config import RunConfig
from .graph import build_neural_net_a, param_count
from .pruning import connectivity_score, make_neural_net_b
from .synth import build_dataset
from .trainer import (finetune, make_proxy_dataset, predict, pretrain_proxy, train, transfer_head)

DESK = RunConfig(subjects=20, windows=100, width_mult=0.125, dense_units="64,64", proxy_samples=600,
                 proxy_epochs=5, max_epochs=30, patience=5, finetune_epochs=10)


def seeded(cfg: RunConfig, seed: int) -> RunConfig:
    """Same settings with every random stream (data, init, shuffle) moved to ``seed``."""
    return dataclasses.replace(cfg, data_seed=seed, net_seed=seed, train_seed=seed)


def calibration_batch(x_train, cfg: RunConfig):
    if cfg.calibration_windows == 0:
        return None
    n = min(cfg.calibration_windows, len(x_train))
    idx = np.sort(np.random.default_rng(cfg.train_seed).choice(len(x_train), n, replace=False))
    return x_train[idx]


def train_neural_net_a(cfg: RunConfig, dataset, log=None):
    """Proxy pretraining (when enabled), transfer, then regression training."""
    length = dataset.manifest.window_len
    graph = build_neural_net_a(cfg.net_config(length))
    tc = cfg.train_config()
    proxy_acc = None
    if cfg.pretrain:
        px = make_proxy_dataset(cfg.proxy_samples, cfg.proxy_classes, graph.input_channels, length,
                                dataset.manifest.fs_hz, seed=cfg.train_seed)
        pcfg = dataclasses.replace(tc, max_epochs=cfg.proxy_epochs,
                                   early_stop_patience=min(tc.early_stop_patience, cfg.proxy_epochs))
        cls, _, proxy_acc = pretrain_proxy(graph, px, pcfg)
        graph = transfer_head(cls, graph)
    trained, hist = train(graph, dataset, tc, on_epoch=log)
    return trained, hist, proxy_acc


def run_desk_experiment(cfg: RunConfig = DESK, log=None) -> dict:
    """Synthesize, train A, derive and fine-tune B, evaluate both on the test split."""
    t0 = time.perf_counter()
    ds = build_dataset(cfg.manifest(), cfg.synth_params())
    net_a, hist_a, proxy_acc = train_neural_net_a(cfg, ds, log)
    x_tr, y_tr, _, _ = ds.arrays("train")
    net_b, summary = make_neural_net_b(net_a, cfg.sparsity, cfg.pattern, cfg.skip_density, cfg.net_seed,
                                       scope=cfg.scope, exempt=cfg.exempt_tuple(),
                                       calibration=calibration_batch(x_tr, cfg))
    net_b, hist_b = finetune(net_b, ds, cfg.train_config(), on_epoch=log)
    x, y, levels, sids = ds.arrays("test")
    keys = tuple((w.subject_id, w.window_id) for w in ds.subset("test"))
    reports = {}
    for name, g in (("NeuralNetA", net_a), ("NeuralNetB", net_b)):
        pred = predict(g, x)[:, 0].astype(np.float64)
        reports[name] = st.evaluate(name, pred, y, levels, sids, keys, params=param_count(g, effective=True),
                                    connectivity=connectivity_score(g).score)
    return {
        "config": cfg, "dataset": ds, "net_a": net_a, "net_b": net_b, "summary": summary,
        "history_a": hist_a, "history_b": hist_b, "proxy_accuracy": proxy_acc,
        "reports": reports, "baseline_rmse": float(np.sqrt(np.mean((y - y_tr.mean()) ** 2))),
        "comparison": st.compare_models(reports["NeuralNetA"], reports["NeuralNetB"]),
        "seconds": time.perf_counter() - t0,
    }
