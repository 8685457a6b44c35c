"""Training loops: proxy pretraining, regression training, fine-tuning."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, InputError, NumericError
from .graph import (LayerSpec, NetworkGraph, forward, infer_shapes, init_params)

OPTIMIZERS = ("adam", "sgd-momentum")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    finetune_epochs: int = 10
    momentum: float = 0.9

    def validate(self):
        if self.optimizer not in OPTIMIZERS:
            raise InputError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        for name in ("learning_rate", "batch_size", "max_epochs", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.finetune_epochs < 0:
            raise InputError("finetune_epochs must be >= 0")
        if self.early_stop_patience > self.max_epochs:
            raise InputError("early_stop_patience must not exceed max_epochs")


# -- optimizers ------------------------------------------------------------------------

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)

    def state_dict(self) -> dict:
        out = {"step": np.array(self.t, np.float32)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict):
        self.t = int(state.get("step", 0))
        self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v.")}


class SGDMomentum:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.buf = {}

    def step(self, params: dict, grads: dict):
        for k, g in grads.items():
            b = self.buf.get(k)
            if b is None:
                b = self.buf[k] = np.zeros_like(g)
            b *= self.momentum
            b += g
            params[k] -= (self.lr * b).astype(params[k].dtype)

    def state_dict(self) -> dict:
        return {f"buf.{k}": v for k, v in self.buf.items()}

    def load_state_dict(self, state: dict):
        self.buf = {k[4:]: v.copy() for k, v in state.items() if k.startswith("buf.")}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return SGDMomentum(config.learning_rate, config.momentum)


# -- scaling ---------------------------------------------------------------------------

def fit_scaling(x: np.ndarray, y: np.ndarray | None = None) -> dict:
    """Per-channel input standardization and (optional) label standardization."""
    mean = x.mean(axis=(0, 2), dtype=np.float64)
    std = x.std(axis=(0, 2), dtype=np.float64)
    out = {"in_mean": mean.astype(np.float32), "in_std": np.where(std > 0, std, 1.0).astype(np.float32)}
    if y is not None:
        sd = float(np.std(y, dtype=np.float64))
        out["y_mean"] = np.array([np.mean(y, dtype=np.float64)], np.float32)
        out["y_std"] = np.array([sd if sd > 0 else 1.0], np.float32)
    return out


def scale_inputs(graph: NetworkGraph, x: np.ndarray) -> np.ndarray:
    s = graph.scaling
    if "in_mean" not in s:
        return np.asarray(x, dtype=graph.dtype)
    return ((x - s["in_mean"][None, :, None]) / s["in_std"][None, :, None]).astype(graph.dtype)


def scale_targets(graph: NetworkGraph, y: np.ndarray) -> np.ndarray:
    s = graph.scaling
    if "y_mean" not in s:
        return np.asarray(y, dtype=graph.dtype)
    return ((y - s["y_mean"][0]) / s["y_std"][0]).astype(graph.dtype)


def unscale_targets(graph: NetworkGraph, y: np.ndarray) -> np.ndarray:
    s = graph.scaling
    if "y_mean" not in s:
        return y
    return y * s["y_std"][0] + s["y_mean"][0]


def predict(graph: NetworkGraph, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Model outputs in label units, ``[N, out_units]``."""
    outs = []
    for i in range(0, len(x), batch_size):
        xb = scale_inputs(graph, x[i:i + batch_size])
        outs.append(forward(graph, xb).data)
    if not outs:
        return np.zeros((0,) + tuple(graph.output_shape()), dtype=graph.dtype)
    return unscale_targets(graph, np.concatenate(outs))


def rmse_of(graph: NetworkGraph, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    pred = predict(graph, x)[:, 0].astype(np.float64)
    return float(np.sqrt(np.mean((pred - y) ** 2)))


# -- generic loop ------------------------------------------------------------------------

def _enforce_masks(graph: NetworkGraph):
    for lid, mask in graph.masks.items():
        graph.params[f"{lid}.weight"] *= mask
    for e in graph.skip_edges:
        graph.params[f"{e.name}.weight"] *= e.mask[:, :, None].astype(graph.dtype)


def _fit(graph: NetworkGraph, x_tr, t_tr, config: TrainConfig, epochs: int, evaluate,
         optimizer=None, patience: int | None = None, on_epoch=None):
    """Minimize MSE between ``forward(x)`` and the pre-scaled targets ``t``.

    ``evaluate(graph)`` returns the validation score (lower is better) or
    ``None``.  Returns ``(history, optimizer)``; with early stopping the best
    weights are restored.
    """
    config.validate()
    if optimizer is None:
        optimizer = make_optimizer(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    keys = sorted(graph.params)
    tensors = {k: ad.Tensor(graph.params[k], requires_grad=True, dtype=graph.params[k].dtype) for k in keys}
    _enforce_masks(graph)
    history, best, best_epoch, best_params = [], np.inf, 0, None
    y_std = float(graph.scaling["y_std"][0]) if "y_std" in graph.scaling else 1.0
    n = len(x_tr)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sq_sum = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            for t in tensors.values():
                t.grad = None
            pred = forward(graph, x_tr[idx], tensors)
            loss = ad.mse_loss(pred, t_tr[idx].reshape(pred.shape))
            loss.backward()
            grads = {k: tensors[k].grad for k in keys if tensors[k].grad is not None}
            lv = float(loss.data)
            if not np.isfinite(lv) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}: loss={lv}, grad-norm={norm}")
            optimizer.step(graph.params, grads)
            _enforce_masks(graph)
            if not all(np.all(np.isfinite(graph.params[k])) for k in keys):
                norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
                raise NumericError(f"non-finite weights after the update at epoch {epoch}, batch {bi}: "
                                   f"loss={lv}, grad-norm={norm}")
            sq_sum += lv * len(idx)
        score = evaluate(graph) if evaluate is not None else None
        if score is not None and not np.isfinite(score):
            raise NumericError(f"non-finite validation score after epoch {epoch} "
                               f"(last batch {bi}, loss={lv})")
        history.append({"epoch": epoch, "train_rmse": float(np.sqrt(sq_sum / n)) * y_std,
                        "val_rmse": float("nan") if score is None else float(score),
                        "wall_seconds": time.perf_counter() - t0})
        if on_epoch is not None:
            on_epoch(history[-1])
        if score is not None and patience is not None:
            if score < best:
                best, best_epoch = score, epoch
                best_params = {k: v.copy() for k, v in graph.params.items()}
            elif epoch - best_epoch >= patience:
                break
    if best_params is not None:
        for k, v in best_params.items():
            graph.params[k][...] = v
    return history, optimizer


def _regression_arrays(dataset):
    """Accept a synth ``Dataset`` or ``(x_train, y_train, x_val, y_val)``."""
    if hasattr(dataset, "arrays"):
        x_tr, y_tr, _, _ = dataset.arrays("train")
        x_va, y_va, _, _ = dataset.arrays("val")
        return x_tr, y_tr, x_va, y_va
    return dataset


def train(graph: NetworkGraph, dataset, config: TrainConfig = TrainConfig(),
          epochs: int | None = None, fit_scale: bool = True, optimizer=None, on_epoch=None):
    """Train a scalar regressor on the train split, early-stopping on val RMSE.

    Returns ``(trained_graph, history)``; the input graph is not modified.
    Label units are restored in ``history`` (RMSE in L/min).
    """
    if graph.output_shape() != (1,):
        raise ContractError(f"regression graph must output one scalar, has {graph.output_shape()}")
    x_tr, y_tr, x_va, y_va = _regression_arrays(dataset)
    if len(x_tr) == 0:
        raise InputError("empty training split")
    g = graph.copy()
    if fit_scale or "y_mean" not in g.scaling:
        g.scaling = fit_scaling(x_tr, y_tr)
    xs, ts = scale_inputs(g, x_tr), scale_targets(g, y_tr)
    evaluate = (lambda gr: rmse_of(gr, x_va, y_va)) if len(x_va) else None
    history, opt = _fit(g, xs, ts, config, epochs or config.max_epochs, evaluate,
                        optimizer=optimizer, patience=config.early_stop_patience, on_epoch=on_epoch)
    return g, history


def finetune(graph: NetworkGraph, dataset, config: TrainConfig = TrainConfig(), on_epoch=None):
    """Fine-tune a (pruned) graph for ``config.finetune_epochs`` with its existing scaling.

    Masked coordinates stay exactly zero throughout.
    """
    if config.finetune_epochs == 0:
        return graph.copy(), []
    patience = max(config.finetune_epochs, config.early_stop_patience)
    cfg = TrainConfig(**{**config.__dict__, "max_epochs": config.finetune_epochs,
                         "early_stop_patience": min(patience, config.finetune_epochs)})
    return train(graph, dataset, cfg, fit_scale=False, on_epoch=on_epoch)


# -- proxy pretraining and transfer ---------------------------------------------------------

def make_proxy_dataset(n: int, n_classes: int = 4, channels: int = 2, length: int = 1500,
                       fs_hz: float = 25.0, seed: int = 0, noise: float = 0.3):
    """Multiclass 1-D classification task shaped like the regression input.

    Class ``c`` fixes a (rate band, depth band) pair of a quasi-periodic
    oscillation on channel 0; channel 1 carries a baseline plus a weak
    copy of it.  Returns ``(x[n, C, L] float32, labels[n] int)``.
    """
    if n_classes < 2 or channels < 1 or length < 8:
        raise InputError("proxy task needs >= 2 classes, >= 1 channel and length >= 8")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1F]))
    labels = rng.integers(0, n_classes, size=n)
    n_rate = int(np.ceil(np.sqrt(n_classes)))
    t = np.arange(length) / fs_hz
    x = np.empty((n, channels, length), dtype=np.float32)
    for i, c in enumerate(labels):
        rate_band, depth_band = c % n_rate, c // n_rate
        f = rng.uniform(0.15, 0.25) + 0.2 * rate_band
        amp = rng.uniform(0.3, 0.5) * (1.0 + 1.2 * depth_band)
        phase = rng.uniform(0, 2 * np.pi)
        wave = amp * np.sin(2 * np.pi * f * t + phase) + noise * rng.standard_normal(length)
        x[i, 0] = wave
        for ch in range(1, channels):
            x[i, ch] = rng.normal(70, 8) + 4.0 * wave + noise * rng.standard_normal(length)
    return x, labels


def attach_head(graph: NetworkGraph, out_units: int, seed: int = 0) -> NetworkGraph:
    """Copy of ``graph`` whose final dense layer emits ``out_units`` values.

    The final layer is re-initialized; every other tensor is kept.
    """
    last = graph.layers[-1]
    if last.kind != "dense":
        raise ContractError("graph must end in a dense layer to swap its head")
    g = graph.copy()
    g.layers[-1] = LayerSpec(last.layer_id, "dense", {**last.hyper, "out_units": out_units})
    infer_shapes(g)
    fresh = init_params(g, seed, g.dtype)
    for suffix in ("weight", "bias"):
        g.params[f"{last.layer_id}.{suffix}"] = fresh[f"{last.layer_id}.{suffix}"]
    g.scaling = {}
    return g


def pretrain_proxy(graph: NetworkGraph, proxy_dataset, config: TrainConfig = TrainConfig(),
                   epochs: int | None = None, val_fraction: float = 0.2, on_epoch=None):
    """Train a classifier on the proxy task with ``graph``'s trunk.

    ``proxy_dataset`` is ``(x, labels)``.  The classifier is fit with MSE on
    one-hot targets and early-stops on held-out error rate.  Returns
    ``(classifier_graph, history, held_out_accuracy)``.
    """
    x, labels = proxy_dataset
    if x.ndim != 3 or x.shape[1:] != (graph.input_channels, graph.input_length):
        raise ContractError(
            f"proxy inputs {x.shape[1:]} incompatible with graph input "
            f"({graph.input_channels}, {graph.input_length})")
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    cls = attach_head(graph, n_classes, seed=config.seed + 1)
    n_val = max(1, int(round(val_fraction * len(x))))
    x_tr, l_tr, x_va, l_va = x[n_val:], labels[n_val:], x[:n_val], labels[:n_val]
    cls.scaling = fit_scaling(x_tr)
    onehot = np.eye(n_classes, dtype=cls.dtype)[l_tr]

    def error_rate(g):
        return 1.0 - proxy_accuracy(g, x_va, l_va)

    history, _ = _fit(cls, scale_inputs(cls, x_tr), onehot, config, epochs or config.max_epochs,
                      error_rate, patience=config.early_stop_patience, on_epoch=on_epoch)
    return cls, history, proxy_accuracy(cls, x_va, l_va)


def proxy_accuracy(classifier: NetworkGraph, x, labels) -> float:
    out = predict(classifier, x)
    return float(np.mean(out.argmax(axis=1) == np.asarray(labels)))


def transfer_head(pretrained: NetworkGraph, target: NetworkGraph) -> NetworkGraph:
    """Copy of ``target`` with every conv layer's tensors taken from ``pretrained``.

    Dense layers (the head) keep ``target``'s own initialization.
    """
    out = target.copy()
    for layer in target.layers:
        if layer.kind != "conv1d":
            continue
        for suffix in ("weight", "bias"):
            key = f"{layer.layer_id}.{suffix}"
            if key not in pretrained.params or pretrained.params[key].shape != out.params[key].shape:
                raise ContractError(f"pretrained graph has no compatible tensor {key!r}")
            out.params[key] = pretrained.params[key].copy()
    return out
