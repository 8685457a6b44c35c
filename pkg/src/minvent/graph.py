"""Declarative 1-D VGG-style network graphs with sparse skip edges.

A :class:`NetworkGraph` is an ordered chain of :class:`LayerSpec` plus a
list of :class:`SkipEdge`.  A skip edge takes the *output* of ``src``,
projects its channels with a sparse 1x1 kernel, subsamples it in time when
the lengths differ, and adds the result to the *input* of ``dst``.

Weights live in ``graph.params`` as plain numpy arrays keyed
``"<layer_id>.weight"`` / ``"<layer_id>.bias"`` (skip kernels:
``"<edge name>.weight"``).  Pruning masks, when present, live in
``graph.masks`` keyed by layer id and multiply the weight during forward.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConstructionError, ContractError, InputError

KINDS = ("conv1d", "conv2d_ref", "maxpool", "dense", "relu", "flatten")
PRUNABLE = ("conv1d", "dense")
_REQUIRED = {
    "conv1d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
    "conv2d_ref": ("in_channels", "out_channels", "kernel"),
    "maxpool": ("kernel", "stride"),
    "dense": ("in_units", "out_units"),
    "relu": (),
    "flatten": (),
}
_NONNEG = ("padding",)


@dataclass(frozen=True)
class LayerSpec:
    layer_id: str
    kind: str
    hyper: dict = field(default_factory=dict)
    block: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstructionError(f"layer {self.layer_id!r}: unknown kind {self.kind!r}")
        for key in _REQUIRED[self.kind]:
            if key not in self.hyper:
                raise ConstructionError(f"layer {self.layer_id!r}: missing hyperparameter {key!r}")
            v = self.hyper[key]
            if not isinstance(v, (int, np.integer)) or v < 0 or (v == 0 and key not in _NONNEG):
                raise ConstructionError(f"layer {self.layer_id!r}: {key}={v!r} must be a positive integer")

    def __getitem__(self, key):
        return self.hyper[key]

    @property
    def prunable(self) -> bool:
        return self.kind in PRUNABLE

    def param_shapes(self) -> dict:
        h = self.hyper
        if self.kind == "conv1d":
            return {"weight": (h["out_channels"], h["in_channels"], h["kernel"]), "bias": (h["out_channels"],)}
        if self.kind == "conv2d_ref":
            return {"weight": (h["out_channels"], h["in_channels"], h["kernel"], h["kernel"]),
                    "bias": (h["out_channels"],)}
        if self.kind == "dense":
            return {"weight": (h["out_units"], h["in_units"]), "bias": (h["out_units"],)}
        return {}

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))


@dataclass
class SkipEdge:
    src: str
    dst: str
    mask: np.ndarray  # [dst_channels, src_channels] of 0/1
    name: str = ""

    @property
    def density(self) -> float:
        return np.count_nonzero(self.mask) / self.mask.size if self.mask.size else 0.0

    @property
    def nonzeros(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass
class NetworkGraph:
    input_channels: int
    input_length: int
    layers: list
    skip_edges: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    name: str = "net"
    scaling: dict = field(default_factory=dict)  # input/label standardization, see trainer

    def __post_init__(self):
        ids = [l.layer_id for l in self.layers]
        if len(set(ids)) != len(ids):
            raise ConstructionError("duplicate layer ids")
        self._index = {lid: i for i, lid in enumerate(ids)}

    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self.layers[self._index[layer_id]]
        except KeyError:
            raise ContractError(f"unknown layer {layer_id!r}") from None

    def index(self, layer_id: str) -> int:
        if layer_id not in self._index:
            raise ContractError(f"unknown layer {layer_id!r}")
        return self._index[layer_id]

    def copy(self) -> "NetworkGraph":
        return copy.deepcopy(self)

    @property
    def blocks(self) -> list:
        """Sorted conv block numbers."""
        return sorted({l.block for l in self.layers if l.block is not None})

    def block_layers(self, block: int) -> list:
        return [l for l in self.layers if l.block == block]

    def prunable_layers(self) -> list:
        return [l for l in self.layers if l.prunable]

    @property
    def dtype(self):
        for v in self.params.values():
            return v.dtype
        return ad.DEFAULT_DTYPE

    def astype(self, dtype) -> "NetworkGraph":
        g = self.copy()
        g.params = {k: v.astype(dtype) for k, v in g.params.items()}
        g.masks = {k: v.astype(dtype) for k, v in g.masks.items()}
        return g

    def output_shape(self) -> tuple:
        return infer_shapes(self)[-1]


# -- shapes and validation ---------------------------------------------------------

def _layer_out_shape(layer: LayerSpec, shape: tuple) -> tuple:
    h = layer.hyper
    if layer.kind == "conv1d":
        if len(shape) != 2 or shape[0] != h["in_channels"]:
            raise ConstructionError(f"layer {layer.layer_id!r}: expects {h['in_channels']} channels, got {shape}")
        n = ad.conv1d_output_length(shape[1], h["kernel"], h["stride"], h["padding"])
        if n < 1:
            raise ConstructionError(f"layer {layer.layer_id!r}: non-positive output length {n}")
        return (h["out_channels"], n)
    if layer.kind == "maxpool":
        if len(shape) != 2:
            raise ConstructionError(f"layer {layer.layer_id!r}: pooling needs a [C, L] input")
        n = (shape[1] - h["kernel"]) // h["stride"] + 1
        if n < 1:
            raise ConstructionError(f"layer {layer.layer_id!r}: non-positive output length {n}")
        return (shape[0], n)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        if len(shape) != 1 or shape[0] != h["in_units"]:
            raise ConstructionError(f"layer {layer.layer_id!r}: expects {h['in_units']} units, got {shape}")
        return (h["out_units"],)
    if layer.kind == "relu":
        return shape
    raise ConstructionError(f"layer {layer.layer_id!r}: kind {layer.kind!r} is not executable")


def infer_shapes(graph: NetworkGraph) -> list:
    """Per-sample output shape of every layer, in order."""
    shape = (graph.input_channels, graph.input_length)
    out = []
    for layer in graph.layers:
        shape = _layer_out_shape(layer, shape)
        out.append(shape)
    return out


def input_shapes(graph: NetworkGraph) -> list:
    shapes = infer_shapes(graph)
    return [(graph.input_channels, graph.input_length)] + shapes[:-1]


def validate_dag(graph: NetworkGraph) -> None:
    """Reject cyclic or shape-irreconcilable skip edges.

    The chain plus skip edges are checked for cycles with Kahn's algorithm,
    and every edge must run forward in execution order.
    """
    n = len(graph.layers)
    succ = {i: [i + 1] if i + 1 < n else [] for i in range(n)}
    indeg = [0] + [1] * (n - 1)
    for e in graph.skip_edges:
        s, d = graph.index(e.src), graph.index(e.dst)
        succ[s].append(d)
        indeg[d] += 1
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        u = queue.pop()
        seen += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if seen != n:
        raise ConstructionError("skip edges introduce a cycle")
    outs, ins = infer_shapes(graph), input_shapes(graph)
    for e in graph.skip_edges:
        s, d = graph.index(e.src), graph.index(e.dst)
        if d <= s:
            raise ConstructionError(f"skip edge {e.src}->{e.dst} is not forward-directed")
        src_shape, dst_shape = outs[s], ins[d]
        if len(src_shape) != 2 or len(dst_shape) != 2:
            raise ConstructionError(f"skip edge {e.src}->{e.dst}: both ends must be temporal [C, L]")
        if e.mask.shape != (dst_shape[0], src_shape[0]):
            raise ConstructionError(
                f"skip edge {e.src}->{e.dst}: kernel {e.mask.shape} != ({dst_shape[0]}, {src_shape[0]})")
        if src_shape[1] < dst_shape[1]:
            raise ConstructionError(
                f"skip edge {e.src}->{e.dst}: source length {src_shape[1]} shorter than {dst_shape[1]}")


# -- parameters --------------------------------------------------------------------

def init_params(graph: NetworkGraph, rng=None, dtype=ad.DEFAULT_DTYPE) -> dict:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    params = {}
    for layer in graph.layers:
        shapes = layer.param_shapes()
        if not shapes:
            continue
        w_shape = shapes["weight"]
        fan_in = int(np.prod(w_shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        params[f"{layer.layer_id}.weight"] = rng.uniform(-bound, bound, size=w_shape).astype(dtype)
        params[f"{layer.layer_id}.bias"] = np.zeros(shapes["bias"], dtype=dtype)
    return params


def param_count(graph: NetworkGraph, effective: bool = False) -> int:
    """Exact parameter count.

    Layer tensors count every element; skip kernels count their nonzero
    pattern entries (they are sparse by construction).  With
    ``effective=True`` masked-out weights are subtracted.
    """
    total = sum(layer.param_count() for layer in graph.layers)
    total += sum(e.nonzeros for e in graph.skip_edges)
    if effective:
        total -= sum(int(m.size - np.count_nonzero(m)) for m in graph.masks.values())
    return int(total)


def vgg16_2d_reference_layers(num_classes: int = 1000, image_size: int = 224) -> list:
    """Canonical 2-D VGG-16 (configuration D) for parameter bookkeeping only."""
    widths = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
    layers, c_in, size, i = [], 3, image_size, 0
    for w in widths:
        if w == "M":
            size //= 2
            continue
        i += 1
        layers.append(LayerSpec(f"conv{i}", "conv2d_ref", {"in_channels": c_in, "out_channels": w, "kernel": 3}))
        c_in = w
    flat = c_in * size * size
    for j, (a, b) in enumerate([(flat, 4096), (4096, 4096), (4096, num_classes)], 1):
        layers.append(LayerSpec(f"fc{j}", "dense", {"in_units": a, "out_units": b}))
    return layers


def reference_vgg16_2d_count() -> int:
    """Parameter count of 2-D VGG-16 on 224x224x3 inputs with 1000 classes."""
    return int(sum(l.param_count() for l in vgg16_2d_reference_layers()))


# -- builders ----------------------------------------------------------------------

VGG16_WIDTHS = (64, 128, 256, 512, 512)
VGG16_DEPTHS = (2, 2, 3, 3, 3)


@dataclass(frozen=True)
class NetConfig:
    input_channels: int = 2
    input_length: int = 1500
    widths: tuple = VGG16_WIDTHS
    depths: tuple = VGG16_DEPTHS
    width_mult: float = 1.0
    kernel: int = 3
    dense_units: tuple = (352, 352)
    output_units: int = 1
    seed: int = 0

    def channel_widths(self) -> tuple:
        return tuple(max(1, int(round(w * self.width_mult))) for w in self.widths)


DESK_CONFIG = NetConfig(width_mult=0.125, dense_units=(64, 64))


def vgg_layers(config: NetConfig) -> list:
    """Conv trunk (blocks of conv+relu then 2x max pool) and dense head."""
    if len(config.widths) != len(config.depths):
        raise ConstructionError("widths and depths must have the same number of blocks")
    layers, c_in, length = [], config.input_channels, config.input_length
    pad = config.kernel // 2
    for b, (width, depth) in enumerate(zip(config.channel_widths(), config.depths), 1):
        for j in range(1, depth + 1):
            layers.append(LayerSpec(f"b{b}c{j}", "conv1d", {
                "in_channels": c_in, "out_channels": width, "kernel": config.kernel,
                "stride": 1, "padding": pad}, block=b))
            layers.append(LayerSpec(f"b{b}r{j}", "relu", {}, block=b))
            c_in = width
            length = ad.conv1d_output_length(length, config.kernel, 1, pad)
        length = (length - 2) // 2 + 1
        if length < 1:
            raise ConstructionError(
                f"input length {config.input_length} collapses to {length} samples after block {b}")
        layers.append(LayerSpec(f"b{b}p", "maxpool", {"kernel": 2, "stride": 2}, block=b))
    layers.append(LayerSpec("flat", "flatten", {}))
    units = c_in * length
    for j, h in enumerate(config.dense_units, 1):
        layers.append(LayerSpec(f"fc{j}", "dense", {"in_units": units, "out_units": h}))
        layers.append(LayerSpec(f"fc{j}r", "relu", {}))
        units = h
    layers.append(LayerSpec("out", "dense", {"in_units": units, "out_units": config.output_units}))
    return layers


def build_neural_net_a(config: NetConfig = NetConfig(), dtype=ad.DEFAULT_DTYPE) -> NetworkGraph:
    """Unpruned VGG-16-style 1-D regressor (13 conv in 2-2-3-3-3 blocks, 3 dense)."""
    if config.input_channels < 1 or config.input_length < 1 or config.output_units < 1:
        raise ConstructionError("input channels/length and output units must be positive")
    graph = NetworkGraph(config.input_channels, config.input_length, vgg_layers(config), name="NeuralNetA")
    infer_shapes(graph)
    graph.params = init_params(graph, config.seed, dtype)
    return graph


# -- forward -----------------------------------------------------------------------

def _param_tensor(graph, tensors, key):
    if tensors is not None and key in tensors:
        return tensors[key]
    return ad.Tensor(graph.params[key], dtype=graph.params[key].dtype)


def _effective_weight(graph, tensors, layer_id):
    w = _param_tensor(graph, tensors, f"{layer_id}.weight")
    mask = graph.masks.get(layer_id)
    if mask is None:
        return w
    return ad.mul(w, ad.Tensor(mask.astype(w.dtype), dtype=w.dtype))


def _skip_kernel(graph, tensors, edge):
    w = _param_tensor(graph, tensors, f"{edge.name}.weight")
    return ad.mul(w, ad.Tensor(edge.mask[:, :, None].astype(w.dtype), dtype=w.dtype))


def run_layer(layer: LayerSpec, x: ad.Tensor, weight=None, bias=None) -> ad.Tensor:
    h = layer.hyper
    if layer.kind == "conv1d":
        return ad.conv1d(x, weight, bias, stride=h["stride"], padding=h["padding"])
    if layer.kind == "dense":
        return ad.dense(x, weight, bias)
    if layer.kind == "relu":
        return ad.relu(x)
    if layer.kind == "maxpool":
        return ad.maxpool1d(x, h["kernel"], h["stride"])
    if layer.kind == "flatten":
        return ad.flatten(x)
    raise ContractError(f"layer kind {layer.kind!r} cannot be executed")


def apply_layer(graph: NetworkGraph, layer: LayerSpec, x: ad.Tensor, tensors: dict | None = None) -> ad.Tensor:
    """One layer of ``graph`` with its (masked) parameters."""
    if layer.prunable:
        w = _effective_weight(graph, tensors, layer.layer_id)
        b = _param_tensor(graph, tensors, f"{layer.layer_id}.bias")
        return run_layer(layer, x, w, b)
    return run_layer(layer, x)


def merge_skip(edge: SkipEdge, src_out: ad.Tensor, kernel: ad.Tensor, target_len: int) -> ad.Tensor:
    """Sparse 1x1 projection of ``src_out``, strided down to ``target_len``."""
    proj = ad.conv1d(src_out, kernel)
    length = proj.shape[-1]
    if length == target_len:
        return proj
    if length < target_len:
        raise ContractError(f"skip edge {edge.src}->{edge.dst}: length {length} < {target_len}")
    return ad.subsample(proj, length // target_len, target_len)


def forward(graph: NetworkGraph, batch, tensors: dict | None = None) -> ad.Tensor:
    """Run ``batch[N, C, L]`` through the graph.

    ``tensors`` optionally maps parameter names to (gradient-tracking)
    tensors that replace the stored arrays.
    """
    x = ad.as_tensor(batch, dtype=graph.dtype)
    if x.data.ndim != 3 or x.shape[1:] != (graph.input_channels, graph.input_length):
        raise ContractError(
            f"batch shape {x.shape} does not match input [N, {graph.input_channels}, {graph.input_length}]")
    incoming = {}
    for e in graph.skip_edges:
        incoming.setdefault(e.dst, []).append(e)
    keep = {e.src for e in graph.skip_edges}
    saved = {}
    for layer in graph.layers:
        for e in incoming.get(layer.layer_id, ()):
            try:
                x = ad.add(x, merge_skip(e, saved[e.src], _skip_kernel(graph, tensors, e), x.shape[-1]))
            except (ContractError, KeyError) as exc:
                raise ContractError(f"cannot merge skip edge {e.name} ({e.src}->{e.dst}): {exc}") from exc
        x = apply_layer(graph, layer, x, tensors)
        if layer.layer_id in keep:
            saved[layer.layer_id] = x
    return x


# -- skip edges --------------------------------------------------------------------

PATTERNS = ("block-skip", "dense-skip")


def block_pairs(graph: NetworkGraph, pattern) -> list:
    """Resolve a pattern name (or explicit ``[(src_block, dst_block), ...]``)."""
    blocks = graph.blocks
    if isinstance(pattern, str):
        if pattern == "block-skip":
            return [(b, b + 2) for b in blocks if b + 2 in blocks]
        if pattern == "dense-skip":
            return [(a, b) for a in blocks for b in blocks if b >= a + 2]
        raise InputError(f"unknown skip pattern {pattern!r}; choose from {PATTERNS}")
    pairs = [tuple(p) for p in pattern]
    for a, b in pairs:
        if a not in blocks or b not in blocks:
            raise InputError(f"pattern references missing block in ({a}, {b})")
    return pairs


def add_skip_edges(graph: NetworkGraph, pattern="block-skip", density: float = 0.1,
                   rng=None, init_scale: float = 0.05) -> NetworkGraph:
    """Return a copy of ``graph`` with sparse 1x1 skip projections added.

    Block ``a``'s output (its last layer) feeds the input of block ``b``'s
    first layer.  Each kernel keeps exactly ``round(density * area)``
    entries chosen without replacement; kept values have magnitude in
    ``[init_scale/2, init_scale]`` with random sign (zero when
    ``init_scale == 0``).
    """
    if not 0.0 < density <= 1.0:
        raise InputError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(rng)
    out = graph.copy()
    outs, ins = infer_shapes(out), input_shapes(out)
    for a, b in block_pairs(graph, pattern):
        src = out.block_layers(a)[-1].layer_id
        dst = out.block_layers(b)[0].layer_id
        if out.index(dst) <= out.index(src):
            raise ConstructionError(f"pattern edge block {a} -> block {b} would create a cycle")
        c_src, c_dst = outs[out.index(src)][0], ins[out.index(dst)][0]
        area = c_src * c_dst
        nnz = int(round(density * area))
        if nnz < 1:
            raise InputError(f"density {density} leaves no entries on a {c_dst}x{c_src} fan")
        mask = np.zeros(area, dtype=np.float32)
        mask[rng.choice(area, size=nnz, replace=False)] = 1.0
        mask = mask.reshape(c_dst, c_src)
        name = f"skip{len(out.skip_edges)}"
        values = rng.uniform(0.5, 1.0, size=(c_dst, c_src)) * rng.choice((-1.0, 1.0), size=(c_dst, c_src))
        out.params[f"{name}.weight"] = (init_scale * values * mask)[:, :, None].astype(out.dtype)
        out.skip_edges.append(SkipEdge(src, dst, mask, name))
    validate_dag(out)
    return out


# -- plain-text architecture description --------------------------------------------

_SEPARATOR = "---"


def to_spec_text(graph: NetworkGraph) -> str:
    lines = [f"input channels={graph.input_channels} length={graph.input_length} name={graph.name}"]
    for l in graph.layers:
        parts = [l.kind, f"id={l.layer_id}"]
        if l.block is not None:
            parts.append(f"block={l.block}")
        parts += [f"{k}={v}" for k, v in l.hyper.items()]
        lines.append(" ".join(parts))
    lines.append(_SEPARATOR)
    for e in graph.skip_edges:
        lines.append(f"skip name={e.name} src={e.src} dst={e.dst} density={e.density!r}")
    return "\n".join(lines) + "\n"


def _fields(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConstructionError(f"arch line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def from_spec_text(text: str) -> NetworkGraph:
    """Parse :func:`to_spec_text` output.

    Skip masks come back all-zero; checkpoints carry them with the weights.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("input "):
        raise ConstructionError("arch text must start with an 'input' line")
    head = _fields(lines[0].split()[1:], 1)
    layers, edges, in_skips = [], [], False
    for lineno, line in enumerate(lines[1:], 2):
        if line == _SEPARATOR:
            in_skips = True
            continue
        kind, *rest = line.split()
        f = _fields(rest, lineno)
        if in_skips:
            if kind != "skip":
                raise ConstructionError(f"arch line {lineno}: expected a skip edge")
            edges.append((f["name"], f["src"], f["dst"]))
            continue
        lid = f.pop("id", None)
        if lid is None:
            raise ConstructionError(f"arch line {lineno}: layer without id")
        block = f.pop("block", None)
        try:
            hyper = {k: int(v) for k, v in f.items()}
        except ValueError as exc:
            raise ConstructionError(f"arch line {lineno}: {exc}") from exc
        layers.append(LayerSpec(lid, kind, hyper, None if block is None else int(block)))
    graph = NetworkGraph(int(head["channels"]), int(head["length"]), layers, name=head.get("name", "net"))
    outs, ins = infer_shapes(graph), input_shapes(graph)
    for name, src, dst in edges:
        shape = (ins[graph.index(dst)][0], outs[graph.index(src)][0])
        graph.skip_edges.append(SkipEdge(src, dst, np.zeros(shape, np.float32), name))
    validate_dag(graph)
    return graph
