"""One-shot magnitude pruning, skip rewiring and block-level connectivity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._io import format_kv
from .errors import ContractError, InputError
from .graph import NetworkGraph, add_skip_edges, apply_layer, merge_skip, param_count

DEFAULT_SPARSITY = 0.9
DEFAULT_SCOPE = "per-layer"
SPARSITY_SWEEP = (0.5, 0.8, 0.9, 0.95)
SCOPES = ("global", "per-layer")
DENSE_BLOCKS = 2  # leading blocks kept dense by default


@dataclass
class PruneMask:
    layer_id: str
    mask: np.ndarray

    @property
    def kept_count(self) -> int:
        return int(np.count_nonzero(self.mask))


def pruned_count(n: int, sparsity: float) -> int:
    """How many of ``n`` weights a ``sparsity`` fraction removes (floor)."""
    return min(n, int(math.floor(sparsity * n + 1e-9)))


def _survivors(absw: np.ndarray, keep: int) -> np.ndarray:
    """Boolean selection of the ``keep`` largest magnitudes; ties favour lower index."""
    order = np.lexsort((np.arange(absw.size), -absw))
    sel = np.zeros(absw.size, dtype=bool)
    sel[order[:keep]] = True
    return sel


def compute_masks(graph: NetworkGraph, sparsity: float, scope: str = "global", exempt=()) -> list:
    """Magnitude masks over conv and dense weights (biases, skip kernels exempt).

    ``global`` ranks all prunable weights together; ``per-layer`` prunes the
    same fraction inside every layer.  Existing masks are honoured: weights
    that are already masked count as zero magnitude.  Layers named in
    ``exempt`` keep their current mask (all ones if unmasked) and take no
    part in the ranking.
    """
    if not 0.0 <= sparsity < 1.0:
        raise InputError(f"sparsity must lie in [0, 1), got {sparsity}")
    if scope not in SCOPES:
        raise InputError(f"scope must be one of {SCOPES}, got {scope!r}")
    exempt = set(exempt)
    unknown = exempt - {l.layer_id for l in graph.prunable_layers()}
    if unknown:
        raise InputError(f"exempt layers are not prunable layers of the graph: {sorted(unknown)}")
    layers = [l for l in graph.prunable_layers() if l.layer_id not in exempt]
    mags = []
    for layer in layers:
        w = np.abs(graph.params[f"{layer.layer_id}.weight"].astype(np.float64))
        if layer.layer_id in graph.masks:
            w = w * graph.masks[layer.layer_id]
        mags.append(w)
    if scope == "per-layer":
        sels = [_survivors(m.ravel(), m.size - pruned_count(m.size, sparsity)) for m in mags]
    else:
        flat = np.concatenate([m.ravel() for m in mags]) if mags else np.zeros(0)
        sel = _survivors(flat, flat.size - pruned_count(flat.size, sparsity))
        sels = np.split(sel, np.cumsum([m.size for m in mags])[:-1])
    dtype = graph.dtype
    out = {layer.layer_id: PruneMask(layer.layer_id, s.reshape(m.shape).astype(dtype))
           for layer, s, m in zip(layers, sels, mags)}
    for lid in exempt:
        shape = graph.params[f"{lid}.weight"].shape
        out[lid] = PruneMask(lid, graph.masks.get(lid, np.ones(shape)).astype(dtype))
    return [out[l.layer_id] for l in graph.prunable_layers()]


def apply_masks(graph: NetworkGraph, masks) -> NetworkGraph:
    """Copy of ``graph`` with masked weights zeroed and the masks attached."""
    out = graph.copy()
    by_id = {m.layer_id: m for m in masks}
    for layer in out.prunable_layers():
        if layer.layer_id not in by_id:
            raise ContractError(f"no mask for prunable layer {layer.layer_id!r}")
        key = f"{layer.layer_id}.weight"
        mask = by_id[layer.layer_id].mask
        if mask.shape != out.params[key].shape:
            raise ContractError(
                f"mask for {layer.layer_id!r} has shape {mask.shape}, weight is {out.params[key].shape}")
        mask = mask.astype(out.params[key].dtype)
        out.params[key] = out.params[key] * mask
        out.masks[layer.layer_id] = mask
    return out


def _layer_inputs(graph: NetworkGraph, x: np.ndarray):
    """Yield ``(layer, input)`` in execution order.

    Parameters are read only after each yield, so the consumer may adjust
    the layer it was just handed before the walk continues.
    """
    incoming = {}
    for e in graph.skip_edges:
        incoming.setdefault(e.dst, []).append(e)
    keep = {e.src for e in graph.skip_edges}
    saved = {}
    h = ad.as_tensor(x, dtype=graph.dtype)
    for layer in graph.layers:
        for e in incoming.get(layer.layer_id, ()):
            kernel = ad.Tensor(graph.params[f"{e.name}.weight"] * e.mask[:, :, None].astype(graph.dtype))
            h = ad.add(h, merge_skip(e, saved[e.src], kernel, h.shape[-1]))
        yield layer, h
        h = apply_layer(graph, layer, h)
        if layer.layer_id in keep:
            saved[layer.layer_id] = h


def rescale_survivors(pruned: NetworkGraph, reference: NetworkGraph, x) -> NetworkGraph:
    """Restore the reference's activation spread after pruning.

    Magnitude pruning shrinks every layer's output, and the shrinkage
    compounds with depth.  Walking both networks on the calibration batch
    ``x`` (raw inputs), each prunable layer of ``pruned`` gets one scalar
    gain on its surviving weights so that the standard deviation of its
    pre-activation output matches ``reference``; upstream layers are already
    corrected when a gain is measured.  Masks and biases are untouched.
    """
    from .trainer import scale_inputs  # trainer owns the input standardization

    if [l.layer_id for l in pruned.layers] != [l.layer_id for l in reference.layers]:
        raise ContractError("pruned and reference graphs have different layers")
    out = pruned.copy()
    xs = scale_inputs(reference, np.asarray(x))
    for (layer, hb), (_, ha) in zip(_layer_inputs(out, xs), _layer_inputs(reference, xs)):
        if not layer.prunable:
            continue
        key = f"{layer.layer_id}.weight"
        bias = out.params[f"{layer.layer_id}.bias"]
        want = float(np.std(apply_layer(reference, layer, ha).data))
        have = float(np.std(apply_layer(out, layer, hb).data))
        if have > 0 and want > 0 and np.any(out.params[key]):
            out.params[key] = (out.params[key] * (want / have)).astype(bias.dtype)
    return out


# -- connectivity ---------------------------------------------------------------------

@dataclass
class BlockGraph:
    """Weighted DAG over block boundaries; node 0 is the input, the last node the output.

    Edges run from a lower to a higher node index; parallel edges are allowed.
    """
    n_nodes: int
    edges: list = field(default_factory=list)  # (u, v, weight)

    def add(self, u: int, v: int, w: float):
        if not 0 <= u < v < self.n_nodes:
            raise ContractError(f"block edge ({u}, {v}) must satisfy 0 <= u < v < {self.n_nodes}")
        if w < 0:
            raise ContractError("block edge weights must be non-negative")
        self.edges.append((u, v, float(w)))


@dataclass
class ConnectivityReport:
    score: float
    per_block_path_mass: list
    method: str = "path-count"


def path_mass(block_graph: BlockGraph) -> list:
    """Total product-weight of all paths from node 0 to every node (DP)."""
    incoming = [[] for _ in range(block_graph.n_nodes)]
    for u, v, w in block_graph.edges:
        incoming[v].append((u, w))
    mass = [0.0] * block_graph.n_nodes
    mass[0] = 1.0
    for v in range(1, block_graph.n_nodes):
        mass[v] = sum(mass[u] * w for u, w in incoming[v])
    return mass


def _surviving_fraction(graph: NetworkGraph, layers) -> float:
    total = kept = 0
    for layer in layers:
        if not layer.prunable:
            continue
        w = graph.params[f"{layer.layer_id}.weight"]
        mask = graph.masks.get(layer.layer_id)
        alive = w != 0 if mask is None else (mask != 0) & (w != 0)
        total += w.size
        kept += int(np.count_nonzero(alive))
    return kept / total if total else 1.0


def block_adjacency(graph: NetworkGraph) -> BlockGraph:
    """Collapse a network to block granularity.

    Node ``b`` is the output of conv block ``b`` and the final node is the
    network output; the chain edge into node ``b`` weighs the surviving
    weight fraction of block ``b`` (the dense head forms the last hop).  A
    skip edge from block ``a``'s output to block ``b``'s input links node
    ``a`` to node ``b - 1`` with weight equal to its kernel density.
    """
    blocks = graph.blocks
    pos = {b: i + 1 for i, b in enumerate(blocks)}
    bg = BlockGraph(len(blocks) + 2)
    for b in blocks:
        bg.add(pos[b] - 1, pos[b], _surviving_fraction(graph, graph.block_layers(b)))
    head = [l for l in graph.layers if l.block is None]
    bg.add(len(blocks), len(blocks) + 1, _surviving_fraction(graph, head))

    def node_after(layer_id):
        blk = graph.layer(layer_id).block
        if blk is None:
            raise ContractError(f"skip endpoint {layer_id!r} is outside the conv blocks")
        return pos[blk]

    for e in graph.skip_edges:
        u = node_after(e.src)
        v = node_after(e.dst) - 1
        if graph.block_layers(graph.layer(e.src).block)[-1].layer_id != e.src:
            u -= 1  # source inside a block: its output precedes the block's end
        if u >= v:
            continue
        bg.add(u, v, e.density)
    return bg


def connectivity_score(graph) -> ConnectivityReport:
    bg = graph if isinstance(graph, BlockGraph) else block_adjacency(graph)
    mass = path_mass(bg)
    return ConnectivityReport(score=mass[-1], per_block_path_mass=mass)


# -- NeuralNetB ---------------------------------------------------------------------

@dataclass
class PruneSummary:
    sparsity: float
    scope: str
    pattern: str
    density: float
    params_before: int
    params_after: int
    prunable_before: int
    prunable_after: int
    skip_params: int
    connectivity_before: float
    connectivity_masked: float
    connectivity_after: float
    exempt: str = ""  # comma-separated layer ids left dense
    rescaled: bool = False

    @property
    def param_ratio(self) -> float:
        return self.params_after / self.params_before

    def items(self):
        return [(k, getattr(self, k)) for k in self.__dataclass_fields__] + [("param_ratio", self.param_ratio)]

    def to_text(self) -> str:
        return format_kv(self.items())


def default_exempt(graph: NetworkGraph, dense_blocks: int = DENSE_BLOCKS) -> tuple:
    """Layers left dense unless told otherwise: the first ``dense_blocks``
    blocks and the final regression layer.

    The leading convolutions hold a tiny share of the weights (about 0.5% in
    the VGG layout) yet every later feature is built from them; at 90%
    per-layer sparsity a 2-channel first conv keeps a handful of taps.
    """
    prunable = graph.prunable_layers()
    ids = [l.layer_id for l in prunable if l.block is not None and l.block <= dense_blocks]
    if prunable and prunable[-1].layer_id not in ids:
        ids.append(prunable[-1].layer_id)
    return tuple(ids)


def make_neural_net_b(trained_a: NetworkGraph, sparsity: float = DEFAULT_SPARSITY,
                      pattern="block-skip", density: float = 0.1, rng=None,
                      scope: str = DEFAULT_SCOPE, init_scale: float = 0.05, exempt=None,
                      calibration=None):
    """Prune ``trained_a`` once, then add sparse skip edges.

    ``exempt`` names layers left dense (default: :func:`default_exempt`).  With a
    ``calibration`` batch the survivors are rescaled layer by layer
    (:func:`rescale_survivors`) before the skips are added.

    Returns ``(neural_net_b, PruneSummary)``.
    """
    if exempt is None:
        exempt = default_exempt(trained_a)
    masked = apply_masks(trained_a, compute_masks(trained_a, sparsity, scope, exempt=exempt))
    if calibration is not None:
        masked = rescale_survivors(masked, trained_a, calibration)
    net_b = add_skip_edges(masked, pattern, density, rng, init_scale=init_scale)
    net_b.name = "NeuralNetB"
    prunable = sum(l.param_count() - l.param_shapes()["bias"][0] for l in trained_a.prunable_layers())
    zeros = sum(int(m.size - np.count_nonzero(m)) for m in net_b.masks.values())
    summary = PruneSummary(
        sparsity=sparsity, scope=scope, pattern=pattern if isinstance(pattern, str) else "custom",
        density=density,
        params_before=param_count(trained_a, effective=True),
        params_after=param_count(net_b, effective=True),
        prunable_before=prunable, prunable_after=prunable - zeros,
        skip_params=sum(e.nonzeros for e in net_b.skip_edges),
        connectivity_before=connectivity_score(trained_a).score,
        connectivity_masked=connectivity_score(masked).score,
        connectivity_after=connectivity_score(net_b).score,
        exempt=",".join(exempt), rescaled=calibration is not None)
    return net_b, summary
