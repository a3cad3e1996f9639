"""Rotation-equivariant molecular encoder.

Each node carries invariant scalar channels and equivariant 3-vector
channels. A layer mixes vector channels with a bias-free matrix, feeds
their norms to the scalar update, and gates each vector channel with a
scalar, so scalars stay invariant and vectors rotate with the input.
Message passing averages states over closed neighborhoods; pooling keeps
scalars only, making the graph embedding rigid-motion invariant. A
two-layer MLP adapter projects the pooled embedding into the language
model's hidden width.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .chem.conformer import Conformer
from .chem.graph import MolecularGraph, ring_atoms
from .errors import Error
from .rng import Rng

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
ATOM_FEATURES = len(ELEMENTS) + 3  # one-hot + charge + aromatic + in-ring


class ConformerMismatch(Error):
    pass


class EmptyGraph(Error):
    pass


@dataclass
class GvpConfig:
    scalar_width: int = 32
    vector_width: int = 4
    layers: int = 4
    adapter_hidden: int = 128
    out_width: int = 64  # language model hidden size

    def __post_init__(self):
        if self.scalar_width < self.vector_width:
            raise Error("scalar_width must be >= vector_width (vector gating "
                        "reads the leading scalar outputs)")


@dataclass
class GvpLayerParams:
    w_v: ag.Tensor            # (nv, nv) vector channel mixing, never biased
    w_s: ag.Tensor            # (ns_out, ns_in + nv)
    b_s: ag.Tensor            # (ns_out,)
    scalar_act: str = "relu"
    gate_act: str = "sigmoid"

    def named(self, prefix):
        yield f"{prefix}w_v", self.w_v
        yield f"{prefix}w_s", self.w_s
        yield f"{prefix}b_s", self.b_s


@dataclass
class GvpParams:
    config: GvpConfig
    feat_proj: ag.Tensor      # (ns, ATOM_FEATURES)
    layers: list = field(default_factory=list)
    adapter_w1: ag.Tensor = None
    adapter_b1: ag.Tensor = None
    adapter_w2: ag.Tensor = None
    adapter_b2: ag.Tensor = None

    def named(self, prefix="gvp."):
        yield f"{prefix}feat_proj", self.feat_proj
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}layer{i}.")
        yield f"{prefix}adapter.w1", self.adapter_w1
        yield f"{prefix}adapter.b1", self.adapter_b1
        yield f"{prefix}adapter.w2", self.adapter_w2
        yield f"{prefix}adapter.b2", self.adapter_b2


def init_gvp_params(config: GvpConfig, rng: Rng) -> GvpParams:
    ns, nv = config.scalar_width, config.vector_width
    params = GvpParams(
        config=config,
        feat_proj=ag.param(rng.split("feat").normal((ns, ATOM_FEATURES),
                                                    scale=1.0 / math.sqrt(ATOM_FEATURES))),
    )
    for i in range(config.layers):
        r = rng.split(f"layer{i}")
        params.layers.append(GvpLayerParams(
            w_v=ag.param(r.split("wv").normal((nv, nv), scale=1.0 / math.sqrt(nv))),
            w_s=ag.param(r.split("ws").normal((ns, ns + nv), scale=1.0 / math.sqrt(ns + nv))),
            b_s=ag.param(np.zeros(ns)),
        ))
    h = config.adapter_hidden
    params.adapter_w1 = ag.param(rng.split("a1").normal((h, ns), scale=1.0 / math.sqrt(ns)))
    params.adapter_b1 = ag.param(np.zeros(h))
    params.adapter_w2 = ag.param(rng.split("a2").normal((config.out_width, h),
                                                        scale=1.0 / math.sqrt(h)))
    params.adapter_b2 = ag.param(np.zeros(config.out_width))
    return params


_SCALAR_ACTS = {"relu": ag.relu, "identity": lambda x: x}


def gvp_layer(scalars: ag.Tensor, vectors: ag.Tensor, params: GvpLayerParams):
    """One update: (n, ns) scalars and (n, nv, 3) vectors to the same shapes."""
    n, nv = vectors.shape[0], vectors.shape[1]
    if params.w_v.shape[1] != nv:
        raise ag.ShapeMismatch("gvp_layer vectors", params.w_v.shape, vectors.shape)
    mixed = ag.matmul(params.w_v, vectors)               # (n, nv, 3)
    norms = ag.l2norm(mixed)                             # (n, nv)
    joint = ag.concat([scalars, norms], axis=1)
    pre = ag.add(ag.matmul(joint, ag.transpose(params.w_s)), params.b_s)
    new_scalars = _SCALAR_ACTS[params.scalar_act](pre)
    if params.gate_act == "one":
        return new_scalars, mixed
    gate = ag.sigmoid(ag.slice_axis(new_scalars, 1, 0, nv))
    new_vectors = ag.mul(mixed, ag.reshape(gate, (n, nv, 1)))
    return new_scalars, new_vectors


def atom_features(graph: MolecularGraph) -> np.ndarray:
    rings = ring_atoms(graph)
    feats = np.zeros((len(graph.atoms), ATOM_FEATURES))
    for idx, atom in enumerate(graph.atoms):
        feats[idx, ELEMENTS.index(atom.element)] = 1.0
        feats[idx, len(ELEMENTS)] = float(atom.charge)
        feats[idx, len(ELEMENTS) + 1] = float(atom.aromatic)
        feats[idx, len(ELEMENTS) + 2] = float(idx in rings)
    return feats


def initial_vectors(graph: MolecularGraph, conformer: Conformer, nv: int) -> np.ndarray:
    """Channel 0 holds the sum of unit vectors toward bonded neighbors.

    Built from relative positions only, so the result is translation
    invariant by construction.
    """
    n = len(graph.atoms)
    vectors = np.zeros((n, nv, 3))
    coords = conformer.coordinates
    for bond in graph.bonds:
        delta = coords[bond.b] - coords[bond.a]
        norm = np.linalg.norm(delta)
        if norm > 0:
            vectors[bond.a, 0] += delta / norm
            vectors[bond.b, 0] -= delta / norm
    return vectors


def _mean_aggregation_matrix(graph: MolecularGraph) -> np.ndarray:
    """Row-normalized closed-neighborhood averaging (self plus neighbors)."""
    n = len(graph.atoms)
    m = np.eye(n)
    for bond in graph.bonds:
        m[bond.a, bond.b] = 1.0
        m[bond.b, bond.a] = 1.0
    return m / m.sum(axis=1, keepdims=True)


def _run_layers(scalars, vectors, agg, params: GvpParams):
    n, nv = vectors.shape[0], vectors.shape[1]
    agg_t = ag.tensor(agg)
    for layer in params.layers:
        scalars = ag.matmul(agg_t, scalars)
        flat = ag.reshape(vectors, (n, nv * 3))
        vectors = ag.reshape(ag.matmul(agg_t, flat), (n, nv, 3))
        scalars, vectors = gvp_layer(scalars, vectors, layer)
    return scalars, vectors


def gvp_message_pass(graph: MolecularGraph, conformer: Conformer, params: GvpParams):
    """Per-node states after the full layer stack: ((n, ns), (n, nv, 3))."""
    n = len(graph.atoms)
    if conformer.coordinates.shape != (n, 3):
        raise ConformerMismatch(
            f"conformer has shape {conformer.coordinates.shape}, graph has {n} atoms")
    scalars = ag.matmul(ag.tensor(atom_features(graph)), ag.transpose(params.feat_proj))
    vectors = ag.tensor(initial_vectors(graph, conformer, params.config.vector_width))
    return _run_layers(scalars, vectors, _mean_aggregation_matrix(graph), params)


def pool_graph(scalars: ag.Tensor) -> ag.Tensor:
    """Mean over nodes; vector channels are dropped, keeping the result
    invariant to rigid motions."""
    if scalars.shape[0] == 0:
        raise EmptyGraph("cannot pool an empty graph")
    return ag.tmean(scalars, axis=0, keepdims=True)


def project_adapter(pooled: ag.Tensor, params: GvpParams) -> ag.Tensor:
    h = ag.relu(ag.add(ag.matmul(pooled, ag.transpose(params.adapter_w1)),
                       params.adapter_b1))
    return ag.add(ag.matmul(h, ag.transpose(params.adapter_w2)), params.adapter_b2)


def encode_molecule(graph: MolecularGraph, conformer: Conformer, params: GvpParams):
    """Returns (pooled graph embedding (1, ns), adapted embedding (1, d))."""
    scalars, _ = gvp_message_pass(graph, conformer, params)
    pooled = pool_graph(scalars)
    return pooled, project_adapter(pooled, params)


def encode_molecules(graphs, conformers, params: GvpParams):
    """Batch encode via one block-diagonal pass; returns ((m, ns), (m, d))."""
    if not graphs:
        raise EmptyGraph("no molecules to encode")
    sizes = [len(g.atoms) for g in graphs]
    total = sum(sizes)
    nv = params.config.vector_width

    feats = np.zeros((total, ATOM_FEATURES))
    vec0 = np.zeros((total, nv, 3))
    agg = np.zeros((total, total))
    pool = np.zeros((len(graphs), total))
    offset = 0
    for gi, (graph, conf) in enumerate(zip(graphs, conformers)):
        n = sizes[gi]
        if conf.coordinates.shape != (n, 3):
            raise ConformerMismatch(f"molecule {gi}: conformer/graph size mismatch")
        feats[offset:offset + n] = atom_features(graph)
        vec0[offset:offset + n] = initial_vectors(graph, conf, nv)
        agg[offset:offset + n, offset:offset + n] = _mean_aggregation_matrix(graph)
        pool[gi, offset:offset + n] = 1.0 / n
        offset += n

    scalars = ag.matmul(ag.tensor(feats), ag.transpose(params.feat_proj))
    scalars, _ = _run_layers(scalars, ag.tensor(vec0), agg, params)
    pooled = ag.matmul(ag.tensor(pool), scalars)
    return pooled, project_adapter(pooled, params)
