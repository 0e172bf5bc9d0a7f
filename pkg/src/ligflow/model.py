"""The full conditional ligand model: number, vertex, edge and property factors."""

from dataclasses import asdict, dataclass, field
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import egnn, flow, heads
from .dequant import LIGAND_SCHEMA, RECEPTOR_SCHEMA, FeatureSchema, quantize
from .errors import ContractError, DataError
from .io import elements_of
from .molgraph import MolecularGraph, vectorize


@dataclass(frozen=True)
class ModelConfig:
    egnn: egnn.EGNNConfig
    n_max: int = heads.N_MAX
    property_sizes: tuple = (2, 3)
    edge_layers: int = 2
    ligand_schema: dict = field(default_factory=LIGAND_SCHEMA.to_dict, hash=False, compare=False)
    receptor_schema: dict = field(default_factory=RECEPTOR_SCHEMA.to_dict, hash=False, compare=False)

    def __hash__(self):
        return hash((self.egnn, self.n_max, self.property_sizes, self.edge_layers))

    @classmethod
    def default(cls, hidden=64, signature=32, layers=3, **kw):
        cfg = egnn.EGNNConfig(
            ligand_features=LIGAND_SCHEMA.width,
            receptor_features=RECEPTOR_SCHEMA.width,
            hidden=hidden,
            signature=signature,
            receptor_layers=layers,
            ligand_layers=layers,
        )
        return cls(cfg, **kw)

    def to_dict(self):
        out = asdict(self)
        out["property_sizes"] = list(self.property_sizes)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["egnn"] = egnn.EGNNConfig(**data["egnn"])
        data["property_sizes"] = tuple(data["property_sizes"])
        return cls(**data)

    @property
    def schema(self):
        return FeatureSchema.from_dict(self.ligand_schema)


@jax.tree_util.register_pytree_node_class
class LigandModel:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, key, config, zero_init=True):
        kf, kn, ke, kp = jax.random.split(key, 4)
        params = {
            "flow": flow.FlowModel.init(kf, config.egnn, zero_init=zero_init).params,
            "number": heads.init_number_head(kn, config.egnn, n_max=config.n_max),
            "edge": heads.init_edge_head(ke, config.egnn, layers=config.edge_layers),
            "property": heads.init_property_head(kp, config.egnn, config.property_sizes),
        }
        return cls(config, params)

    def tree_flatten(self):
        return (self.params,), self.config

    @classmethod
    def tree_unflatten(cls, config, children):
        return cls(config, children[0])

    @property
    def flow(self):
        return flow.FlowModel(self.config.egnn, self.params["flow"])

    def receptor_features(self, rec):
        feats, _ = egnn.receptor_forward(self.params["flow"]["receptor"], self.config.egnn, rec.positions,
                                         rec.features, rec.adjacency, rec.edge_features, rec.globals)
        return feats

    def prepare(self, receptor):
        return flow.prepare_receptor(receptor, self.config.egnn)


# ------------------------------------------------------------ examples


class Example(NamedTuple):
    """Dense, vmappable view of one training record."""

    rec: flow.ReceptorInput
    v: jnp.ndarray          # dequantized vertex vector
    positions: jnp.ndarray  # (N, 3)
    features: jnp.ndarray   # (N, d_h), discrete
    pair_labels: jnp.ndarray  # (P,) class per i<j pair, null class for non-bonded
    pair_attr: jnp.ndarray    # (P, d_e)
    pair_mask: jnp.ndarray    # (P,)
    properties: tuple         # one-hot per property


def pair_tables(graph, n_classes):
    labels = heads.edge_labels(graph.n_atoms, graph.edge_index, graph.edge_attr, n_classes)
    iu, ju = np.triu_indices(graph.n_atoms, k=1)
    attr = np.zeros((len(iu), n_classes - 1))
    mask = np.zeros(len(iu))
    lookup = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(iu, ju))}
    for (i, j), e in zip(graph.edge_index, graph.edge_attr):
        k = lookup[(int(i), int(j))]
        attr[k] = e
        mask[k] = 1.0
    return labels[iu, ju], attr, mask


def make_example(model, record, dequantized_features):
    lig = record.ligand
    n_classes = len(heads.BOND_TYPES) + 1
    if lig.edge_dim not in (0, n_classes - 1):
        raise DataError(f"record {record.id}: ligand edge attributes must have width {n_classes - 1}")
    if len(lig.globals) != len(model.config.property_sizes):
        raise DataError(f"record {record.id}: expected {len(model.config.property_sizes)} global properties")
    labels, attr, mask = pair_tables(lig, n_classes)
    return Example(
        model.prepare(record.receptor),
        jnp.asarray(vectorize(lig.positions, dequantized_features)),
        jnp.asarray(lig.positions),
        jnp.asarray(lig.features),
        jnp.asarray(labels),
        jnp.asarray(attr),
        jnp.asarray(mask),
        tuple(jnp.asarray(a) for a in lig.globals),
    )


def stack_examples(examples):
    return jax.tree_util.tree_map(lambda *xs: jnp.stack(xs), *examples)


# ------------------------------------------------------------ losses


def _masked_property_nll(params, node_features, ex):
    width = params["W"][0].shape[0]
    xi_h = jnp.mean(heads.mlp(params["node"], node_features), axis=0)
    count = jnp.sum(ex.pair_mask)
    xi_e = jnp.sum(ex.pair_mask[:, None] * heads.mlp(params["edge"], ex.pair_attr), axis=0) / jnp.maximum(count, 1.0)
    total = 0.0
    acc = jnp.zeros(width)
    for k, a in enumerate(ex.properties):
        logp = heads.mlp(params["out"][k], jnp.concatenate([xi_h, xi_e, heads.mlp(params["prev"], acc)]),
                         head="log_softmax")
        total = total - jnp.dot(a, logp)
        acc = acc + params["W"][k] @ a
    return total


def example_losses(model, ex, steps, eps):
    """Per-record negative log-likelihood of each factor."""
    cfg = model.config.egnn
    feats = model.receptor_features(ex.rec)
    n = ex.positions.shape[0]
    number = -heads.number_log_probs(model.params["number"], feats[-1])[n - 1]
    vertex = flow._single_nll(model.flow, ex.rec, ex.v, steps, eps)
    summary = egnn.receptor_summary(feats)
    if n >= 2:
        h_tilde, m = heads.edge_embedding(model.params["edge"], cfg, ex.positions, ex.features, summary)
        table = heads.mlp(model.params["edge"]["out"], m + jnp.swapaxes(m, 0, 1), head="log_softmax")
        iu, ju = np.triu_indices(n, k=1)
        edge = -jnp.sum(table[iu, ju][jnp.arange(len(iu)), ex.pair_labels])
    else:
        sigs = egnn.signatures(model.params["edge"]["signature"], summary, 1.0)
        _, h_tilde = egnn.ligand_forward(model.params["edge"]["egnn"], cfg, ex.positions, ex.features, sigs)
        edge = jnp.float64(0.0)
    prop = _masked_property_nll(model.params["property"], h_tilde, ex)
    return {"vertex": vertex, "number": number, "edge": edge, "property": prop}


def batch_loss(model, batch, steps, eps):
    """Sum of the four factor NLLs averaged over a stacked batch."""
    if eps is None:
        per = jax.vmap(lambda ex: example_losses(model, ex, steps, None))(batch)
    else:
        per = jax.vmap(lambda ex, e: example_losses(model, ex, steps, e))(batch, eps)
    parts = {k: jnp.mean(v) for k, v in per.items()}
    return sum(parts.values()), parts


batch_loss_and_grad = jax.jit(jax.value_and_grad(batch_loss, has_aux=True), static_argnames=("steps",))
batch_loss_eval = jax.jit(batch_loss, static_argnames=("steps",))


# ------------------------------------------------------------ inference


@jax.jit
def _number_log_probs(model, rec):
    return heads.number_log_probs(model.params["number"], model.receptor_features(rec)[-1])


@jax.jit
def _edge_table(model, rec, positions, features):
    summary = egnn.receptor_summary(model.receptor_features(rec))
    return heads.edge_log_probs(model.params["edge"], model.config.egnn, positions, features, summary)


@jax.jit
def _edge_node_features(model, rec, positions, features):
    summary = egnn.receptor_summary(model.receptor_features(rec))
    sigs = egnn.signatures(model.params["edge"]["signature"], summary, 1.0)
    return egnn.ligand_forward(model.params["edge"]["egnn"], model.config.egnn, positions, features, sigs)[1]


@partial(jax.jit, static_argnames=("k",))
def _property_log_probs(model, node_features, edge_attr, previous, k):
    return heads.property_log_probs(model.params["property"], node_features, edge_attr, previous, k)


def number_log_probs(model, receptor):
    return np.asarray(_number_log_probs(model, model.prepare(receptor)))


def edge_log_probs(model, receptor, positions, features):
    return np.asarray(_edge_table(model, model.prepare(receptor), jnp.asarray(positions), jnp.asarray(features)))


def property_log_probs(model, receptor, positions, features, edge_attr, previous, k):
    node = _edge_node_features(model, model.prepare(receptor), jnp.asarray(positions), jnp.asarray(features))
    prev = tuple(jnp.asarray(a, dtype=jnp.float64) for a in previous[:k])
    attr = jnp.asarray(np.asarray(edge_attr, dtype=np.float64).reshape(-1, len(heads.BOND_TYPES)))
    return np.asarray(_property_log_probs(model, node, attr, prev, k))


def score(model, record, cfg=flow.SolverConfig()):
    """Exact-trace log-likelihood of each factor for one record.

    Discrete features are scored at the centre of their dequantization
    cell, i.e. as given.
    """
    lig = record.ligand
    n = lig.n_atoms
    if not 1 <= n <= model.config.n_max:
        raise ContractError(f"ligand size {n} outside 1..{model.config.n_max}")
    out = {"number": float(number_log_probs(model, record.receptor)[n - 1])}
    out["vertex"] = flow.log_density(model.flow, model.prepare(record.receptor), lig.positions, lig.features, cfg)
    n_classes = len(heads.BOND_TYPES) + 1
    if n >= 2:
        table = edge_log_probs(model, record.receptor, lig.positions, lig.features)
        labels = heads.edge_labels(n, lig.edge_index, lig.edge_attr, n_classes)
        out["edge"] = float(np.sum(heads.edge_pair_terms(table, labels)))
    else:
        out["edge"] = 0.0
    prop = 0.0
    for k, a in enumerate(lig.globals):
        logp = property_log_probs(model, record.receptor, lig.positions, lig.features, lig.edge_attr, lig.globals, k)
        prop += float(np.dot(a, logp))
    out["property"] = prop
    out["total"] = sum(out.values())
    return out


def sample_graph(model, receptor, rng, cfg=flow.SolverConfig(), edges="model", bond_table=None):
    """Sample one ligand graph: atom count, vertices, edges and properties.

    ``edges`` selects the learned edge head (``"model"``), the distance
    table baseline (``"table"``) or no edges (``"none"``).
    """
    rec = model.prepare(receptor)
    probs = np.exp(np.asarray(_number_log_probs(model, rec)))
    n = int(rng.choice(len(probs), p=probs / probs.sum())) + 1
    positions, cont = flow.sample(model.flow, rec, n, rng, cfg)
    positions = np.asarray(positions)
    schema = model.config.schema
    features = quantize(np.asarray(cont), schema)
    n_classes = len(heads.BOND_TYPES) + 1
    edge_index = np.zeros((0, 2), dtype=np.int64)
    edge_attr = np.zeros((0, n_classes - 1))
    if edges == "model" and n >= 2:
        table = np.exp(np.asarray(_edge_table(model, rec, jnp.asarray(positions), jnp.asarray(features))))
        idx, attr = [], []
        for i in range(n):
            for j in range(i + 1, n):
                p = table[i, j] / table[i, j].sum()
                c = int(rng.choice(n_classes, p=p))
                if c < n_classes - 1:
                    idx.append((i, j))
                    attr.append(np.eye(n_classes - 1)[c])
        edge_index = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
        edge_attr = np.asarray(attr).reshape(-1, n_classes - 1)
    elif edges == "table":
        edge_index, edge_attr = heads.infer_bonds(positions, elements_of(features, schema), bond_table)
    elif edges not in ("model", "none"):
        raise ContractError(f"unknown edge mode {edges!r}")
    node = _edge_node_features(model, rec, jnp.asarray(positions), jnp.asarray(features))
    props = []
    attr_j = jnp.asarray(edge_attr)
    for k, size in enumerate(model.config.property_sizes):
        logp = np.asarray(_property_log_probs(model, node, attr_j, tuple(jnp.asarray(a) for a in props), k))
        p = np.exp(logp)
        props.append(np.eye(size)[int(rng.choice(size, p=p / p.sum()))])
    return MolecularGraph(positions, features, edge_index, edge_attr, tuple(props))


# ------------------------------------------------------------ persistence


def flatten_params(tree):
    flat, _ = jax.tree_util.tree_flatten_with_path(tree)
    return {jax.tree_util.keystr(path): np.asarray(leaf) for path, leaf in flat}


def unflatten_params(template, tensors, prefix=""):
    flat, treedef = jax.tree_util.tree_flatten_with_path(template)
    leaves = []
    for path, leaf in flat:
        name = prefix + jax.tree_util.keystr(path)
        if name not in tensors:
            raise DataError(f"checkpoint is missing tensor {name}")
        value = tensors[name]
        if value.shape != np.shape(leaf):
            raise DataError(f"tensor {name} has shape {value.shape}, expected {np.shape(leaf)}")
        leaves.append(jnp.asarray(value))
    return jax.tree_util.tree_unflatten(treedef, leaves)
