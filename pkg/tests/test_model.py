import jax
import numpy as np
import pytest

from ligflow.errors import ContractError, DataError
from ligflow.flow import SolverConfig
from ligflow.io import GraphRecord, synthetic_dataset
from ligflow.model import (LigandModel, ModelConfig, flatten_params, number_log_probs, pair_tables, sample_graph,
                           score, unflatten_params)
from ligflow.molgraph import apply_permutation, apply_rigid, sample_random_permutation, sample_random_rigid

CFG = SolverConfig(steps=10)


@pytest.fixture(scope="module")
def model():
    return LigandModel.init(jax.random.PRNGKey(8), ModelConfig.default(hidden=16, signature=8, layers=2),
                            zero_init=False)


@pytest.fixture(scope="module")
def record():
    return synthetic_dataset(1, seed=11)[0]


def test_config_round_trip():
    cfg = ModelConfig.default(hidden=16, signature=8, layers=2, n_max=12)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_pair_tables(record):
    labels, attr, mask = pair_tables(record.ligand, 4)
    n = record.ligand.n_atoms
    iu, ju = np.triu_indices(n, k=1)
    assert labels.shape == mask.shape == (n * (n - 1) // 2,) and attr.shape == (len(iu), 3)
    assert int(mask.sum()) == len(record.ligand.edge_index)
    for (i, j), e in zip(record.ligand.edge_index, record.ligand.edge_attr):
        k = np.flatnonzero((iu == i) & (ju == j))[0]
        assert labels[k] == int(np.argmax(e)) and mask[k] == 1.0
        np.testing.assert_array_equal(attr[k], e)
    assert np.sum(labels == 3) == len(iu) - len(record.ligand.edge_index)


def test_score_is_deterministic(model, record):
    assert score(model, record, CFG) == score(model, record, CFG)


def test_score_factors_sum_to_total(model, record):
    out = score(model, record, CFG)
    assert out["total"] == pytest.approx(sum(out[k] for k in ("vertex", "number", "edge", "property")))
    assert all(np.isfinite(v) for v in out.values())
    assert out["number"] < 0 and out["property"] < 0


def test_score_invariant_under_rigid_motion_and_permutation(model, record, rng):
    base = score(model, record, CFG)["total"]
    T = sample_random_rigid(rng)
    moved = GraphRecord(record.id, apply_rigid(record.ligand, T), apply_rigid(record.receptor, T))
    assert abs(score(model, moved, CFG)["total"] - base) <= 1e-4
    pi = sample_random_permutation(rng, record.ligand.n_atoms)
    pi_hat = sample_random_permutation(rng, record.receptor.n_atoms)
    shuffled = GraphRecord(record.id, apply_permutation(record.ligand, pi), apply_permutation(record.receptor, pi_hat))
    assert abs(score(model, shuffled, CFG)["total"] - base) <= 1e-6


def test_score_rejects_oversized_ligand(record):
    m = LigandModel.init(jax.random.PRNGKey(0), ModelConfig.default(hidden=8, signature=4, layers=1, n_max=3))
    with pytest.raises(ContractError):
        score(m, record, CFG)


@pytest.mark.parametrize("edges", ["model", "table", "none"])
def test_sample_graph_is_valid_and_reproducible(model, record, edges):
    a = sample_graph(model, record.receptor, np.random.default_rng(4), CFG, edges=edges)
    b = sample_graph(model, record.receptor, np.random.default_rng(4), CFG, edges=edges)
    assert a.same_as(b)
    assert 1 <= a.n_atoms <= 30
    assert np.all(a.features[:, :4].sum(axis=1) == 1) and set(np.unique(a.features[:, :4])) <= {0.0, 1.0}
    assert set(np.unique(a.features[:, 4])) <= {-1.0, 0.0, 1.0}
    assert [len(g) for g in a.globals] == [2, 3]
    if edges == "none":
        assert len(a.edge_index) == 0
    assert np.all(a.edge_index[:, 0] < a.edge_index[:, 1])


def test_sample_graph_rejects_unknown_edge_mode(model, record):
    with pytest.raises(ContractError):
        sample_graph(model, record.receptor, np.random.default_rng(0), CFG, edges="magic")


def test_param_round_trip_and_errors(model):
    tensors = flatten_params(model.params)
    back = unflatten_params(model.params, tensors)
    for a, b in zip(jax.tree_util.tree_leaves(model.params), jax.tree_util.tree_leaves(back)):
        np.testing.assert_array_equal(a, b)
    name = next(iter(tensors))
    with pytest.raises(DataError, match="missing"):
        unflatten_params(model.params, {k: v for k, v in tensors.items() if k != name})
    with pytest.raises(DataError, match="shape"):
        unflatten_params(model.params, tensors | {name: np.zeros((7, 7, 7))})
