import numpy as np
import pytest
from hypothesis import given, strategies as st

from ligflow.dequant import (LIGAND_SCHEMA, NOISE_SCALE, RECEPTOR_SCHEMA, FeatureBlock, FeatureSchema, dequantize,
                             quantize, validate)
from ligflow.errors import ContractError, SchemaError

ELEMENTS = ("C", "N", "O", "F")


def test_schema_layout():
    assert LIGAND_SCHEMA.width == 5
    assert RECEPTOR_SCHEMA.width == 5
    assert LIGAND_SCHEMA.offsets() == [0, 4]
    row = LIGAND_SCHEMA.encode(element="O", charge=-1)
    np.testing.assert_array_equal(row, [0, 0, 1, 0, -1])
    assert LIGAND_SCHEMA.decode(row) == {"element": "O", "charge": -1}


def test_schema_dict_round_trip():
    assert FeatureSchema.from_dict(LIGAND_SCHEMA.to_dict()) == LIGAND_SCHEMA


def test_block_contracts():
    with pytest.raises(ContractError):
        FeatureBlock("x", "binary")
    with pytest.raises(ContractError):
        FeatureBlock("x", "ordinal", width=2)
    with pytest.raises(ContractError):
        FeatureBlock("x", "categorical", 3, ("a", "b"))


def test_validate_rejects_bad_rows():
    with pytest.raises(SchemaError):
        validate(np.array([[1.0, 1.0, 0.0, 0.0, 0.0]]), LIGAND_SCHEMA)
    with pytest.raises(SchemaError):
        validate(np.array([[1.0, 0.0, 0.0, 0.0, 2.0]]), LIGAND_SCHEMA)
    with pytest.raises(SchemaError):
        validate(np.array([[1.0, 0.0, 0.0, 0.0, 0.5]]), LIGAND_SCHEMA)
    with pytest.raises(SchemaError):
        validate(np.zeros((1, 4)), LIGAND_SCHEMA)


rows = st.lists(st.tuples(st.sampled_from(ELEMENTS), st.integers(-1, 1)), min_size=1, max_size=12)


@given(rows, st.integers(0, 2**32 - 1))
def test_dequantize_then_quantize_is_identity(atoms, seed):
    h = np.stack([LIGAND_SCHEMA.encode(element=e, charge=c) for e, c in atoms])
    noisy = dequantize(h, LIGAND_SCHEMA, np.random.default_rng(seed))
    assert np.all(np.abs(noisy - h) <= NOISE_SCALE / 2)
    np.testing.assert_array_equal(quantize(noisy, LIGAND_SCHEMA), h)


def test_dequantize_noise_is_centred_uniform():
    h = np.tile(LIGAND_SCHEMA.encode(element="C", charge=0), (20_000, 1))
    noise = dequantize(h, LIGAND_SCHEMA, np.random.default_rng(0)) - h
    np.testing.assert_allclose(noise.mean(axis=0), 0.0, atol=0.01)
    np.testing.assert_allclose(noise.var(axis=0), NOISE_SCALE**2 / 12, rtol=0.03)


def test_quantize_clamps_and_breaks_ties_low():
    out = quantize(np.array([[0.5, 0.5, 0.1, 0.1, 3.7], [0.0, 0.0, 0.0, 0.2, -0.2]]), LIGAND_SCHEMA)
    np.testing.assert_array_equal(out, [[1, 0, 0, 0, 1], [0, 0, 0, 1, 0]])
    assert not np.signbit(out[1, 4])


def test_continuous_blocks_pass_through():
    schema = FeatureSchema((FeatureBlock("e", "categorical", 2), FeatureBlock("q", "continuous", 1)))
    h = np.array([[1.0, 0.0, 0.123]])
    noisy = dequantize(h, schema, np.random.default_rng(3))
    assert noisy[0, 2] == 0.123
    np.testing.assert_array_equal(quantize(noisy, schema), h)
