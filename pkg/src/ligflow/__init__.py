"""Receptor-conditioned generation of 3D ligand graphs with an E(3)-invariant continuous flow."""

from .dequant import LIGAND_SCHEMA, RECEPTOR_SCHEMA, FeatureSchema, dequantize, quantize
from .egnn import EGNNConfig
from .errors import (ContractError, DataError, DimensionError, FormatError, LigflowError, NumericError,
                     SchemaError)
from .flow import (AffineComplexMap, FlowModel, SolverConfig, build_affine_map, integrate, log_density,
                   nll_loss, sample)
from .io import GraphRecord, load_dataset, parse_xyz, save_dataset, synthetic_dataset, write_xyz
from .model import LigandModel, ModelConfig
from .molgraph import MolecularGraph, Permutation, RigidTransform, apply_permutation, apply_rigid

__version__ = "0.1.0"
