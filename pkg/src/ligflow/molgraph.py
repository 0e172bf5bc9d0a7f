"""Molecular graphs, rigid motions, permutations and vertex vectors.

A graph keeps positions ``(N, 3)`` and features ``(N, d_h)`` as separate
arrays.  Undirected edges are stored once with ``i < j`` together with an
attribute row each; global properties are a tuple of 1-D vectors.

Permutations follow the list convention: applying ``p`` to a vertex list
gives the list whose ``i``-th entry is the old vertex ``p[i]``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, FormatError


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    positions: np.ndarray
    features: np.ndarray
    edge_index: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    edge_attr: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    globals: tuple = ()

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(len(pos), 0)
        if feats.ndim != 2 or len(feats) != len(pos):
            raise ContractError(
                f"features shape {feats.shape} does not match {len(pos)} positions"
            )
        idx = np.asarray(self.edge_index, dtype=np.int64).reshape(-1, 2)
        attr = np.asarray(self.edge_attr, dtype=np.float64)
        if attr.size == 0:
            attr = np.zeros((len(idx), attr.shape[-1] if attr.ndim == 2 else 0))
        if len(attr) != len(idx):
            raise ContractError("edge_attr must have one row per edge")
        n = len(pos)
        if len(idx):
            if idx.min() < 0 or idx.max() >= n:
                raise ContractError("edge endpoint out of range")
            if np.any(idx[:, 0] >= idx[:, 1]):
                raise ContractError("edges must be stored with i < j (no self loops)")
            if len({(int(i), int(j)) for i, j in idx}) != len(idx):
                raise ContractError("duplicate undirected edge")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edge_index", idx)
        object.__setattr__(self, "edge_attr", attr)
        object.__setattr__(
            self, "globals", tuple(np.asarray(a, dtype=np.float64).reshape(-1) for a in self.globals)
        )

    @property
    def n_atoms(self):
        return len(self.positions)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def edge_dim(self):
        return self.edge_attr.shape[1]

    def neighbours(self):
        """Neighbourhood sets derived from the edge list."""
        eta = [set() for _ in range(self.n_atoms)]
        for i, j in self.edge_index:
            eta[i].add(int(j))
            eta[j].add(int(i))
        return eta

    def with_vertices(self, positions, features):
        return replace(self, positions=positions, features=features)

    def same_as(self, other, atol=0.0):
        """Structural equality; ``atol=0`` means bit-exact."""
        if self.n_atoms != other.n_atoms or len(self.globals) != len(other.globals):
            return False
        if self.edge_index.shape != other.edge_index.shape:
            return False
        close = (lambda a, b: a.shape == b.shape and np.allclose(a, b, rtol=0, atol=atol)) if atol else (
            lambda a, b: a.shape == b.shape and np.array_equal(a, b)
        )
        return (
            close(self.positions, other.positions)
            and close(self.features, other.features)
            and np.array_equal(self.edge_index, other.edge_index)
            # an empty edge list carries no attribute width through serialization
            and (close(self.edge_attr, other.edge_attr) or self.edge_attr.size == other.edge_attr.size == 0)
            and all(close(a, b) for a, b in zip(self.globals, other.globals))
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t`` with ``R`` orthogonal (reflections allowed)."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ContractError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-10):
            raise ContractError("rotation is not orthogonal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @property
    def rotation_only(self):
        return RigidTransform(self.rotation, np.zeros(3))

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def homogeneous(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True, eq=False)
class Permutation:
    mapping: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.mapping, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(p), np.arange(len(p))):
            raise ContractError("mapping is not a bijection on 0..N-1")
        object.__setattr__(self, "mapping", p)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    def __len__(self):
        return len(self.mapping)

    def inverse(self):
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(len(self.mapping))
        return Permutation(inv)

    def compose(self, other):
        """Permutation equal to applying ``other`` then ``self`` to a list."""
        return Permutation(other.mapping[self.mapping])

    def matrix(self):
        m = np.zeros((len(self), len(self)))
        m[np.arange(len(self)), self.mapping] = 1.0
        return m


def apply_rigid(graph, transform):
    return replace(graph, positions=transform.apply(graph.positions))


def apply_permutation(graph, perm):
    if len(perm) != graph.n_atoms:
        raise ContractError(f"permutation of size {len(perm)} applied to {graph.n_atoms} atoms")
    p = perm.mapping
    inv = perm.inverse().mapping
    idx = inv[graph.edge_index] if len(graph.edge_index) else graph.edge_index
    idx = np.sort(idx, axis=1) if len(idx) else idx
    return replace(
        graph,
        positions=graph.positions[p],
        features=graph.features[p],
        edge_index=idx,
    )


def vectorize(positions, features):
    """``concat(x_1..x_N, h_1..h_N)`` for a vertex list given as two arrays."""
    positions = np.asarray(positions, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    return np.concatenate([positions.reshape(-1), features.reshape(-1)])


def devectorize(vector, feature_dim):
    """Inverse of :func:`vectorize`; works on NumPy and JAX arrays alike."""
    size = vector.shape[-1]
    width = 3 + feature_dim
    if size % width:
        raise FormatError(f"vector length {size} is not a multiple of 3 + d_h = {width}")
    n = size // width
    positions = vector[..., : 3 * n].reshape(vector.shape[:-1] + (n, 3))
    features = vector[..., 3 * n :].reshape(vector.shape[:-1] + (n, feature_dim))
    return positions, features


def rotate_vector(vector, rotation, feature_dim):
    x, h = devectorize(np.asarray(vector), feature_dim)
    return vectorize(x @ np.asarray(rotation).T, h)


def permute_vector(vector, perm, feature_dim):
    x, h = devectorize(np.asarray(vector), feature_dim)
    return vectorize(x[perm.mapping], h[perm.mapping])


def sample_random_rigid(rng, translation_scale=5.0):
    """Haar-random element of O(3) (QR with sign fix) plus Gaussian translation."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    return RigidTransform(q, rng.normal(0.0, translation_scale, size=3))


def sample_random_permutation(rng, n):
    return Permutation(rng.permutation(n))


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
