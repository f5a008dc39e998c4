"""Stochastic block model datasets in the on-disk graph format."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import ROLES, Graph, save_graph

ROLE_SPLIT = (0.66, 0.10, 0.24)


@dataclass(frozen=True)
class SyntheticSpec:
    blocks: int = 4
    nodes_per_block: int = 125
    p_in: float = 0.1
    p_out: float = 0.005
    feature_dim: int = 8
    noise: float = 1.0
    seed: int = 0
    kind: str = "sbm"

    def __post_init__(self):
        if self.kind != "sbm":
            raise ValueError(f"unsupported synthetic kind {self.kind!r}")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if self.blocks < 1 or self.nodes_per_block < 1:
            raise ValueError("blocks and nodes_per_block must be >= 1")
        if self.feature_dim < self.blocks:
            raise ValueError("feature_dim must be >= blocks to hold the block signal")

    def to_dict(self) -> dict:
        return asdict(self)


def sbm_edges(sizes, p_in: float, p_out: float, rng: np.random.Generator) -> np.ndarray:
    """Undirected SBM edge list (u < v) with block-diagonal density p_in."""
    starts = np.concatenate([[0], np.cumsum(sizes)])
    chunks = []
    for a in range(len(sizes)):
        for b in range(a, len(sizes)):
            p = p_in if a == b else p_out
            draw = rng.random((sizes[a], sizes[b])) < p
            if a == b:
                draw = np.triu(draw, k=1)
            u, v = np.nonzero(draw)
            chunks.append(np.stack([u + starts[a], v + starts[b]], axis=1))
    return np.concatenate(chunks).astype(np.int64) if chunks else np.zeros((0, 2), np.int64)


def make_sbm(spec: SyntheticSpec) -> Graph:
    rng = np.random.default_rng(spec.seed)
    n = spec.blocks * spec.nodes_per_block
    block = np.repeat(np.arange(spec.blocks), spec.nodes_per_block)
    edges = sbm_edges([spec.nodes_per_block] * spec.blocks, spec.p_in, spec.p_out, rng)
    features = spec.noise * rng.standard_normal((n, spec.feature_dim))
    features[np.arange(n), block] += 1.0
    labels = np.zeros((n, spec.blocks))
    labels[np.arange(n), block] = 1.0
    perm = rng.permutation(n)
    cut1 = int(round(ROLE_SPLIT[0] * n))
    cut2 = int(round((ROLE_SPLIT[0] + ROLE_SPLIT[1]) * n))
    roles = np.empty(n, dtype=np.int8)
    roles[perm[:cut1]] = ROLES.index("train")
    roles[perm[cut1:cut2]] = ROLES.index("val")
    roles[perm[cut2:]] = ROLES.index("test")
    return Graph.from_edges(n, edges, features, labels, roles, task="singlelabel")


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write an SBM dataset directory and return its path."""
    return save_graph(make_sbm(spec), out_dir)
