"""Graph storage, dataset I/O, subgraph induction and adjacency normalization."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

ROLES = ("train", "val", "test")
TASKS = ("multilabel", "singlelabel")


class GraphFormatError(ValueError):
    """Raised when a dataset directory or in-memory graph is malformed."""


def _symmetric_csr(num_nodes: int, edges: np.ndarray) -> sp.csr_matrix:
    """Binary symmetric CSR with self-loops and duplicates removed."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise GraphFormatError(f"edge endpoint out of range [0, {num_nodes})")
    edges = edges[edges[:, 0] != edges[:, 1]]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(num_nodes, num_nodes)
    )
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph with train/val/test roles.

    ``adj`` is a binary symmetric CSR matrix without self-loops. ``roles``
    holds indices into :data:`ROLES`.
    """

    adj: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    roles: np.ndarray
    task: str = "singlelabel"

    def __post_init__(self):
        n = self.adj.shape[0]
        if self.adj.shape != (n, n):
            raise GraphFormatError("adjacency must be square")
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise GraphFormatError("feature/label row count must equal num_nodes")
        if self.roles.shape != (n,):
            raise GraphFormatError("one role per node required")
        if self.task not in TASKS:
            raise GraphFormatError(f"unknown task {self.task!r}")
        if self.task == "singlelabel" and n and not np.all(self.labels.sum(axis=1) == 1):
            raise GraphFormatError("singlelabel rows need exactly one positive label")

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Sequence[int]] | np.ndarray,
        features: np.ndarray,
        labels: np.ndarray,
        roles: Sequence[str] | np.ndarray | None = None,
        task: str = "singlelabel",
    ) -> "Graph":
        edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges)
        if roles is None:
            role_idx = np.zeros(num_nodes, dtype=np.int8)
        else:
            role_idx = np.array(
                [ROLES.index(r) if isinstance(r, str) else int(r) for r in roles],
                dtype=np.int8,
            )
        return cls(
            adj=_symmetric_csr(num_nodes, edges),
            features=np.asarray(features, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.float64),
            roles=role_idx,
            task=task,
        )

    @property
    def num_nodes(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return self.adj.nnz // 2

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adj.indptr)

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as (u, v) rows with u < v."""
        coo = sp.triu(self.adj, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def nodes_with_role(self, role: str) -> np.ndarray:
        return np.flatnonzero(self.roles == ROLES.index(role))

    @cached_property
    def norm_adj(self) -> sp.csr_matrix:
        """Normalized adjacency of the whole graph, used for inference."""
        return normalize_adjacency(self.adj, self.num_nodes)


@dataclass(frozen=True, eq=False)
class Subgraph:
    nodes: np.ndarray
    local_edges: sp.csr_matrix
    norm_adj: sp.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.nodes.size)


def normalize_adjacency(local_edges: sp.spmatrix, k: int) -> sp.csr_matrix:
    """Return D^-1/2 (A + I) D^-1/2 for a binary adjacency without self-loops."""
    if k < 1:
        raise ValueError("k must be >= 1")
    a = sp.csr_matrix(local_edges, shape=(k, k), dtype=np.float64)
    a_tilde = (a + sp.identity(k, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sp.diags(inv_sqrt)
    out = (scale @ a_tilde @ scale).tocsr()
    out.sort_indices()
    return out


def spmm(a: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Sparse times dense product returning a dense array."""
    b = np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return np.asarray(a @ b)


def induce_subgraph(g: Graph, nodes: Sequence[int] | np.ndarray) -> Subgraph:
    """Node-induced subgraph, local index i corresponding to ``nodes[i]``."""
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if nodes.size == 0:
        raise ValueError("empty node list")
    if nodes.min() < 0 or nodes.max() >= g.num_nodes:
        raise ValueError("node id out of range")
    if np.unique(nodes).size != nodes.size:
        raise ValueError("duplicate node id in subgraph node list")
    local = g.adj[nodes][:, nodes].tocsr()
    local.sort_indices()
    return Subgraph(
        nodes=nodes,
        local_edges=local,
        norm_adj=normalize_adjacency(local, nodes.size),
    )


def is_connected(sg: Subgraph) -> bool:
    k = sg.size
    adj = sg.local_edges
    seen = np.zeros(k, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj.indices[adj.indptr[u] : adj.indptr[u + 1]]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen.all())


# -- dataset directory I/O ----------------------------------------------------


def load_graph(dir_path: str | Path) -> Graph:
    """Read a dataset directory (edges.txt, features.csv, labels.csv, roles.csv, meta.json)."""
    root = Path(dir_path)
    for name in ("edges.txt", "features.csv", "labels.csv", "roles.csv"):
        if not (root / name).is_file():
            raise FileNotFoundError(f"missing dataset file: {root / name}")

    try:
        features = np.loadtxt(root / "features.csv", delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise GraphFormatError(f"non-numeric feature in {root / 'features.csv'}: {exc}") from exc
    try:
        labels = np.loadtxt(root / "labels.csv", delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise GraphFormatError(f"bad label file: {exc}") from exc
    if not np.isin(labels, (0.0, 1.0)).all():
        raise GraphFormatError("labels must be 0/1 flags")
    roles = [line.strip() for line in (root / "roles.csv").read_text().splitlines() if line.strip()]
    bad = sorted(set(roles) - set(ROLES))
    if bad:
        raise GraphFormatError(f"unknown roles {bad}")

    task = "singlelabel"
    if (root / "meta.json").is_file():
        task = json.loads((root / "meta.json").read_text()).get("task", task)

    num_nodes = features.shape[0]
    if labels.shape[0] != num_nodes or len(roles) != num_nodes:
        raise GraphFormatError(
            f"row counts disagree: features={num_nodes}, labels={labels.shape[0]}, roles={len(roles)}"
        )

    edges = []
    for lineno, line in enumerate((root / "edges.txt").read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise GraphFormatError(f"edges.txt:{lineno}: expected 'u v'")
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise GraphFormatError(f"edges.txt:{lineno}: node id out of range")
        edges.append((u, v))
    return Graph.from_edges(num_nodes, np.array(edges, dtype=np.int64).reshape(-1, 2),
                            features, labels, roles, task)


def save_graph(g: Graph, dir_path: str | Path) -> Path:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.txt", "w") as fh:
        for u, v in g.edge_list():
            fh.write(f"{u} {v}\n")
    np.savetxt(root / "features.csv", g.features, delimiter=",", fmt="%.17g")
    np.savetxt(root / "labels.csv", g.labels, delimiter=",", fmt="%d")
    (root / "roles.csv").write_text("".join(ROLES[r] + "\n" for r in g.roles))
    (root / "meta.json").write_text(json.dumps({"task": g.task}) + "\n")
    return root
