"""Aggregation Server: per-node embedding averaging and periodic weight averaging."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .federation import HostView
from .gcn import ModelParams


class LatePushError(RuntimeError):
    """A push tagged with an iteration other than the table's current one."""


class EmbeddingTable:
    """Proprietor-averaged node embeddings.

    Each host's pushes are kept in its own slot (a running sum and an
    occurrence count per node), so the node average

        x_tilde[v] = sum_h sums[h, v] / sum_h counts[h, v]

    is reduced in host order and does not depend on which worker thread
    pushed first. ``persistent=True`` keeps entries across iterations: a
    host's new push for a node replaces its own earlier one. Otherwise
    ``begin_epoch`` clears the table.
    """

    def __init__(self, n_hosts: int, num_nodes: int, dim: int, persistent: bool = False):
        self.n_hosts = n_hosts
        self.num_nodes = num_nodes
        self.dim = dim
        self.persistent = persistent
        self.epoch = 0
        self._sums = np.zeros((n_hosts, num_nodes, dim))
        self._counts = np.zeros((n_hosts, num_nodes), dtype=np.int64)
        self._lock = threading.Lock()

    def begin_epoch(self, t: int) -> None:
        with self._lock:
            self.epoch = t
            if not self.persistent:
                self._sums[:] = 0.0
                self._counts[:] = 0

    @property
    def sums(self) -> np.ndarray:
        return self._sums.sum(axis=0)

    @property
    def counts(self) -> np.ndarray:
        return self._counts.sum(axis=0)

    def push(self, host_id: int, sg_nodes, embeddings, visibility, epoch: int | None = None) -> None:
        sg_nodes = np.asarray(sg_nodes, dtype=np.int64)
        embeddings = np.asarray(embeddings, dtype=np.float64)
        visibility = np.asarray(visibility, dtype=bool)
        if embeddings.shape != (sg_nodes.size, self.dim):
            raise ValueError(f"expected embeddings of shape {(sg_nodes.size, self.dim)}, got {embeddings.shape}")
        if visibility.shape != sg_nodes.shape:
            raise ValueError("visibility must have one flag per pushed node")
        nodes = sg_nodes[visibility]
        rows = embeddings[visibility]
        with self._lock:
            if epoch is not None and epoch != self.epoch:
                raise LatePushError(f"push for iteration {epoch} while table is at {self.epoch}")
            if self.persistent:
                self._sums[host_id, nodes] = 0.0
                self._counts[host_id, nodes] = 0
            # np.add.at accumulates repeated ids once per occurrence
            np.add.at(self._sums[host_id], nodes, rows)
            np.add.at(self._counts[host_id], nodes, 1)

    def pull(self, sg_nodes) -> np.ndarray:
        sg_nodes = np.asarray(sg_nodes, dtype=np.int64)
        with self._lock:
            s = self._sums[:, sg_nodes].sum(axis=0)
            c = self._counts[:, sg_nodes].sum(axis=0)
        out = np.zeros_like(s)
        hit = c > 0
        out[hit] = s[hit] / c[hit, None]
        return out

    def own_weights(self, host_id: int, sg_nodes) -> np.ndarray:
        """Weight of the host's own push in each pulled row (0 if it pushed nothing)."""
        sg_nodes = np.asarray(sg_nodes, dtype=np.int64)
        with self._lock:
            own = self._counts[host_id, sg_nodes].astype(np.float64)
            c = self._counts[:, sg_nodes].sum(axis=0)
        return np.divide(own, c, out=np.zeros_like(own), where=c > 0)

    def dump_csv(self, path: str | Path) -> None:
        """Debug dump: node_id, count, embedding values for every touched node."""
        sums, counts = self.sums, self.counts
        with open(path, "w") as fh:
            for v in np.flatnonzero(counts):
                vals = ",".join(repr(float(a)) for a in sums[v] / counts[v])
                fh.write(f"{v},{counts[v]},{vals}\n")


def push_embeddings(table: EmbeddingTable, host_view: HostView, sg_nodes, embeddings, visibility=None, epoch=None):
    if visibility is None:
        visibility = host_view.visible[np.asarray(sg_nodes)]
    table.push(host_view.host_id, sg_nodes, embeddings, visibility, epoch)


def pull_embeddings(table: EmbeddingTable, sg_nodes) -> np.ndarray:
    return table.pull(sg_nodes)


BLANK = -1


@dataclass(frozen=True, eq=False)
class ThetaSet:
    """Explicit averaging operators, one (k_n x K) matrix per host.

    ``offsets[n]`` is the column where host n's own rows start in the
    stacked embedding matrix.
    """

    matrices: tuple[np.ndarray, ...]
    offsets: tuple[int, ...]
    occurrences: np.ndarray

    def __getitem__(self, n: int) -> np.ndarray:
        return self.matrices[n]

    def own_block(self, n: int) -> np.ndarray:
        k = self.matrices[n].shape[0]
        return self.matrices[n][:, self.offsets[n] : self.offsets[n] + k]


def build_theta(all_sg_nodes, views) -> ThetaSet:
    """Materialize theta[i, j] = 1 / count(v_i) where occurrence j is v_i seen by its pusher.

    Occurrences of nodes invisible to their pusher are blanks and match
    nothing, so a node no proprietor sampled gets an all-zero row.
    """
    if len(all_sg_nodes) != len(views):
        raise ValueError("one node list per host required")
    occ = []
    offsets = []
    for nodes, view in zip(all_sg_nodes, views):
        nodes = np.asarray(nodes, dtype=np.int64)
        offsets.append(len(occ))
        occ.extend(np.where(view.visible[nodes], nodes, BLANK).tolist())
    occ = np.array(occ, dtype=np.int64)
    mats = []
    for nodes in all_sg_nodes:
        nodes = np.asarray(nodes, dtype=np.int64)
        match = nodes[:, None] == occ[None, :]
        cnt = match.sum(axis=1, keepdims=True)
        mats.append(np.divide(match, cnt, out=np.zeros(match.shape), where=cnt > 0))
    return ThetaSet(tuple(mats), tuple(offsets), occ)


@dataclass
class WeightBuffer:
    n_hosts: int
    q: int = 1
    pushes: list = field(default_factory=list)
    counter: int = 0

    def push(self, params: ModelParams) -> None:
        self.pushes.append(params)

    def tick(self) -> bool:
        """Close one iteration; True when the weights are due for averaging."""
        self.counter += 1
        return self.counter % self.q == 0

    def clear(self) -> None:
        self.pushes.clear()


def average_weights(buffer: WeightBuffer | list) -> ModelParams:
    """Element-wise mean of every pushed weight matrix (uniform 1/N weights)."""
    pushes = buffer.pushes if isinstance(buffer, WeightBuffer) else list(buffer)
    if isinstance(buffer, WeightBuffer) and len(pushes) != buffer.n_hosts:
        raise ValueError(f"expected {buffer.n_hosts} weight pushes, got {len(pushes)}")
    if not pushes:
        raise ValueError("no weights to average")
    n = len(pushes)
    mats = [sum(p.matrices()[i] for p in pushes) / n for i in range(len(pushes[0].matrices()))]
    return ModelParams(mats[0], mats[1], mats[2] if len(mats) == 3 else None)
