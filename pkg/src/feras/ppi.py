"""Convert a GraphSAINT-format dataset release (e.g. PPI) into the feras dataset layout.

Expected inputs in the source directory: ``adj_full.npz`` (scipy CSR), ``feats.npy``,
``class_map.json`` (node id -> label list or class index) and ``role.json``
(``{"tr": [...], "va": [...], "te": [...]}``).

Usage::

    python -m feras.ppi SRC_DIR OUT_DIR
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, save_graph

_ROLE_KEYS = {"tr": "train", "va": "val", "te": "test"}


def _labels(class_map: dict, n: int) -> tuple[np.ndarray, str]:
    first = next(iter(class_map.values()))
    if isinstance(first, list):
        y = np.zeros((n, len(first)))
        for k, v in class_map.items():
            y[int(k)] = v
        return y, "multilabel"
    n_classes = max(int(v) for v in class_map.values()) + 1
    y = np.zeros((n, n_classes))
    for k, v in class_map.items():
        y[int(k), int(v)] = 1.0
    return y, "singlelabel"


def convert(src: str | Path, out: str | Path) -> Graph:
    src = Path(src)
    adj = sp.load_npz(src / "adj_full.npz").tocsr()
    feats = np.load(src / "feats.npy").astype(float)
    n = adj.shape[0]
    labels, task = _labels(json.loads((src / "class_map.json").read_text()), n)
    role_map = json.loads((src / "role.json").read_text())
    roles = np.full(n, "test", dtype=object)
    for key, role in _ROLE_KEYS.items():
        roles[np.asarray(role_map.get(key, []), dtype=int)] = role
    edges = np.column_stack(sp.triu(adj + adj.T, k=1).nonzero())
    g = Graph.from_edges(n, edges, feats, labels, list(roles), task)
    save_graph(g, out)
    return g


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m feras.ppi", description=__doc__.splitlines()[0])
    parser.add_argument("src")
    parser.add_argument("out")
    args = parser.parse_args(argv)
    g = convert(args.src, args.out)
    print(f"{g.num_nodes} nodes, {g.num_edges} edges, {g.num_classes} classes -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
