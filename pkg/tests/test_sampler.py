import numpy as np
import pytest

from feras.graph import Graph
from feras.sampler import SamplerConfig, SubgraphSampler, host_rngs, sample

from conftest import random_graph


def _oracle_sample(adj, cfg, rng):
    """Straightforward python re-implementation of each mechanism over local ids."""
    n = adj.shape[0]
    nbrs = [list(np.flatnonzero(adj[u])) for u in range(n)]
    deg = np.array([len(a) for a in nbrs])
    if cfg.kind == "node":
        p = (deg + 1) / (deg + 1).sum()
        return set(rng.choice(n, size=cfg.node_budget, p=p).tolist())
    if cfg.kind == "edge":
        edges = [(u, v) for u in range(n) for v in nbrs[u] if u < v]
        w = np.array([1 / deg[u] + 1 / deg[v] for u, v in edges])
        picks = rng.choice(len(edges), size=cfg.edge_budget, p=w / w.sum())
        return {x for i in picks for x in edges[i]}
    out = set()
    if cfg.kind == "rw":
        for _ in range(cfg.roots):
            u = int(rng.integers(n))
            out.add(u)
            for _ in range(cfg.depth):
                if not nbrs[u]:
                    break
                u = int(nbrs[u][rng.integers(len(nbrs[u]))])
                out.add(u)
        return out
    frontier = list(rng.choice(n, size=min(cfg.node_budget, n), replace=False))
    out.update(int(v) for v in frontier)
    for _ in range(cfg.node_budget):
        w = np.array([deg[v] for v in frontier], dtype=float)
        if w.sum() == 0:
            break
        slot = rng.choice(len(frontier), p=w / w.sum())
        u = frontier[slot]
        frontier[slot] = nbrs[u][rng.integers(len(nbrs[u]))]
        out.add(int(frontier[slot]))
    return out


CONFIGS = [
    SamplerConfig(kind="node", node_budget=8),
    SamplerConfig(kind="edge", edge_budget=4),
    SamplerConfig(kind="rw", roots=3, depth=2),
    SamplerConfig(kind="mrw", node_budget=4),
]


@pytest.fixture(scope="module")
def graph30():
    return random_graph(30, 0.12, np.random.default_rng(30))


class TestMechanisms:
    @pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.kind)
    def test_marginals_match_monte_carlo_oracle(self, graph30, cfg):
        train = np.arange(30)
        sampler = SubgraphSampler(graph30, train, cfg)
        rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(2)
        trials = 1000
        ours = np.zeros(30)
        oracle = np.zeros(30)
        dense = graph30.adj.toarray()
        for _ in range(trials):
            ours[sampler.sample(rng_a)] += 1
            oracle[list(_oracle_sample(dense, cfg, rng_b))] += 1
        p1, p2 = ours / trials, oracle / trials
        pooled = (p1 + p2) / 2
        sigma = np.sqrt(2 * pooled * (1 - pooled) / trials)
        # a handful of nodes may exceed 3 sigma by chance; the expected
        # number at 3 sigma is 30 * 0.0027
        assert np.sum(np.abs(p1 - p2) > 3 * sigma + 1e-12) <= 1

    def test_edge_uniform_on_k4(self):
        k4 = Graph.from_edges(4, [(u, v) for u in range(4) for v in range(u + 1, 4)], np.ones((4, 1)), np.eye(4))
        sampler = SubgraphSampler(k4, np.arange(4), SamplerConfig(kind="edge", edge_budget=1))
        edges, p = sampler._edge_probs()
        np.testing.assert_allclose(p, 1 / 6, atol=1e-15)
        rng = np.random.default_rng(0)
        counts = {}
        trials = 10_000
        for _ in range(trials):
            key = tuple(sampler.sample(rng).tolist())
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        sigma = np.sqrt(trials * (1 / 6) * (5 / 6))
        assert all(abs(c - trials / 6) <= 3 * sigma for c in counts.values())

    def test_node_budget_bound(self, graph30):
        train = np.arange(0, 30, 3)
        out = sample(graph30, train, SamplerConfig(kind="node", node_budget=500), np.random.default_rng(0))
        assert out.size <= train.size

    def test_walk_length_bound(self, graph30):
        cfg = SamplerConfig(kind="rw", roots=2, depth=2)
        rng = np.random.default_rng(5)
        for _ in range(50):
            assert sample(graph30, np.arange(30), cfg, rng).size <= 6

    def test_isolated_node_truncates_walk(self):
        g = Graph.from_edges(3, [(1, 2)], np.ones((3, 1)), np.eye(3))
        out = sample(g, [0], SamplerConfig(kind="rw", roots=1, depth=3), np.random.default_rng(0))
        np.testing.assert_array_equal(out, [0])


class TestInvariants:
    @pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.kind)
    def test_only_training_nodes_sorted_unique(self, graph30, cfg):
        train = np.flatnonzero(np.arange(30) % 3 != 0)
        sampler = SubgraphSampler(graph30, train, cfg)
        rng = np.random.default_rng(7)
        for _ in range(100):
            out = sampler.sample(rng)
            assert out.size > 0
            assert np.isin(out, train).all()
            np.testing.assert_array_equal(out, np.unique(out))

    @pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.kind)
    def test_deterministic_given_rng(self, graph30, cfg):
        a = [sample(graph30, np.arange(30), cfg, rng) for rng in [np.random.default_rng(3)] * 5]
        b = [sample(graph30, np.arange(30), cfg, rng) for rng in [np.random.default_rng(3)] * 5]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_host_streams_independent_and_reproducible(self):
        a = [r.random() for r in host_rngs(4, 3)]
        b = [r.random() for r in host_rngs(4, 3)]
        assert a == b and len(set(a)) == 3

    def test_empty_training_set(self, graph30):
        with pytest.raises(ValueError):
            SubgraphSampler(graph30, [], SamplerConfig())

    def test_edge_sampler_without_edges(self):
        g = Graph.from_edges(2, [], np.ones((2, 1)), np.eye(2))
        with pytest.raises(ValueError, match="edge"):
            sample(g, [0, 1], SamplerConfig(kind="edge"), np.random.default_rng(0))

    @pytest.mark.parametrize("kw", [{"kind": "cluster"}, {"node_budget": 0}, {"depth": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig(**kw)
