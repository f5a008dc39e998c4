"""Federated training loop: sampling, embedding exchange, local SGD, weight averaging."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gcn
from .aggregator import EmbeddingTable, WeightBuffer, average_weights
from .federation import FederationPlan, HostView, assign_visibility, mask_inputs
from .gcn import DivergenceError, Hyper, ModelParams
from .graph import Graph, Subgraph, induce_subgraph
from .sampler import SamplerConfig, SubgraphSampler

VARIANTS = ("feras", "isolated", "share_weights_only")
MODES = ("sequential", "parallel")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    epochs: int = 100
    n_hosts: int = 3
    q: int = 10
    pi_private: float = 0.0
    mode: str = "sequential"
    eval_every: int = 10
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    hyper: Hyper = field(default_factory=Hyper)
    hidden_dims: tuple[int, int] = (64, 64)
    dense_head: bool = True
    p_share_layer: int = 1
    exact_split: bool = False
    # sequential mode only: every host pushes before any host pulls
    barrier: bool = False
    # "local": inference without the server; "shared": hosts exchange
    # full-graph embeddings at evaluation time too (feras only)
    inference: str = "shared"
    plan: FederationPlan | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.q < 1 or self.n_hosts < 1 or self.eval_every < 1:
            raise ValueError("epochs, q, n_hosts and eval_every must all be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.p_share_layer != 1:
            raise ValueError("only p_share_layer = 1 is supported")
        if self.inference not in ("local", "shared"):
            raise ValueError("inference must be 'local' or 'shared'")
        self.hidden_dims = tuple(self.hidden_dims)
        if self.plan is not None and self.plan.n_hosts != self.n_hosts:
            raise ValueError("federation plan host count differs from n_hosts")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    host: int | str
    split: str
    f1_micro: float
    loss: float


class TrainingDiverged(DivergenceError):
    def __init__(self, msg: str, records: list[MetricsRecord]):
        super().__init__(msg)
        self.records = records


@dataclass
class HostStep:
    """One host's intermediate state between the push and pull phases."""

    sg: Subgraph
    labels: np.ndarray
    mask: np.ndarray
    x_hat: np.ndarray
    tape: gcn.ForwardTape


def seed_streams(cfg: TrainConfig) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """(init rng, per-host sampler rngs) derived from the run and sampler seeds."""
    init_ss, *host_ss = np.random.SeedSequence([cfg.seed, cfg.sampler.seed]).spawn(1 + cfg.n_hosts)
    return np.random.default_rng(init_ss), [np.random.default_rng(s) for s in host_ss]


class Simulation:
    """State of one federated run; ``step`` executes a single iteration.

    Sequential mode runs hosts 0..N-1 in order against a persistent table,
    so host j reads the pushes of hosts <= j from this iteration and the
    older pushes of hosts > j. Parallel mode runs hosts on worker threads
    with a cleared table and a barrier between push and pull.
    """

    def __init__(
        self,
        g: Graph,
        cfg: TrainConfig,
        variant: str = "feras",
        init: ModelParams | Sequence[ModelParams] | None = None,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.g = g
        self.cfg = cfg
        self.variant = variant
        self.plan = cfg.plan or assign_visibility(
            g, cfg.n_hosts, cfg.pi_private, cfg.seed, exact_split=cfg.exact_split
        )
        init_rng, self.rngs = seed_streams(cfg)
        if init is None:
            num_classes = g.num_classes if cfg.dense_head else None
            init = gcn.init_params(g.features.shape[1], cfg.hidden_dims, num_classes, init_rng)
        if isinstance(init, ModelParams):
            self.params = [init.copy() for _ in range(cfg.n_hosts)]
        else:
            self.params = [p.copy() for p in init]
        train_nodes = g.nodes_with_role("train")
        self.sampler = SubgraphSampler(g, train_nodes, cfg.sampler) if train_nodes.size else None
        persistent = cfg.mode == "sequential" and not cfg.barrier
        self.table = EmbeddingTable(cfg.n_hosts, g.num_nodes, cfg.hidden_dims[0], persistent=persistent)
        self.weights = WeightBuffer(cfg.n_hosts, cfg.q)
        self.t = 0
        self._pool = ThreadPoolExecutor(max_workers=cfg.n_hosts) if cfg.mode == "parallel" else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    @property
    def views(self) -> tuple[HostView, ...]:
        return self.plan.views

    # -- per-host phases --------------------------------------------------

    def _pre(self, n: int, nodes: np.ndarray) -> HostStep:
        sg = induce_subgraph(self.g, nodes)
        x, y, mask = mask_inputs(sg, self.views[n], self.g.features, self.g.labels)
        x_hat, tape = gcn.forward_pre(self.params[n], sg.norm_adj, x, mask)
        if self.variant == "feras":
            self.table.push(n, sg.nodes, x_hat, mask, epoch=self.t)
        return HostStep(sg, y, mask, x_hat, tape)

    def _post(self, n: int, st: HostStep) -> tuple[float, float] | None:
        if self.variant == "feras":
            x_tilde = self.table.pull(st.sg.nodes)
            own = self.table.own_weights(n, st.sg.nodes)
        else:
            x_tilde, own = st.x_hat, 1.0
        params = self.params[n]
        hyper = self.cfg.hyper
        logits = gcn.forward_post(params, st.sg.norm_adj, x_tilde, st.tape, own)
        if not st.mask.any():
            # nothing labelled in view: only the regularizer acts
            self.params[n] = params.map(lambda w: (1.0 - hyper.eta * hyper.lam) * w)
            return None
        cost = gcn.loss(logits, st.labels, st.mask, params, hyper)
        f1 = gcn.f1_micro(logits, st.labels, st.mask, self.g.task)
        grads = gcn.backward(st.tape, st.labels, hyper)
        self.params[n] = gcn.sgd_step(params, grads, hyper.eta)
        return f1, cost

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(*it) for it in items]
        return list(self._pool.map(lambda it: fn(*it), items))

    def step(self, node_lists: Sequence[np.ndarray] | None = None) -> list[tuple[float, float] | None]:
        """Run one iteration; returns per-host (train f1, train cost) or None."""
        self.t += 1
        n_hosts = self.cfg.n_hosts
        if node_lists is None:
            node_lists = [self.sampler.sample(self.rngs[n]) for n in range(n_hosts)]
        self.table.begin_epoch(self.t)
        if self.cfg.mode == "sequential" and not self.cfg.barrier:
            out = []
            for n in range(n_hosts):
                out.append(self._post(n, self._pre(n, node_lists[n])))
        else:
            steps = self._map(self._pre, [(n, node_lists[n]) for n in range(n_hosts)])
            out = self._map(self._post, list(enumerate(steps)))
        for p in self.params:
            self.weights.push(p)
        due = self.weights.tick()
        if due and self.variant != "isolated":
            merged = average_weights(self.weights)
            self.params = [merged.copy() for _ in range(n_hosts)]
        self.weights.clear()
        return out

    # -- evaluation -------------------------------------------------------

    def shared_inference_embeddings(self) -> list[np.ndarray]:
        """Full-graph embeddings after a server round, one matrix per host."""
        g = self.g
        table = EmbeddingTable(self.cfg.n_hosts, g.num_nodes, self.cfg.hidden_dims[0])
        all_nodes = np.arange(g.num_nodes)
        for n, view in enumerate(self.views):
            x = np.where(view.visible[:, None], g.features, 0.0)
            x_hat, _ = gcn.forward_pre(self.params[n], g.norm_adj, x)
            table.push(n, all_nodes, x_hat, view.visible)
        x_tilde = table.pull(all_nodes)
        return [x_tilde] * self.cfg.n_hosts

    def evaluate(self, epoch: int, splits=("val", "test")) -> list[MetricsRecord]:
        shared = None
        if self.variant == "feras" and self.cfg.inference == "shared":
            shared = self.shared_inference_embeddings()
        recs = []
        for split in splits:
            per_host = [
                evaluate(self.params[n], self.g, view, split, self.cfg.hyper,
                         None if shared is None else shared[n], epoch=epoch)
                for n, view in enumerate(self.views)
            ]
            recs.extend(per_host)
            recs.append(mean_record(per_host, epoch, split))
        return recs


def mean_record(per_host: Sequence[MetricsRecord], epoch: int, split: str) -> MetricsRecord:
    return MetricsRecord(
        epoch, "mean", split,
        float(np.mean([r.f1_micro for r in per_host])),
        float(np.mean([r.loss for r in per_host])),
    )


def evaluate(
    params: ModelParams,
    g: Graph,
    view: HostView,
    split: str,
    hyper: Hyper | None = None,
    shared_embeddings: np.ndarray | None = None,
    epoch: int = 0,
) -> MetricsRecord:
    """Full-graph inference under the host's masking, scored on its visible split nodes."""
    hyper = hyper or Hyper()
    split_mask = g.roles == ("train", "val", "test").index(split)
    mask = split_mask & view.visible
    if not mask.any():
        raise ValueError(f"host {view.host_id} sees no {split} nodes")
    x = np.where(view.visible[:, None], g.features, 0.0)
    x_hat, tape = gcn.forward_pre(params, g.norm_adj, x, view.visible)
    x_tilde = x_hat if shared_embeddings is None else shared_embeddings
    logits = gcn.forward_post(params, g.norm_adj, x_tilde, tape)
    return MetricsRecord(
        epoch, view.host_id, split,
        gcn.f1_micro(logits, g.labels, mask, g.task),
        gcn.loss(logits, g.labels, mask, params, hyper),
    )


def _check(records: list[MetricsRecord], epoch: int, results) -> None:
    for n, res in enumerate(results):
        if res is None:
            continue
        cost = res[1]
        if not np.isfinite(cost) or cost > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"host {n} diverged at epoch {epoch}: loss={cost}", records)


def _run(g: Graph, cfg: TrainConfig, variant: str, init=None) -> tuple[list[ModelParams], list[MetricsRecord]]:
    sim = Simulation(g, cfg, variant, init)
    records: list[MetricsRecord] = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            results = sim.step()
            train_recs = [MetricsRecord(epoch, n, "train", f1, cost)
                          for n, res in enumerate(results) if res is not None
                          for f1, cost in [res]]
            records.extend(train_recs)
            if train_recs:
                records.append(mean_record(train_recs, epoch, "train"))
            _check(records, epoch, results)
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                records.extend(sim.evaluate(epoch))
    finally:
        sim.close()
    return sim.params, records


def train(g: Graph, cfg: TrainConfig, init=None) -> tuple[list[ModelParams], list[MetricsRecord]]:
    """Federated training with shared embeddings; returns per-host params and metrics."""
    return _run(g, cfg, "feras", init)


def train_baseline(g: Graph, cfg: TrainConfig, variant: str, init=None):
    """``isolated``: no sharing at all. ``share_weights_only``: weight averaging only."""
    if variant not in ("isolated", "share_weights_only"):
        raise ValueError(f"unknown baseline {variant!r}")
    return _run(g, cfg, variant, init)


def run_variant(g: Graph, cfg: TrainConfig, variant: str, init=None):
    return train(g, cfg, init) if variant == "feras" else train_baseline(g, cfg, variant, init)


# -- reporting -----------------------------------------------------------------


def final_score(records: Sequence[MetricsRecord], split: str = "test") -> float:
    scored = [r for r in records if r.host == "mean" and r.split == split]
    if not scored:
        raise ValueError(f"no {split} evaluations recorded")
    return scored[-1].f1_micro


def epochs_to_threshold(records: Sequence[MetricsRecord], threshold: float, split: str = "test") -> int | None:
    for r in records:
        if r.host == "mean" and r.split == split and r.f1_micro >= threshold:
            return r.epoch
    return None


def write_metrics(records: Sequence[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "host", "split", "f1_micro", "loss"])
        for r in records:
            w.writerow([r.epoch, r.host, r.split, repr(float(r.f1_micro)), repr(float(r.loss))])


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MetricsRecord(int(r["epoch"]), r["host"] if r["host"] == "mean" else int(r["host"]),
                      r["split"], float(r["f1_micro"]), float(r["loss"]))
        for r in rows
    ]


def write_summary(records, path, wall_time: float, config: dict, extra: dict | None = None) -> dict:
    summary = {
        "final_mean_test_f1": final_score(records, "test"),
        "wall_time_s": wall_time,
        "config": config,
    }
    if extra:
        summary.update(extra)
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def timed_run(g: Graph, cfg: TrainConfig, variant: str):
    start = time.perf_counter()
    params, records = run_variant(g, cfg, variant)
    return params, records, time.perf_counter() - start


def config_dict(cfg: TrainConfig) -> dict:
    d = {k: v for k, v in asdict(cfg).items() if k not in ("plan", "sampler", "hyper")}
    d["sampler"] = cfg.sampler.to_dict()
    d["hyper"] = asdict(cfg.hyper)
    d["hidden_dims"] = list(cfg.hidden_dims)
    return d
