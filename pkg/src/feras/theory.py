"""Numerical checks of the contraction conditions for shared-embedding training.

In the linear regime (ReLU acting as the identity) host n's output is
affine in each weight matrix::

    vec(y) = B1 + M1 vec(w1),   M1 = w2^T kron M,  M = A Theta_own A x
    vec(y) = M2 vec(w2),        M2 = I_{m3} kron (A x_tilde)

and one SGD step is a contraction with constant 1 - eta*lam/2 whenever
rho(M1^T M1) <= lam / (2 c*) and eta <= 4 / (2 c* rho(M2^T M2) + 3 lam).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .aggregator import ThetaSet, build_theta
from .federation import FederationPlan, mask_inputs
from .gcn import Hyper, ModelParams, forward_pre
from .graph import Graph, Subgraph, induce_subgraph, is_connected

MAX_DENSE_DIM = 2000


class SizeGuardError(ValueError):
    """Instance too large for dense linearization."""


class UncertifiedError(ValueError):
    """Hyperparameters violate the contraction constraints on the instance."""


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization, so vec(AXB) = (B^T kron A) vec(X)."""
    return np.asarray(a).reshape(-1, order="F")


def spectral_radius(
    sym_psd: np.ndarray,
    max_iter: int = 1000,
    tol: float = 1e-12,
    rng: np.random.Generator | None = None,
) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix by power iteration."""
    a = np.asarray(sym_psd, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = np.abs(a).max() if a.size else 0.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
        raise ValueError("matrix is not symmetric")
    if scale == 0.0:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        new_lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(new_lam - lam) <= tol * abs(new_lam):
            lam = new_lam
            break
        lam = new_lam
    return float(v @ a @ v)


@dataclass(frozen=True, eq=False)
class LinearizationPack:
    M1: np.ndarray
    M2: np.ndarray
    M_core: np.ndarray
    M_plain_core: np.ndarray
    B1: np.ndarray
    w2: np.ndarray
    x_tilde: np.ndarray


@dataclass(frozen=True)
class ConstraintReport:
    rho_m1: float
    rho_m2: float
    lam: float
    c_star: float
    eta: float
    eta_max: float
    rho_m1_bound: float
    satisfied: tuple[bool, bool]
    contraction_constant: float
    rho_w2: float
    rho_core: float

    @property
    def ok(self) -> bool:
        return all(self.satisfied)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["satisfied"] = list(self.satisfied)
        d["eta_max"] = _json_float(self.eta_max)
        return d


def _json_float(x: float):
    return x if np.isfinite(x) else "inf"


def build_linearization(
    sg: Subgraph,
    theta: ThetaSet,
    x: np.ndarray,
    params: ModelParams,
    x_hat_stack: np.ndarray,
    host: int = 0,
    max_dim: int = MAX_DENSE_DIM,
) -> LinearizationPack:
    """Dense linear-regime operators for host ``host``.

    ``x_hat_stack`` stacks every host's first-layer output in server order
    (the columns of ``theta[host]``).
    """
    k = sg.size
    m1, m2, m3 = params.dims
    if max(m3 * k, m1 * m2, m2 * m3) > max_dim:
        raise SizeGuardError(f"linearization of size {m3 * k}x{m1 * m2} exceeds {max_dim}")
    a = sg.norm_adj.toarray()
    t = theta[host]
    off = theta.offsets[host]
    own = theta.own_block(host)
    m_core = a @ own @ a @ x
    m_plain = a @ a @ x
    others = np.array(x_hat_stack, dtype=np.float64)
    others[off : off + k] = 0.0
    x_tilde = t @ x_hat_stack
    w2 = params.w2
    return LinearizationPack(
        M1=np.kron(w2.T, m_core),
        M2=np.kron(np.eye(m3), a @ x_tilde),
        M_core=m_core,
        M_plain_core=m_plain,
        B1=vec(a @ t @ others @ w2),
        w2=w2,
        x_tilde=x_tilde,
    )


def certify(pack: LinearizationPack, hyper: Hyper, c_star: float | None = None) -> ConstraintReport:
    c = hyper.c_star if c_star is None else c_star
    lam, eta = hyper.lam, hyper.eta
    rho_m1 = spectral_radius(pack.M1.T @ pack.M1)
    rho_m2 = spectral_radius(pack.M2.T @ pack.M2)
    denom = 2.0 * c * rho_m2 + 3.0 * lam
    eta_max = 4.0 / denom if denom > 0 else float("inf")
    bound = lam / (2.0 * c)
    return ConstraintReport(
        rho_m1=rho_m1,
        rho_m2=rho_m2,
        lam=lam,
        c_star=c,
        eta=eta,
        eta_max=eta_max,
        rho_m1_bound=bound,
        satisfied=(bool(rho_m1 <= bound), bool(eta <= eta_max)),
        contraction_constant=1.0 - eta * lam / 2.0,
        rho_w2=spectral_radius(pack.w2 @ pack.w2.T),
        rho_core=spectral_radius(pack.M_core @ pack.M_core.T),
    )


class Comparison(NamedTuple):
    rho_shared: float
    rho_plain: float
    connected: bool


def compare_shared_vs_plain(sg: Subgraph, theta: ThetaSet, x: np.ndarray, host: int = 0) -> Comparison:
    """rho(M M^T) with the host's diagonal averaging weights versus with the identity."""
    connected = is_connected(sg)
    if not connected:
        warnings.warn("subgraph is disconnected; the ordering is not guaranteed", RuntimeWarning)
    a = sg.norm_adj.toarray()
    own = theta.own_block(host)
    m = a @ own @ a @ x
    m_plain = a @ a @ x
    return Comparison(spectral_radius(m @ m.T), spectral_radius(m_plain @ m_plain.T), connected)


# -- instance-level helpers ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instance:
    """Fixed per-host subgraphs of a graph, as used by every theory check."""

    g: Graph
    plan: FederationPlan
    node_lists: tuple[np.ndarray, ...]

    @property
    def subgraphs(self) -> list[Subgraph]:
        return [induce_subgraph(self.g, n) for n in self.node_lists]

    def theta(self) -> ThetaSet:
        return build_theta(self.node_lists, self.plan.views)

    def masked(self, n: int, sg: Subgraph) -> np.ndarray:
        return mask_inputs(sg, self.plan.views[n], self.g.features, self.g.labels)[0]


def embedding_stack(inst: Instance, params: Sequence[ModelParams]) -> np.ndarray:
    parts = []
    for n, sg in enumerate(inst.subgraphs):
        x_hat, _ = forward_pre(params[n], sg.norm_adj, inst.masked(n, sg))
        parts.append(x_hat)
    return np.vstack(parts)


def certify_instance(inst: Instance, params: ModelParams, hyper: Hyper) -> list[ConstraintReport]:
    """One report per host, all hosts holding ``params``."""
    theta = inst.theta()
    stack = embedding_stack(inst, [params] * inst.plan.n_hosts)
    reports = []
    for n, sg in enumerate(inst.subgraphs):
        pack = build_linearization(sg, theta, inst.masked(n, sg), params, stack, host=n)
        reports.append(certify(pack, hyper))
    return reports


def _feras_map(inst: Instance, hyper: Hyper, q: int):
    """w -> parameters after q iterations and one weight average."""
    from .trainer import Simulation, TrainConfig

    def phi(w: ModelParams) -> ModelParams:
        cfg = TrainConfig(
            epochs=q, n_hosts=inst.plan.n_hosts, q=q, plan=inst.plan, mode="sequential",
            barrier=True, hyper=hyper, hidden_dims=w.dims[1:], dense_head=w.w_dense is not None,
        )
        sim = Simulation(inst.g, cfg, "feras", init=w)
        for _ in range(q):
            sim.step(inst.node_lists)
        return sim.params[0]

    return phi


def random_nonneg_params(dims, scale: float, rng: np.random.Generator) -> ModelParams:
    m1, m2, m3 = dims
    return ModelParams(rng.uniform(0, scale, (m1, m2)), rng.uniform(0, scale, (m2, m3)))


def empirical_contraction(
    inst: Instance,
    hyper: Hyper,
    trials: int,
    dims: tuple[int, int, int],
    q: int = 1,
    scale: float = 1.0,
    seed: int = 0,
) -> float:
    """Max over random pairs of ||Phi(w) - Phi(v)|| / ||w - v|| for one averaging round.

    Start points are drawn entry-wise from [0, scale] so every activation is
    in its linear regime. Each point must pass ``certify`` on every host.
    """
    if hyper.loss_kind != "squared":
        raise UncertifiedError("contraction measurement assumes squared loss")
    rng = np.random.default_rng(seed)
    phi = _feras_map(inst, hyper, q)
    worst = 0.0
    for _ in range(trials):
        w = random_nonneg_params(dims, scale, rng)
        v = random_nonneg_params(dims, scale, rng)
        gap = np.linalg.norm(w.flat() - v.flat())
        if gap == 0.0:
            continue
        for p in (w, v):
            bad = [r for r in certify_instance(inst, p, hyper) if not r.ok]
            if bad:
                raise UncertifiedError(f"instance not certified: {bad[0]}")
        ratio = np.linalg.norm(phi(w).flat() - phi(v).flat()) / gap
        worst = max(worst, float(ratio))
    return worst


def decay_to_fixed_point(
    inst: Instance,
    hyper: Hyper,
    w0: ModelParams,
    steps: int,
    max_iter: int = 100_000,
    tol: float = 1e-15,
) -> tuple[np.ndarray, ModelParams]:
    """Distances ||w_t - w*|| for t = 0..steps, with w* found by iterating to a fixed point."""
    phi = _feras_map(inst, hyper, 1)
    traj = [w0]
    w = w0
    for i in range(max_iter):
        nxt = phi(w)
        if len(traj) <= steps:
            traj.append(nxt)
        done = np.linalg.norm(nxt.flat() - w.flat()) <= tol * max(1.0, np.linalg.norm(w.flat()))
        w = nxt
        if done and len(traj) > steps:
            break
    else:
        raise RuntimeError("no fixed point within max_iter iterations")
    w_star = w
    dist = np.array([np.linalg.norm(p.flat() - w_star.flat()) for p in traj])
    return dist, w_star
