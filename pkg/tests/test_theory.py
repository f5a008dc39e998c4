import numpy as np
import pytest

from feras.aggregator import EmbeddingTable, build_theta
from feras.federation import assign_visibility, mask_inputs
from feras.gcn import Hyper, forward_pre
from feras.graph import Graph, induce_subgraph
from feras.theory import (
    LinearizationPack,
    SizeGuardError,
    UncertifiedError,
    build_linearization,
    certify,
    certify_instance,
    compare_shared_vs_plain,
    embedding_stack,
    empirical_contraction,
    random_nonneg_params,
    spectral_radius,
    vec,
)

from oracles import theory_instance

HYPER = Hyper(eta=0.1, lam=0.5, loss_kind="squared")
DIMS = (3, 3, 2)


def fake_pack(rho_m2_root, m1_scale=0.0):
    # M2 = sqrt(rho) * I has rho(M2^T M2) = rho
    m2 = np.eye(2) * np.sqrt(rho_m2_root)
    m1 = np.eye(2) * m1_scale
    z = np.zeros((2, 2))
    return LinearizationPack(m1, m2, z, z, np.zeros(2), np.eye(2), z)


class TestVec:
    def test_kronecker_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p, q, r, s = rng.integers(1, 6, size=4)
            a, x, b = rng.standard_normal((p, q)), rng.standard_normal((q, r)), rng.standard_normal((r, s))
            assert np.max(np.abs(vec(a @ x @ b) - np.kron(b.T, a) @ vec(x))) < 1e-12


class TestSpectralRadius:
    def test_identity(self):
        assert spectral_radius(np.eye(4)) == pytest.approx(1.0, abs=1e-15)

    def test_diagonal(self):
        assert spectral_radius(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-12)

    def test_eigensolver_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.standard_normal((8, 8))
            s = a.T @ a
            want = np.linalg.eigvalsh(s).max()
            assert abs(spectral_radius(s) - want) <= 1e-9 * want

    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            spectral_radius(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestCertify:
    def test_hand_substitution(self):
        r = certify(fake_pack(0.5), Hyper(eta=0.5, lam=1.0, loss_kind="squared"))
        assert r.eta_max == pytest.approx(1.0, rel=1e-12)
        assert r.rho_m1_bound == 0.5

    def test_lambda_zero(self):
        r = certify(fake_pack(2.0), Hyper(eta=0.1, lam=0.0, loss_kind="squared"))
        assert r.rho_m1_bound == 0.0
        assert r.eta_max == pytest.approx(4 / (2 * 2.0), rel=1e-12)
        assert r.satisfied[0]
        assert not certify(fake_pack(2.0, 0.1), Hyper(eta=0.1, lam=0.0, loss_kind="squared")).satisfied[0]

    def test_half_eta_max_satisfied(self):
        base = certify(fake_pack(0.5, 0.1), Hyper(eta=0.1, lam=1.0, loss_kind="squared"))
        hyper = Hyper(eta=base.eta_max / 2, lam=1.0, loss_kind="squared")
        r = certify(fake_pack(0.5, 0.1), hyper)
        assert r.satisfied == (True, True)
        assert r.contraction_constant == 1 - hyper.eta * 0.5

    def test_c_star_from_loss(self):
        r = certify(fake_pack(1.0), Hyper(eta=0.1, lam=1.0, loss_kind="bce_multilabel"))
        assert r.c_star == 0.25 and r.rho_m1_bound == 2.0


def _linear_setup(seed, n_hosts=3):
    inst = theory_instance(seed, n_hosts=n_hosts)
    params = random_nonneg_params(DIMS, 0.5, np.random.default_rng(seed + 100))
    theta = inst.theta()
    stack = embedding_stack(inst, [params] * n_hosts)
    return inst, params, theta, stack


class TestLinearization:
    def test_single_host_theta_identity(self):
        inst = theory_instance(0, n_hosts=1, pi=0.0)
        params = random_nonneg_params(DIMS, 0.5, np.random.default_rng(0))
        sg = inst.subgraphs[0]
        x = inst.masked(0, sg)
        pack = build_linearization(sg, inst.theta(), x, params, embedding_stack(inst, [params]))
        a = sg.norm_adj.toarray()
        assert np.max(np.abs(pack.M_core - a @ a @ x)) < 1e-14

    def test_forward_pass_identities(self):
        for seed in range(10):
            inst, params, theta, stack = _linear_setup(seed)
            # x_tilde through the server table, independent of theta
            table = EmbeddingTable(3, inst.g.num_nodes, DIMS[1])
            for n, sg in enumerate(inst.subgraphs):
                x_hat, _ = forward_pre(params, sg.norm_adj, inst.masked(n, sg))
                table.push(n, sg.nodes, x_hat, inst.plan.views[n].visible[sg.nodes])
            for n, sg in enumerate(inst.subgraphs):
                x = inst.masked(n, sg)
                pack = build_linearization(sg, theta, x, params, stack, host=n)
                a = sg.norm_adj.toarray()
                pre = a @ table.pull(sg.nodes) @ params.w2
                # linear regime: nothing was clipped
                assert np.all(pre >= 0)
                y = np.maximum(pre, 0)
                assert np.max(np.abs(vec(y) - (pack.B1 + pack.M1 @ vec(params.w1)))) < 1e-10
                assert np.max(np.abs(vec(y) - pack.M2 @ vec(params.w2))) < 1e-10

    def test_kronecker_structure(self):
        inst, params, theta, stack = _linear_setup(3)
        sg = inst.subgraphs[1]
        pack = build_linearization(sg, theta, inst.masked(1, sg), params, stack, host=1)
        np.testing.assert_array_equal(pack.M1, np.kron(params.w2.T, pack.M_core))

    def test_product_identity(self):
        for seed in range(10):
            inst, params, theta, stack = _linear_setup(seed)
            for n, sg in enumerate(inst.subgraphs):
                pack = build_linearization(sg, theta, inst.masked(n, sg), params, stack, host=n)
                r = certify(pack, HYPER)
                assert abs(r.rho_m1 - r.rho_w2 * r.rho_core) <= 1e-9 * r.rho_m1

    def test_size_guard(self):
        inst, params, theta, stack = _linear_setup(0)
        sg = inst.subgraphs[0]
        with pytest.raises(SizeGuardError):
            build_linearization(sg, theta, inst.masked(0, sg), params, stack, max_dim=5)


class TestSharedVsPlain:
    def test_equality_for_single_full_host(self):
        inst = theory_instance(1, n_hosts=1, pi=0.0)
        sg = inst.subgraphs[0]
        cmp = compare_shared_vs_plain(sg, inst.theta(), inst.masked(0, sg))
        assert cmp.rho_shared == pytest.approx(cmp.rho_plain, rel=1e-12)

    def test_shared_counts_two_and_three(self):
        # a 4-node path where nodes are sampled by 2 or 3 hosts
        g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], np.random.default_rng(0).random((4, 2)), np.eye(4))
        plan = assign_visibility(g, 3, 0.0, 0)
        lists = [np.arange(4), np.array([0, 1, 2]), np.array([0, 1])]
        theta = build_theta(lists, plan.views)
        sg = induce_subgraph(g, lists[0])
        x = mask_inputs(sg, plan.views[0], g.features, g.labels)[0]
        cmp = compare_shared_vs_plain(sg, theta, x, host=0)
        assert cmp.connected
        assert cmp.rho_shared <= cmp.rho_plain

    def test_disconnected_warns(self):
        g = Graph.from_edges(4, [(0, 1), (2, 3)], np.ones((4, 1)), np.eye(4))
        plan = assign_visibility(g, 1, 0.0, 0)
        theta = build_theta([np.arange(4)], plan.views)
        with pytest.warns(RuntimeWarning, match="disconnected"):
            cmp = compare_shared_vs_plain(induce_subgraph(g, np.arange(4)), theta, g.features)
        assert not cmp.connected


class TestEmpiricalContraction:
    def test_bound_q1(self):
        ratio = empirical_contraction(theory_instance(0), HYPER, 10, DIMS, q=1, scale=0.5)
        assert ratio <= 1 - 0.025 + 1e-6

    def test_identical_points_skipped(self):
        inst = theory_instance(0)
        assert empirical_contraction(inst, HYPER, 3, DIMS, scale=0.0) == 0.0

    def test_requires_squared_loss(self):
        with pytest.raises(UncertifiedError):
            empirical_contraction(theory_instance(0), Hyper(loss_kind="bce_multilabel"), 1, DIMS)

    def test_uncertified_instance(self):
        with pytest.raises(UncertifiedError):
            empirical_contraction(theory_instance(0), Hyper(eta=0.1, lam=0.001, loss_kind="squared"), 2, DIMS, scale=0.5)

    def test_certify_instance_reports_every_host(self):
        inst = theory_instance(2)
        reports = certify_instance(inst, random_nonneg_params(DIMS, 0.5, np.random.default_rng(2)), HYPER)
        assert len(reports) == 3 and all(r.ok for r in reports)
