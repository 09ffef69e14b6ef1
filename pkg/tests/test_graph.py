import numpy as np
import pytest

from xproto.data import Dataset
from xproto.encoder import EncoderHead, encode, init_head
from xproto.graph import (PrototypeSet, RelationGraph, build_knn_graph,
                          graph_features, init_prototypes, langevin_update,
                          load_graph, log_posterior_and_grad, refresh_means,
                          reinit_rows, support_likelihood, write_graph)


def toy_dataset(embeddings_by_relation, domain="source"):
    vectors, labels = [], []
    for r, rows in enumerate(embeddings_by_relation):
        vectors.extend(rows)
        labels.extend([r] * len(rows))
    return Dataset(
        vectors=np.array(vectors, dtype=np.float32),
        labels=np.array(labels),
        relation_names=[f"r{r}" for r in range(len(embeddings_by_relation))],
        domain=domain,
        labeled=True,
    )


def identity_head(d):
    return EncoderHead(np.eye(d), np.zeros(d))


class TestKnnGraph:
    def test_collinear_points(self):
        t = np.array([[0.0], [1.0], [3.0]])
        g = build_knn_graph(t, k=1)
        assert [(i, j) for i, j, _ in g.edges] == [(0, 1), (1, 0), (2, 1)]

    def test_full_scale_degree(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((828, 16))
        g = build_knn_graph(t, k=10)
        assert g.neighbors.shape == (828, 10)
        assert all(len(set(g.neighbors[i])) == 10 for i in range(828))
        assert not any(i in g.neighbors[i] for i in range(828))

    def test_matches_brute_force_neighbors(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((20, 5))
        g = build_knn_graph(t, k=3)
        for i in range(20):
            dists = [(float(np.sum((t[i] - t[j]) ** 2)), j)
                     for j in range(20) if j != i]
            dists.sort()
            want = {j for _, j in dists[:3]}
            assert set(g.neighbors[i].tolist()) == want

    def test_duplicate_vectors_stable_tie_break(self):
        t = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
        g = build_knn_graph(t, k=2)
        # all three duplicates are at distance 0; lowest index wins
        assert g.neighbors[0].tolist() == [1, 2]
        assert g.neighbors[1].tolist() == [0, 2]
        assert g.neighbors[3].tolist() == [0, 1]

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="k must"):
            build_knn_graph(np.zeros((3, 2)), k=3)

    def test_weights_in_unit_interval(self):
        rng = np.random.default_rng(2)
        g = build_knn_graph(rng.standard_normal((15, 4)), k=4)
        assert np.all(g.weights > 0) and np.all(g.weights <= 1)

    def test_graph_dir_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        t = rng.standard_normal((12, 6)).astype(np.float32)
        names = [f"rel{i}" for i in range(12)]
        write_graph(str(tmp_path), names, t, k=4)
        g = load_graph(str(tmp_path))
        assert g.k == 4
        assert g.relation_names == names
        direct = build_knn_graph(t, 4, names)
        np.testing.assert_array_equal(g.neighbors, direct.neighbors)
        np.testing.assert_allclose(g.weights, direct.weights, rtol=1e-12)


class TestGraphFeatures:
    def _manual_graph(self, t, neighbors, weights, k):
        return RelationGraph(
            relation_names=[str(i) for i in range(len(t))],
            transe_vectors=np.asarray(t, dtype=np.float64),
            neighbors=np.asarray(neighbors),
            weights=np.asarray(weights, dtype=np.float64),
            k=k,
        )

    def test_zero_weights_degenerate(self):
        t = np.random.default_rng(0).standard_normal((3, 4))
        g = self._manual_graph(t, [[1], [2], [0]], [[0.0], [0.0], [0.0]], 1)
        proj = init_head(4, 3, rng=np.random.default_rng(1))
        np.testing.assert_allclose(graph_features(g, proj), encode(proj, t),
                                   rtol=1e-14)

    def test_identical_neighbors(self):
        t = np.tile(np.array([1.0, 2.0, -1.0]), (4, 1))
        g = build_knn_graph(t, k=2)
        proj = init_head(3, 2, rng=np.random.default_rng(1))
        h = graph_features(g, proj)
        np.testing.assert_allclose(h, encode(proj, t), rtol=1e-14)

    def test_matches_direct_formula(self):
        # 4-node toy graph evaluated against a hand-rolled per-node loop.
        rng = np.random.default_rng(5)
        t = rng.standard_normal((4, 3))
        g = build_knn_graph(t, k=2)
        proj = init_head(3, 2, rng=rng)
        h = graph_features(g, proj)
        for r in range(4):
            acc = t[r].copy()
            wsum = 1.0
            for j, w in zip(g.neighbors[r], g.weights[r]):
                acc += w * t[j]
                wsum += w
            want = encode(proj, acc / wsum)
            np.testing.assert_allclose(h[r], want, rtol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((8, 4))
        proj = init_head(4, 3, rng=rng)
        perm = rng.permutation(8)
        h = graph_features(build_knn_graph(t, k=3), proj)
        h_perm = graph_features(build_knn_graph(t[perm], k=3), proj)
        np.testing.assert_allclose(h_perm, h[perm], rtol=1e-10)

    def test_projection_dim_mismatch(self):
        g = build_knn_graph(np.random.default_rng(0).standard_normal((5, 4)), k=2)
        with pytest.raises(ValueError, match="projection"):
            graph_features(g, init_head(3, 2))


class TestInitPrototypes:
    def test_mean_feature_cancellation_exact(self):
        # h_r == m for every r collapses the rule to v_r = m_r, bitwise.
        ds = toy_dataset([[[1.0, 2.0], [3.0, 4.0]], [[0.5, -1.0]]])
        head = identity_head(2)
        means = np.stack([
            np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).astype(np.float64).mean(0),
            np.array([[0.5, -1.0]], dtype=np.float32).astype(np.float64).mean(0),
        ])
        global_mean = np.array([[1.0, 2.0], [3.0, 4.0], [0.5, -1.0]],
                               dtype=np.float32).astype(np.float64).mean(0)
        features = np.tile(global_mean, (2, 1))
        protos = init_prototypes(ds, features, head)
        assert np.array_equal(protos.v, means)

    def test_single_relation_forced_value(self):
        ds = toy_dataset([[[2.0, 2.0], [2.0, 2.0]]])
        head = identity_head(2)
        h = np.array([[5.0, -3.0]])
        protos = init_prototypes(ds, h, head)
        np.testing.assert_allclose(protos.v, h, rtol=1e-12)

    def test_matches_extended_precision_means(self):
        rng = np.random.default_rng(9)
        rows = [rng.standard_normal((n, 4)).tolist() for n in (3, 5, 2)]
        ds = toy_dataset(rows)
        head = init_head(4, 3, rng=rng)
        features = rng.standard_normal((3, 3))
        protos = init_prototypes(ds, features, head)

        emb_all = []
        for r, group in enumerate(rows):
            emb = encode(head, np.array(group, dtype=np.float32)).astype(np.longdouble)
            emb_all.append(emb)
            m_r = emb.mean(axis=0)
            np.testing.assert_allclose(protos.class_means[r],
                                       m_r.astype(np.float64), rtol=1e-12)
        m = np.concatenate(emb_all).mean(axis=0)
        np.testing.assert_allclose(protos.global_mean, m.astype(np.float64),
                                   rtol=1e-12)
        np.testing.assert_allclose(
            protos.v, protos.class_means + (features - protos.global_mean),
            rtol=1e-14)

    def test_subsampled_means(self):
        rng = np.random.default_rng(10)
        ds = toy_dataset([rng.standard_normal((40, 3)).tolist() for _ in range(4)])
        head = identity_head(3)
        features = np.zeros((4, 3))
        protos = init_prototypes(ds, features, head, subsample=40,
                                 rng=np.random.default_rng(0))
        full = init_prototypes(ds, features, head)
        # subsampled means stay near the full ones for well-behaved blobs
        assert np.max(np.abs(protos.class_means - full.class_means)) < 1.0

    def test_refresh_and_reinit(self):
        rng = np.random.default_rng(11)
        ds = toy_dataset([rng.standard_normal((5, 3)).tolist() for _ in range(3)])
        head = init_head(3, 2, rng=rng)
        features = rng.standard_normal((3, 2))
        protos = init_prototypes(ds, features, head, prior_std=1.0)
        protos.v += 100.0
        head.weight *= 0.5
        refresh_means(protos, ds, head)
        reinit_rows(protos, [0, 2])
        expect = protos.class_means + (features - protos.global_mean)
        np.testing.assert_allclose(protos.v[[0, 2]], expect[[0, 2]], rtol=1e-12)
        assert np.all(protos.v[1] > 50.0)


def random_protoset(n_rel, d, rng, sigma=1.0):
    return PrototypeSet(
        relation_ids=np.arange(n_rel),
        v=rng.standard_normal((n_rel, d)),
        class_means=rng.standard_normal((n_rel, d)),
        global_mean=rng.standard_normal(d),
        features=rng.standard_normal((n_rel, d)),
        prior_std=sigma,
    )


class TestSupportLikelihood:
    def test_single_relation_probability_one(self):
        rng = np.random.default_rng(0)
        protos = random_protoset(1, 4, rng)
        x = rng.standard_normal((3, 4))
        assert support_likelihood(protos, x, np.zeros(3, dtype=int)) == 0.0

    def test_equal_logits_give_half(self):
        protos = PrototypeSet(
            relation_ids=np.array([0, 1]),
            v=np.array([[1.0, 0.0], [1.0, 0.0]]),
            class_means=np.zeros((2, 2)),
            global_mean=np.zeros(2),
            features=np.zeros((2, 2)),
        )
        x = np.array([[0.3, 0.7]])
        got = support_likelihood(protos, x, np.array([0]), relations=np.array([0, 1]))
        assert got == pytest.approx(np.log(0.5), abs=1e-12)

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(1)
        protos = random_protoset(3, 5, rng)
        x = rng.standard_normal((6, 5))
        labels = rng.integers(0, 3, size=6)
        got = support_likelihood(protos, x, labels, relations=np.arange(3))

        total = np.longdouble(0)
        for i in range(6):
            logits = (x[i].astype(np.longdouble) @ protos.v.astype(np.longdouble).T)
            p = np.exp(logits) / np.exp(logits).sum()
            total += np.log(p[labels[i]])
        assert got == pytest.approx(float(total), rel=1e-10)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        protos = random_protoset(4, 6, rng)
        x = rng.standard_normal((5, 6))
        logits = x @ protos.v.T
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestLangevin:
    def test_zero_step_limit(self):
        rng = np.random.default_rng(0)
        protos = random_protoset(3, 4, rng)
        before = protos.v.copy()
        x = rng.standard_normal((6, 4))
        labels = np.repeat(np.arange(3), 2)
        noise = np.zeros((1, 3, 4))
        langevin_update(protos, x, labels, epsilon=1e-14, steps=1,
                        rng=rng, noise=noise)
        np.testing.assert_allclose(protos.v, before, atol=1e-10)

    def test_stationary_point(self):
        # One relation, one sample: p = 1 so the likelihood gradient is 0;
        # v = h kills the prior gradient. With z = 0 nothing moves.
        rng = np.random.default_rng(1)
        protos = random_protoset(1, 4, rng)
        protos.v[:] = protos.features
        before = protos.v.copy()
        x = rng.standard_normal((1, 4))
        langevin_update(protos, x, np.array([0]), epsilon=0.1, steps=3,
                        rng=rng, noise=np.zeros((3, 1, 4)))
        np.testing.assert_array_equal(protos.v, before)

    def test_log_posterior_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        d, n = 4, 6
        v = rng.standard_normal((2, d))
        h = rng.standard_normal((2, d))
        x = rng.standard_normal((n, d))
        label_rows = rng.integers(0, 2, size=n)
        _, grad = log_posterior_and_grad(v, x, label_rows, h, prior_std=0.8)
        step = 1e-6
        fd = np.zeros_like(v)
        for r in range(2):
            for c in range(d):
                vp, vm = v.copy(), v.copy()
                vp[r, c] += step
                vm[r, c] -= step
                fp, _ = log_posterior_and_grad(vp, x, label_rows, h, 0.8)
                fm, _ = log_posterior_and_grad(vm, x, label_rows, h, 0.8)
                fd[r, c] = (fp - fm) / (2 * step)
        rel = np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-8)
        assert rel <= 1e-5

    def test_noiseless_update_increases_log_posterior(self):
        rng = np.random.default_rng(3)
        wins = 0
        trials = 40
        for t in range(trials):
            trial_rng = np.random.default_rng(100 + t)
            protos = random_protoset(3, 5, trial_rng)
            x = trial_rng.standard_normal((9, 5))
            labels = np.repeat(np.arange(3), 3)
            rows = protos.rows(np.unique(labels))
            local_labels = np.array([int(l) for l in labels])
            before, _ = log_posterior_and_grad(protos.v[rows], x, local_labels,
                                               protos.features[rows], 1.0)
            langevin_update(protos, x, labels, epsilon=1e-3, steps=1,
                            rng=rng, noise=np.zeros((1, 3, 5)))
            after, _ = log_posterior_and_grad(protos.v[rows], x, local_labels,
                                              protos.features[rows], 1.0)
            wins += after > before
        assert wins >= 0.95 * trials

    def test_huge_sigma_removes_feature_dependence(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 3))
        labels = np.array([0, 0, 1, 1])
        noise = rng.standard_normal((2, 2, 3))
        results = []
        for h_seed in (10, 20):
            protos = random_protoset(2, 3, np.random.default_rng(5), sigma=1e12)
            protos.features = np.random.default_rng(h_seed).standard_normal((2, 3))
            langevin_update(protos, x, labels, epsilon=0.1, steps=2,
                            rng=np.random.default_rng(0), noise=noise)
            results.append(protos.v.copy())
        np.testing.assert_allclose(results[0], results[1], atol=1e-10)

    def test_prototypes_outside_episode_frozen(self):
        rng = np.random.default_rng(6)
        protos = random_protoset(5, 3, rng)
        before = protos.v.copy()
        x = rng.standard_normal((4, 3))
        langevin_update(protos, x, np.array([1, 1, 3, 3]), epsilon=0.1,
                        steps=1, rng=rng)
        np.testing.assert_array_equal(protos.v[[0, 2, 4]], before[[0, 2, 4]])
        assert not np.allclose(protos.v[[1, 3]], before[[1, 3]])

    def test_non_finite_aborts(self):
        rng = np.random.default_rng(7)
        protos = random_protoset(2, 3, rng)
        x = np.full((2, 3), 1e300)
        with pytest.raises(ValueError, match="non-finite prototype"):
            langevin_update(protos, x, np.array([0, 1]), epsilon=1e300,
                            steps=2, rng=rng)

    def test_epsilon_must_be_positive(self):
        rng = np.random.default_rng(8)
        protos = random_protoset(2, 3, rng)
        with pytest.raises(ValueError, match="epsilon"):
            langevin_update(protos, np.ones((2, 3)), np.array([0, 1]),
                            epsilon=0.0, steps=1, rng=rng)
