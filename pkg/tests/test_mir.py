import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vaemir.errors import ConfigError, DataError, ShapeError
from vaemir.mir import (
    MirConfig,
    cluster_mir_fit,
    fit_method,
    instance_mir_fit,
    instance_mir_predict,
    mean_fit,
    mean_prototype,
    predict_bags,
    prime_mir_fit,
    select_lowest,
    vaemir_fit,
    vaemir_prototype,
)
from vaemir.regressor import RegressorTrainConfig
from vaemir.vae import VaeTrainConfig, train_vae

from conftest import make_bag


def mcfg(epochs=60, seed=0, **kw):
    return MirConfig(regressor=RegressorTrainConfig(epochs=epochs, batch_size=16, hidden_dims=(16, 8), seed=seed), **kw)


bag_shapes = st.tuples(st.integers(1, 8), st.integers(1, 4))


@st.composite
def bag_and_scores(draw):
    n, d = draw(bag_shapes)
    inst = draw(arrays(np.float64, (n, d), elements=st.floats(-100, 100)))
    scores = draw(arrays(np.float64, n, elements=st.floats(0, 10)))
    k = draw(st.integers(1, n))
    return make_bag(inst, 1.0), scores, k


class TestPrototype:
    def test_hand_example(self):
        bag = make_bag([[0.0], [10.0], [2.0]])
        p = vaemir_prototype(bag, [0.1, 5.0, 0.2], 2)
        np.testing.assert_array_equal(p.vector, [1.0])
        assert p.k_used == 2

    def test_ties_go_to_lower_index(self):
        np.testing.assert_array_equal(select_lowest([1.0, 0.5, 0.5, 0.5], 2), [1, 2])

    def test_k1_picks_lowest_score(self):
        bag = make_bag([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        np.testing.assert_array_equal(vaemir_prototype(bag, [3.0, 0.1, 2.0], 1).vector, [2.0, 2.0])

    @given(bag_and_scores())
    def test_full_k_equals_mean_bitwise(self, case):
        bag, scores, _ = case
        np.testing.assert_array_equal(vaemir_prototype(bag, scores, bag.n).vector, mean_prototype(bag).vector)

    @given(bag_and_scores())
    def test_inside_instance_envelope(self, case):
        bag, scores, k = case
        v = vaemir_prototype(bag, scores, k).vector
        lo, hi = bag.instances.min(axis=0), bag.instances.max(axis=0)
        assert np.all(v >= lo - 1e-9) and np.all(v <= hi + 1e-9)

    @given(bag_and_scores(), st.randoms(use_true_random=False))
    def test_joint_permutation_invariance(self, case, r):
        bag, scores, k = case
        scores = scores + np.arange(bag.n) * 1e-3  # distinct, so selection is unambiguous
        perm = np.array(r.sample(range(bag.n), bag.n))
        moved = make_bag(bag.instances[perm], 1.0)
        np.testing.assert_allclose(
            vaemir_prototype(moved, scores[perm], k).vector,
            vaemir_prototype(bag, scores, k).vector,
            rtol=1e-12,
            atol=1e-12,
        )

    @given(bag_and_scores(), st.floats(-5, 5))
    def test_score_shift_invariance(self, case, c):
        bag, scores, k = case
        scores = np.round(scores, 3)  # shifting must not merge distinct scores
        np.testing.assert_array_equal(
            vaemir_prototype(bag, scores + c, k).vector, vaemir_prototype(bag, scores, k).vector
        )

    def test_k_out_of_range(self):
        bag = make_bag([[1.0], [2.0]], bag_id="tiny")
        with pytest.raises(ConfigError, match="tiny"):
            vaemir_prototype(bag, [0.0, 1.0], 3)
        with pytest.raises(ConfigError):
            vaemir_prototype(bag, [0.0, 1.0], 0)

    def test_score_count_mismatch(self):
        with pytest.raises(ShapeError):
            vaemir_prototype(make_bag([[1.0], [2.0]]), [0.0], 1)


def linear_bags(rng, n_bags=40, n=6, d=2):
    w = np.array([1.5, -0.5, 0.25, 1.0][:d])
    bags = []
    for i in range(n_bags):
        x = rng.normal(size=(n, d))
        bags.append(make_bag(x, float(x.mean(axis=0) @ w), bag_id=f"b{i}"))
    return bags


class TestInstanceMir:
    def test_constant_labels(self):
        bags = [make_bag(np.full((3, 2), float(i)), 5.0, bag_id=f"b{i}") for i in range(10)]
        model = instance_mir_fit(bags, mcfg())
        assert abs(instance_mir_predict(model, make_bag(np.full((3, 2), 4.5))) - 5.0) < 0.1

    def test_permutation_invariant(self, rng):
        model = instance_mir_fit(linear_bags(rng), mcfg(epochs=20))
        bag = make_bag(rng.normal(size=(7, 2)))
        moved = make_bag(bag.instances[rng.permutation(7)])
        assert instance_mir_predict(model, moved) == pytest.approx(instance_mir_predict(model, bag), rel=1e-12)

    def test_budget_matched_epochs(self, rng):
        model = instance_mir_fit(linear_bags(rng, n_bags=10, n=5), mcfg(epochs=50))
        assert len(model.regressor.loss_trace) == 10

    def test_explicit_instance_epochs(self, rng):
        model = instance_mir_fit(linear_bags(rng, n_bags=10, n=5), mcfg(epochs=50, instance_epochs=3))
        assert len(model.regressor.loss_trace) == 3

    def test_unlabeled_bag_rejected(self):
        bags = [make_bag([[1.0]], 1.0, bag_id="a"), make_bag([[2.0]], None, bag_id="b")]
        with pytest.raises(DataError, match="b"):
            instance_mir_fit(bags, mcfg())


class TestPrimeMir:
    def planted(self, seed, n_bags=100, n=4):
        # instance 0 carries the label, the rest are wide noise
        rng = np.random.default_rng(seed)
        bags = []
        for i in range(n_bags):
            x = rng.normal(scale=3.0, size=(n, 1))
            x[0] = rng.uniform(-1, 1, size=1)
            bags.append(make_bag(x, float(1.5 * x[0, 0]), bag_id=f"b{i}"))
        return bags, np.zeros(n_bags, dtype=int)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_recovers_planted_primary(self, seed):
        bags, primary = self.planted(seed)
        model = prime_mir_fit(bags, mcfg(epochs=200, seed=seed))
        assert np.mean(model.selected == primary) >= 0.9

    def test_single_instance_bags_match_instance_mir(self, rng):
        bags = linear_bags(rng, n_bags=20, n=1)
        prime = prime_mir_fit(bags, mcfg(epochs=20))
        inst = instance_mir_fit(bags, mcfg(epochs=20))
        probe = [make_bag(rng.normal(size=(1, 2))) for _ in range(5)]
        np.testing.assert_array_equal(predict_bags(prime, probe), predict_bags(inst, probe))

    @pytest.mark.parametrize("seed", range(3))
    def test_residual_trace_non_increasing(self, seed):
        bags, _ = self.planted(seed, n_bags=30)
        model = prime_mir_fit(bags, mcfg(epochs=30, seed=seed), max_iters=6)
        assert all(b <= a for a, b in zip(model.residual_trace, model.residual_trace[1:]))
        assert model.n_iter <= 6
        assert model.stop_reason in ("stable", "no_improvement", "max_iters")

    def test_deterministic(self):
        bags, _ = self.planted(4, n_bags=20)
        a = prime_mir_fit(bags, mcfg(epochs=20), max_iters=3)
        b = prime_mir_fit(bags, mcfg(epochs=20), max_iters=3)
        np.testing.assert_array_equal(a.selected, b.selected)
        assert a.residual_trace == b.residual_trace

    def test_bad_iteration_count(self, rng):
        with pytest.raises(ConfigError):
            prime_mir_fit(linear_bags(rng), mcfg(), max_iters=0)


class TestClusterMir:
    def test_one_cluster_is_instance_mir(self, rng):
        bags = linear_bags(rng, n_bags=15)
        cl = cluster_mir_fit(bags, mcfg(epochs=20), n_clusters=1)
        inst = instance_mir_fit(bags, mcfg(epochs=20))
        probe = [make_bag(rng.normal(size=(4, 2))) for _ in range(5)]
        np.testing.assert_allclose(predict_bags(cl, probe), predict_bags(inst, probe), rtol=1e-12)

    def two_groups(self, seed):
        # informative instances near +5, label noise instances near -5
        rng = np.random.default_rng(seed)
        bags = []
        for i in range(40):
            good = rng.normal(loc=5.0, scale=0.5, size=(4, 2))
            bad = rng.normal(loc=-5.0, scale=0.5, size=(4, 2))
            y = float(good[:, 0].mean() - 5.0) * 3.0
            bad[:, 0] += rng.normal(scale=2.0, size=4)
            bags.append(make_bag(np.vstack([good, bad]), y, bag_id=f"b{i}"))
        return bags

    def test_picks_informative_cluster(self):
        hits = 0
        for seed in range(5):
            model = cluster_mir_fit(self.two_groups(seed), mcfg(epochs=100, seed=seed), n_clusters=2, rng=seed)
            hits += model.centroids[model.chosen, 0] > 0
        assert hits >= 4

    def test_too_many_clusters(self):
        bags = [make_bag([[1.0], [2.0]], 1.0, bag_id="a"), make_bag([[3.0]], 2.0, bag_id="b")]
        with pytest.raises(ConfigError):
            cluster_mir_fit(bags, mcfg(), n_clusters=4)

    def test_rmse_recorded_per_cluster(self):
        model = cluster_mir_fit(self.two_groups(0), mcfg(epochs=20), n_clusters=2)
        assert model.chosen in model.cluster_rmse
        assert model.cluster_rmse[model.chosen] == min(model.cluster_rmse.values())


@pytest.fixture(scope="module")
def contaminated():
    """Bags whose label tracks the inliers; 30% outliers sit far off with random values."""
    out = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        bags = []
        for i in range(60):
            inl = rng.normal(scale=0.3, size=(14, 3)) + rng.normal(size=3)
            outl = rng.normal(loc=6.0, scale=4.0, size=(6, 3))
            label = float(inl.mean(axis=0) @ [1.0, -1.0, 0.5])
            x = np.vstack([inl, outl])[rng.permutation(20)]
            bags.append(make_bag(x, label, bag_id=f"s{seed}b{i}"))
        inst = np.concatenate([b.instances for b in bags])
        vae = train_vae(inst, VaeTrainConfig(epochs=30, batch_size=64, latent_dim=2, hidden_dims=(16, 8), seed=seed)).model
        out.append((bags, vae))
    return out


class TestVaemir:
    def test_full_k_equals_mean_regression(self, rng, contaminated):
        bags, vae = contaminated[0]
        a = vaemir_fit(bags, vae, 20, mcfg(epochs=20))
        b = mean_fit(bags, mcfg(epochs=20))
        np.testing.assert_array_equal(a.regressor.network.params, b.regressor.network.params)
        np.testing.assert_array_equal(predict_bags(a, bags[:5]), predict_bags(b, bags[:5]))

    def test_beats_mean_on_contaminated_bags(self, contaminated):
        wins = 0
        for seed, (bags, vae) in enumerate(contaminated):
            train, test = bags[:40], bags[40:]
            truth = np.array([b.label for b in test])
            v = vaemir_fit(train, vae, 14, mcfg(epochs=150, seed=seed))
            m = mean_fit(train, mcfg(epochs=150, seed=seed))
            err_v = np.sqrt(np.mean((predict_bags(v, test) - truth) ** 2))
            err_m = np.sqrt(np.mean((predict_bags(m, test) - truth) ** 2))
            wins += err_v < err_m
        assert wins >= 4

    def test_k_exceeding_bag_names_bag(self, contaminated):
        bags, vae = contaminated[0]
        short = bags[:3] + [make_bag(bags[3].instances[:5], 1.0, bag_id="short-one")]
        with pytest.raises(ConfigError, match="short-one"):
            vaemir_fit(short, vae, 10, mcfg())

    def test_dimension_mismatch(self, contaminated):
        _, vae = contaminated[0]
        bags = [make_bag(np.zeros((3, 2)), 1.0, bag_id=f"b{i}") for i in range(3)]
        with pytest.raises(ShapeError):
            vaemir_fit(bags, vae, 1, mcfg())


class TestDispatch:
    def test_unknown_method(self, rng):
        with pytest.raises(ConfigError, match="unknown"):
            fit_method("median", linear_bags(rng), mcfg())

    def test_vaemir_needs_k(self, rng):
        with pytest.raises(ConfigError):
            fit_method("vaemir", linear_bags(rng), mcfg())

    @pytest.mark.parametrize("method", ["instance", "mean", "prime", "cluster"])
    def test_each_method_predicts(self, method, rng):
        model = fit_method(method, linear_bags(rng, n_bags=12), mcfg(epochs=5, prime_max_iters=2, n_clusters=2))
        assert np.isfinite(predict_bags(model, linear_bags(rng, n_bags=3))).all()

    @pytest.mark.parametrize("kw", [{"instance_aggregate": "max"}, {"prime_max_iters": 0}, {"n_clusters": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            MirConfig(**kw)
