"""
choice のテスト
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from scripts.choice import (
    ALL_FEATURES, FEATURE_NAMES, MIN_PRICE, MOST_MSG, RANDOM,
    DecisionInstance, FeatureContext, all_decisions, baseline_rank, build_decisions, evaluate,
    extract_features, feature_table, fractional_rank, in_train_split, order_by_score, read_choice_clusters,
    resolve_subset, run_experiment, train_ranker, true_rank,
)
from scripts.graph_core import TemporalMultigraph
from scripts.syngen import SynthConfig, generate_dataset
from scripts.utils.errors import FitError, IngestError, ValidationError
from tests.conftest import DAY, T0, build_graph, message, trade


def decision(key="c", k=3, truth=(0,), prices=None, buyer="0", date=T0, candidates=None):
    candidates = candidates or tuple(str(10 + i) for i in range(k))
    return DecisionInstance(
        cluster_id=key, buyer=buyer, purchase_date=date,
        true_sellers=tuple(candidates[i] for i in truth), candidates=candidates,
        prices=tuple(prices or [10.0] * k), ratings=(99.0,) * k, historical_sold=(5.0,) * k,
        inventory_sold=(1.0,) * k, insurance=(0,) * k,
    )


def column(x, name):
    return x[:, FEATURE_NAMES.index(name)]


@pytest.fixture
def purchase_graph():
    """買い手0, 売り手1・2, 友人3。購入日は5日目"""
    return build_graph([
        message(0, 1, T0 + DAY + 10),
        trade(0, 1, T0 + 2 * DAY),
        message(0, 3, T0 + 3 * DAY),
        message(3, 2, T0 + 3 * DAY + 5),
        message(0, 2, T0 + 5 * DAY + 100),
        trade(3, 2, T0 + 6 * DAY),
    ], contacts=[(0, 3), (1, 3), (2, 3)], n_nodes=4)


@pytest.fixture
def purchase_decision():
    return DecisionInstance(
        cluster_id="c1", buyer="0", purchase_date=T0 + 5 * DAY + 500,
        true_sellers=("2",), candidates=("1", "2"),
        prices=(5.0, 3.0), ratings=(99.0, 97.5), historical_sold=(10.0, 0.0),
        inventory_sold=(2.0, 1.0), insurance=(1, 0),
    )


class TestFractionalRank:
    def test_ascending_and_descending(self):
        assert fractional_rank([3.0, 1.0, 2.0]).tolist() == [1.0, 0.0, 0.5]
        assert fractional_rank([3.0, 1.0, 2.0], descending=True).tolist() == [0.0, 1.0, 0.5]

    def test_ties_share_average_rank(self):
        assert fractional_rank([1.0, 1.0, 2.0]).tolist() == [0.25, 0.25, 1.0]

    def test_single_candidate(self):
        assert fractional_rank([4.0]).tolist() == [0.0]


class TestDecisions:
    def rows(self):
        base = {"price": 10.0, "rating_percent": 99.0, "historical_sold": 3, "inventory_sold": 1,
                "insurance": 0, "category_id": 2}
        records = [
            ("c1", "x", "a", T0 + 10), ("c1", "x", "b", T0 + 20),
            ("c1", "y", "a", T0 + 30), ("c1", "y", "a", T0 + DAY + 30),
            ("c2", "x", "a", T0),
        ] + [("c3", "z", f"s{i}", T0 + i) for i in range(11)]
        return pd.DataFrame([dict(base, cluster_id=c, buyer=b, seller=s, purchase_date=t)
                             for c, b, s, t in records])

    def test_grouping_per_buyer_and_day(self):
        clusters = build_decisions(self.rows(), min_sellers=2, max_sellers=10)
        assert [c.cluster_id for c in clusters] == ["c1"]
        decisions = all_decisions(clusters)
        assert [(d.buyer, d.true_sellers) for d in decisions] == [("x", ("a", "b")), ("y", ("a",)), ("y", ("a",))]
        assert all(d.candidates == ("a", "b") for d in decisions)
        assert decisions[0].purchase_date == T0 + 10
        assert decisions[0].category_id == 2
        assert decisions[0].truth_mask().tolist() == [True, True]

    def test_read_file_without_category(self, tmp_path):
        path = tmp_path / "choice_clusters.csv"
        path.write_text(
            "cluster_id,buyer,seller,purchase_date,price,rating_percent,historical_sold,inventory_sold,insurance\n"
            "k1,b1,s1,100,5.5,99.1,10,2,1\n", encoding="utf-8")
        frame = read_choice_clusters(path)
        assert frame["category_id"].tolist() == [0]
        assert frame["purchase_date"].dtype == np.int64

    def test_read_file_bad_insurance(self, tmp_path):
        path = tmp_path / "choice_clusters.csv"
        path.write_text(
            "cluster_id,buyer,seller,purchase_date,price,rating_percent,historical_sold,inventory_sold,insurance\n"
            "k1,b1,s1,100,5.5,99.1,10,2,1\n"
            "k1,b2,s2,100,5.5,99.1,10,2,3\n", encoding="utf-8")
        with pytest.raises(IngestError) as info:
            read_choice_clusters(path)
        assert info.value.line == 3


class TestFeatures:
    def test_values_before_purchase_day(self, purchase_graph, purchase_decision):
        x = FeatureContext(purchase_graph).extract(purchase_decision)
        assert x.shape == (2, len(FEATURE_NAMES))
        assert column(x, "price_rank").tolist() == [1.0, 0.0]
        assert column(x, "rating_rank").tolist() == [0.0, 1.0]
        assert column(x, "log_historical_sold").tolist() == pytest.approx([np.log(11.0), 0.0])
        assert column(x, "insurance").tolist() == [1.0, 0.0]
        # 購入日当日のメッセージ 0→2 は見えない
        assert column(x, "bs_message_volume").tolist() == [1.0, 0.0]
        assert column(x, "bs_trade_volume").tolist() == [1.0, 0.0]
        assert column(x, "message_rank").tolist() == [0.0, 1.0]
        assert column(x, "days_since_message")[0] == pytest.approx((4 * DAY - 11) / DAY)
        assert column(x, "days_since_message")[1] == pytest.approx(30.0)
        assert column(x, "bs_contact").tolist() == [0.0, 0.0]
        assert column(x, "mutual_contact").tolist() == [1.0, 1.0]
        assert column(x, "mutual_message").tolist() == [0.0, 1.0]
        assert column(x, "seller_trade_volume").tolist() == [1.0, 0.0]

    def test_snapshot_hygiene(self, purchase_graph, purchase_decision):
        """購入日より後のイベントを消したグラフでも特徴量は変わらない"""
        context = FeatureContext(purchase_graph)
        cutoff = context.cutoff_for(purchase_decision.purchase_date)
        assert cutoff == T0 + 5 * DAY - 1
        events = purchase_graph.events
        truncated = TemporalMultigraph(events[events["timestamp"] <= cutoff], purchase_graph.contacts,
                                       purchase_graph.window, n_nodes=purchase_graph.n_nodes)
        before = extract_features(purchase_decision, purchase_graph)
        after = extract_features(purchase_decision, truncated)
        pd.testing.assert_frame_equal(before, after)

    def test_snapshot_hygiene_on_synthetic(self, small_synth):
        g = small_synth.graph()
        decisions = all_decisions(build_decisions(small_synth.choice_clusters, g))[:10]
        assert decisions
        context = FeatureContext(g)
        for d in decisions:
            cutoff = context.cutoff_for(d.purchase_date)
            events = g.events
            truncated = TemporalMultigraph(events[events["timestamp"] <= cutoff], g.contacts, g.window,
                                           n_nodes=g.n_nodes)
            np.testing.assert_allclose(context.extract(d), FeatureContext(truncated).extract(d))

    def test_candidate_order_does_not_change_features(self, small_synth):
        g = small_synth.graph()
        decisions = all_decisions(build_decisions(small_synth.choice_clusters, g))[:10]
        context = FeatureContext(g)
        per_candidate = ("candidates", "prices", "ratings", "historical_sold", "inventory_sold", "insurance")
        for d in decisions:
            perm = np.roll(np.arange(d.k), 1)
            shuffled = replace(d, **{name: tuple(getattr(d, name)[i] for i in perm) for name in per_candidate})
            np.testing.assert_allclose(context.extract(shuffled), context.extract(d)[perm])

    def test_unknown_buyer_uses_defaults(self, purchase_graph):
        d = decision(candidates=("1", "2"), k=2, buyer="99", date=T0 + 5 * DAY)
        x = FeatureContext(purchase_graph).extract(d)
        assert column(x, "bs_message_volume").tolist() == [0.0, 0.0]
        assert column(x, "days_since_trade").tolist() == [30.0, 30.0]

    def test_feature_table_layout(self, purchase_graph, purchase_decision):
        table = feature_table([purchase_decision], purchase_graph)
        assert list(table.columns[:5]) == ["cluster_id", "buyer", "purchase_date", "seller", "is_true"]
        assert table["is_true"].tolist() == [0, 1]
        assert feature_table([], purchase_graph).empty


class TestOrdering:
    def test_scores_descending(self):
        assert order_by_score(np.array([0.1, 0.9, 0.5]), seed=0, key="k").tolist() == [1, 2, 0]

    def test_ties_are_seeded(self):
        scores = np.zeros(6)
        assert order_by_score(scores, 3, "k1").tolist() == order_by_score(scores, 3, "k1").tolist()
        orders = {tuple(order_by_score(scores, 3, f"k{i}").tolist()) for i in range(20)}
        assert len(orders) > 1

    def test_true_rank_is_one_based(self):
        assert true_rank(np.array([2, 0, 1]), np.array([False, False, True])) == 1
        assert true_rank(np.array([2, 0, 1]), np.array([False, True, True])) == 1
        assert true_rank(np.array([2, 0, 1]), np.array([True, False, False])) == 2

    def test_min_price_baseline(self):
        d = decision(prices=[3.0, 1.0, 2.0])
        assert baseline_rank(MIN_PRICE, d).tolist() == [1, 2, 0]

    def test_most_msg_baseline(self):
        d = decision()
        assert baseline_rank(MOST_MSG, d, message_volume=[0.0, 2.0, 1.0]).tolist() == [1, 2, 0]
        with pytest.raises(ValidationError):
            baseline_rank(MOST_MSG, d)
        with pytest.raises(ValidationError):
            baseline_rank("Oracle", d)

    def test_random_baseline_p_at_1(self):
        k, n = 5, 10_000
        ranks = [(true_rank(baseline_rank(RANDOM, decision(key=f"c{i}", k=k), seed=1),
                            decision(key=f"c{i}", k=k).truth_mask()), k) for i in range(n)]
        p = evaluate(ranks).p_at_1
        sigma = np.sqrt(0.2 * 0.8 / n)
        assert abs(p - 0.2) <= 3 * sigma


class TestMetrics:
    def test_hand_fixture(self):
        m = evaluate([(1, 2), (2, 2)])
        assert (m.p_at_1, m.mean_rank, m.mrr) == (0.5, 1.5, 0.75)
        assert m.per_k[2]["n"] == 2

    def test_per_k(self):
        m = evaluate([(1, 2), (3, 4), (1, 4)])
        assert m.per_k[4]["p_at_1"] == 0.5
        assert m.to_dict()["per_k"]["2"]["mean_rank"] == 1.0

    def test_empty(self):
        m = evaluate([])
        assert m.p_at_1 is None and m.n == 0


class TestSplit:
    def test_deterministic_and_balanced(self):
        ids = [f"k{i}" for i in range(4000)]
        first = [in_train_split(c, 0, 0.75) for c in ids]
        assert first == [in_train_split(c, 0, 0.75) for c in ids]
        assert 0.72 <= np.mean(first) <= 0.78
        assert first != [in_train_split(c, 1, 0.75) for c in ids]

    def test_extreme_ratios(self):
        assert not in_train_split("k1", 0, 0.0)
        assert in_train_split("k1", 0, 1.0)


class TestSubsets:
    def test_resolve(self):
        assert resolve_subset(ALL_FEATURES) == FEATURE_NAMES
        assert len(resolve_subset("Only Meta")) == 6
        assert len(resolve_subset("Only Network")) == 17
        msgs = resolve_subset("Meta + Msgs")
        assert msgs[:6] == FEATURE_NAMES[:6]
        assert "bs_message_volume" in msgs and "bs_trade_volume" not in msgs

    def test_unknown_subset(self):
        with pytest.raises(ValidationError):
            resolve_subset("Everything")


class TestRanker:
    def separable(self, seed, n=200, k=4):
        rng = np.random.default_rng(seed)
        groups = []
        for _ in range(n):
            x = rng.normal(size=(k, 3))
            truth = np.zeros(k, dtype=bool)
            truth[int(np.argmax(x @ np.array([2.0, -1.0, 0.0])))] = True
            groups.append((x, truth))
        return groups

    def test_learns_separable_ranking(self):
        model = train_ranker(self.separable(0), lam=1e-4, epochs=30, seed=0)
        assert model.weights[0] > 0 > model.weights[1]
        test = self.separable(1, n=300)
        hits = [true_rank(order_by_score(model.score(x), 0, str(i)), t) == 1 for i, (x, t) in enumerate(test)]
        assert np.mean(hits) >= 0.9

    def test_training_is_seeded(self):
        groups = self.separable(2, n=50)
        a = train_ranker(groups, lam=1e-3, epochs=5, seed=4)
        b = train_ranker(groups, lam=1e-3, epochs=5, seed=4)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_no_pairs(self):
        with pytest.raises(FitError):
            train_ranker([(np.ones((2, 3)), np.array([True, True]))])

    def test_duplicated_groups_give_same_model(self):
        groups = self.separable(3, n=40)
        a = train_ranker(groups, lam=1e-3, epochs=5, seed=2)
        b = train_ranker(groups + groups, lam=1e-3, epochs=5, seed=2)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.n_pairs == b.n_pairs

    def test_equal_pairs_from_different_groups_both_count(self):
        truth = np.array([True, False])
        first = (np.array([[1.0, 0.0], [0.0, 0.0]]), truth)
        second = (np.array([[2.0, 0.0], [1.0, 0.0]]), truth)
        both = train_ranker([first, second], lam=1e-4, epochs=1, seed=0)
        alone = train_ranker([first], lam=1e-4, epochs=1, seed=0)
        assert both.n_pairs == 2
        assert both.weights[0] > alone.weights[0]

    def test_strong_regularisation_shrinks_weights(self):
        groups = self.separable(4, n=50)
        weak = train_ranker(groups, lam=1e-4, epochs=5, seed=0)
        strong = train_ranker(groups, lam=1e6, epochs=5, seed=0)
        assert np.abs(weak.weights).max() > 0.1
        assert np.abs(strong.weights).max() < 1e-3


class TestExperiment:
    def test_runs_on_synthetic(self, small_synth):
        g = small_synth.graph()
        decisions = all_decisions(build_decisions(small_synth.choice_clusters, g))
        result = run_experiment(decisions, g, subset="Meta + Msgs", epochs=3, split_seed=0)
        assert result.n_train + result.n_test == len(decisions)
        assert set(result.baselines) == {RANDOM, MIN_PRICE, MOST_MSG}
        payload = result.to_dict()
        assert payload["subset"] == "Meta + Msgs"
        assert set(payload["model"]["weights"]) == set(resolve_subset("Meta + Msgs"))

    def test_precomputed_features_give_same_result(self, small_synth):
        g = small_synth.graph()
        decisions = all_decisions(build_decisions(small_synth.choice_clusters, g))
        context = FeatureContext(g)
        features = {d.key: context.extract(d) for d in decisions}
        a = run_experiment(decisions, g, epochs=2, features=features).to_dict()
        b = run_experiment(decisions, g, epochs=2).to_dict()
        assert a == b

    def test_per_category(self, small_synth):
        g = small_synth.graph()
        decisions = all_decisions(build_decisions(small_synth.choice_clusters, g))
        result = run_experiment(decisions, g, epochs=2, per_category=True)
        assert result.per_category
        assert result.metrics.n == result.n_test

    def test_no_training_data(self, purchase_graph, purchase_decision):
        with pytest.raises(FitError):
            run_experiment([], purchase_graph)

    @pytest.mark.slow
    def test_recovers_message_driven_choice(self):
        data = generate_dataset(SynthConfig(n_choice_clusters=400, choice_buyers_per_cluster=8, seed=3))
        g = data.graph()
        decisions = all_decisions(build_decisions(data.choice_clusters, g))
        context = FeatureContext(g)
        features = {d.key: context.extract(d) for d in decisions}

        full = run_experiment(decisions, g, features=features)
        p_full = full.metrics.p_at_1
        assert p_full >= 1.3 * full.baselines[RANDOM].p_at_1
        assert p_full >= 1.3 * full.baselines[MIN_PRICE].p_at_1

        msgs = run_experiment(decisions, g, subset="Meta + Msgs", features=features).metrics.p_at_1
        meta = run_experiment(decisions, g, subset="Only Meta", features=features).metrics.p_at_1
        assert msgs >= 1.2 * meta
