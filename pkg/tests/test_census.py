"""
census のテスト（素朴な三重ループとの一致を含む）
"""

import math
import resource
import time
from collections import Counter

import numpy as np
import pandas as pd
import pytest

from scripts.census import (
    AMBIGUOUS, BUYER, CENSUS_COLUMNS, CLOSING_TYPES, LEG_MSG_IN, LEG_MSG_OUT, LEG_TRADE_IN, LEG_TRADE_OUT,
    N_CONFIGS, SELLER, CensusRow, CensusTally, GenerativeBaseline, config_census, config_id, generative_baseline,
    generative_baselines,
    role_of_x, role_summary, rows_to_frame, surprise,
)
from scripts.graph_core import MESSAGE, TRADE, TemporalMultigraph
from tests.conftest import DAY, T0, build_graph, message, random_graph, trade


def naive_census(g):
    """全ての順序付き三つ組を調べる"""
    view = g.full
    legs = {}
    for row in view.edges.itertuples(index=False):
        is_trade = row.kind == TRADE
        # (中央, 相手) から見たコード
        legs.setdefault((row.dst, row.src), []).append((LEG_TRADE_IN if is_trade else LEG_MSG_IN, row.first_time))
        legs.setdefault((row.src, row.dst), []).append((LEG_TRADE_OUT if is_trade else LEG_MSG_OUT, row.first_time))

    pair_events = {}
    for ev in view.events.itertuples(index=False):
        key = (min(ev.src, ev.dst), max(ev.src, ev.dst))
        pair_events.setdefault(key, []).append((ev.timestamp, ev.kind, ev.src, ev.dst))

    instances = np.zeros(N_CONFIGS, dtype=int)
    closed = np.zeros((N_CONFIGS, 4), dtype=int)
    middles = [set() for _ in range(N_CONFIGS)]
    n = g.n_nodes
    for x in range(n):
        for u in range(n):
            for v in range(n):
                if len({u, x, v}) < 3:
                    continue
                for c1, t1 in legs.get((x, u), []):
                    for c2, t2 in legs.get((x, v), []):
                        if t1 >= t2:
                            continue
                        cfg = 4 * c1 + c2
                        instances[cfg] += 1
                        middles[cfg].add(x)
                        later = sorted(e for e in pair_events.get((min(u, v), max(u, v)), []) if e[0] > t2)
                        if not later:
                            continue
                        _, kind, src, _ = later[0]
                        outgoing = src == u
                        if kind == TRADE:
                            closed[cfg, CLOSING_TYPES.index("t_o" if outgoing else "t_i")] += 1
                        else:
                            closed[cfg, CLOSING_TYPES.index("m_o" if outgoing else "m_i")] += 1
    return instances, np.array([len(m) for m in middles]), closed


class TestRoles:
    def test_definitions(self):
        assert role_of_x(config_id(LEG_TRADE_OUT, LEG_MSG_OUT)) == BUYER
        assert role_of_x(config_id(LEG_TRADE_IN, LEG_TRADE_IN)) == SELLER
        assert role_of_x(config_id(LEG_MSG_IN, LEG_MSG_OUT)) == AMBIGUOUS
        assert role_of_x(config_id(LEG_TRADE_IN, LEG_TRADE_OUT)) == AMBIGUOUS

    def test_every_config_consistent_with_trade_direction(self):
        for cfg in range(N_CONFIGS):
            legs = {cfg // 4, cfg % 4}
            role = role_of_x(cfg)
            if role == BUYER:
                assert LEG_TRADE_OUT in legs and LEG_TRADE_IN not in legs
            elif role == SELLER:
                assert LEG_TRADE_IN in legs and LEG_TRADE_OUT not in legs

    def test_role_summary(self):
        def row(cfg, instances, p, role):
            return CensusRow(config=cfg, instances=instances, unique_x=1, p_close_x100=p, p_trade_given_close=None,
                             p_msg_given_close=None, s_t_o=None, s_t_i=None, x_role=role)

        summary = role_summary([
            row(0, 4, 10.0, BUYER), row(1, 6, 30.0, BUYER), row(2, 0, 0.0, BUYER),
            row(3, 20, 50.0, SELLER), row(4, 99, 90.0, AMBIGUOUS),
        ])
        assert summary["buyer_mean_p_close_x100"] == pytest.approx(20.0)
        assert summary["seller_mean_p_close_x100"] == pytest.approx(50.0)
        assert (summary["buyer_instances"], summary["seller_instances"]) == (10, 20)
        assert summary["seller_to_buyer_instance_ratio"] == pytest.approx(2.0)
        assert role_summary([])["seller_to_buyer_instance_ratio"] is None


class TestCensus:
    def test_three_node_example(self, triangle_graph):
        rows = config_census(triangle_graph, threads=1)
        assert len(rows) == 16
        closed = [r for r in rows if r.closures]
        assert len(closed) == 1
        row = closed[0]
        # U=S1, X=B1, V=B2: 第1脚は B1 の購入、第2脚は B1 のメッセージ
        assert row.config == config_id(LEG_TRADE_OUT, LEG_MSG_OUT)
        assert row.x_role == BUYER
        assert row.instances == 1
        assert row.n_t_i == 1
        assert row.p_close_x100 == pytest.approx(100.0)
        assert row.p_trade_given_close == 1.0
        assert row.p_msg_given_close == 0.0
        assert sum(r.instances for r in rows) == 3

    def test_empty_graph(self):
        rows = config_census(build_graph([], window=(T0, T0)), threads=1)
        assert len(rows) == 16
        assert all(r.instances == 0 and r.closures == 0 and r.p_close_x100 == 0.0 for r in rows)
        assert all(r.p_trade_given_close is None for r in rows)

    def test_ties_are_not_instances(self):
        g = build_graph([message(0, 1, T0 + 5), message(0, 2, T0 + 5), message(1, 2, T0 + 5)])
        assert sum(r.instances for r in config_census(g, threads=1)) == 0

    def test_closure_must_follow_second_leg(self):
        g = build_graph([message(1, 2, T0 + 1), message(0, 1, T0 + 2), message(0, 2, T0 + 3)])
        rows = config_census(g, threads=1)
        wedge = rows[config_id(LEG_MSG_OUT, LEG_MSG_OUT)]
        assert wedge.instances == 1
        assert wedge.closures == 0

    def test_earliest_later_event_decides_type(self):
        g = build_graph([
            message(0, 1, T0 + 1), message(0, 2, T0 + 2),
            message(2, 1, T0 + 5), trade(1, 2, T0 + 6),
        ])
        row = config_census(g, threads=1)[config_id(LEG_MSG_OUT, LEG_MSG_OUT)]
        assert row.closures == 1
        # U=1, V=2 で V→U のメッセージ
        assert row.n_m_i == 1

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_naive_oracle(self, seed):
        g = random_graph(seed, n_nodes=10 + seed % 7, n_events=30 + seed % 20)
        instances, unique_x, closed = naive_census(g)
        rows = config_census(g, threads=1)
        assert [r.instances for r in rows] == instances.tolist()
        assert [r.unique_x for r in rows] == unique_x.tolist()
        assert [[r.n_m_o, r.n_m_i, r.n_t_o, r.n_t_i] for r in rows] == closed.tolist()

    def test_conservation(self):
        rows = config_census(random_graph(5, n_nodes=20, n_events=150), threads=1)
        for r in rows:
            assert r.closures == r.n_m_o + r.n_m_i + r.n_t_o + r.n_t_i
            assert 0.0 <= r.p_close_x100 <= 100.0
            if r.closures:
                assert r.p_trade_given_close + r.p_msg_given_close == pytest.approx(1.0)

    def test_thread_count_does_not_change_rows(self):
        g = random_graph(21, n_nodes=25, n_events=200)
        assert rows_to_frame(config_census(g, threads=1)).equals(rows_to_frame(config_census(g, threads=3)))

    def test_frame_columns(self, triangle_graph):
        frame = rows_to_frame(config_census(triangle_graph, threads=1))
        assert list(frame.columns) == CENSUS_COLUMNS
        assert frame["config_id"].tolist() == list(range(16))


class TestBaselines:
    def test_baseline_counts_aggregated_out_edges(self):
        g = build_graph([
            trade(0, 1, T0), trade(0, 1, T0 + 1), trade(0, 2, T0 + 2),
            message(0, 3, T0 + 3), message(0, 4, T0 + 4), message(3, 0, T0 + 5),
        ])
        b = generative_baseline(g, 0)
        assert (b.trade_out, b.message_out) == (2, 2)
        assert b.p_t == pytest.approx(0.5)

    def test_message_only_and_undefined(self):
        g = build_graph([message(0, 1, T0), message(0, 2, T0 + 1)])
        assert generative_baseline(g, 0).p_t == 0.0
        assert not generative_baseline(g, 1).defined

    def test_random_graph_matches_recount(self):
        g = random_graph(9, n_nodes=40, n_events=200)
        baselines = generative_baselines(g)
        for node in range(g.n_nodes):
            edges = g.edges[g.edges["src"] == node]
            t = int((edges["kind"] == TRADE).sum())
            m = int((edges["kind"] == MESSAGE).sum())
            expected = t / (t + m) if t + m else None
            assert baselines[node].p_t == (pytest.approx(expected) if expected is not None else None)


class TestSurprise:
    def _tally(self, creators):
        tally = CensusTally()
        tally.creators_o[0] = Counter(creators)
        return tally

    def test_formula(self):
        baselines = generative_baselines(build_graph([
            trade(0, 5, T0), message(0, 6, T0 + 1),
            trade(1, 5, T0 + 2), message(1, 6, T0 + 3), message(1, 7, T0 + 4), message(1, 8, T0 + 5),
        ]))
        # 作成者0: 閉包2件（うち取引1件, p=0.5）, 作成者1: 閉包2件（取引2件, p=0.25）
        tally = self._tally({(0, True): 1, (0, False): 1, (1, True): 2})
        s_o, s_i = surprise(tally, baselines)[0]
        expected = (3 - (2 * 0.5 + 2 * 0.25)) / math.sqrt(2 * 0.25 + 2 * 0.25 * 0.75)
        assert s_o == pytest.approx(expected)
        assert s_i == 0.0

    def test_zero_variance(self):
        baselines = generative_baselines(build_graph([message(0, 1, T0), trade(2, 1, T0 + 1)]))
        assert surprise(self._tally({(0, False): 3}), baselines)[0][0] == 0.0
        assert surprise(self._tally({(0, True): 1}), baselines)[0][0] is None

    def test_undefined_creators_excluded(self):
        baselines = generative_baselines(build_graph([message(0, 1, T0), trade(0, 2, T0 + 1)]))
        with_undefined = self._tally({(0, True): 1, (1, True): 4})
        without = self._tally({(0, True): 1})
        assert surprise(with_undefined, baselines)[0] == surprise(without, baselines)[0]

    @pytest.mark.slow
    def test_null_calibration(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, size=50)
        baselines = {i: GenerativeBaseline(i, float(p[i])) for i in range(50)}
        scores = []
        for seed in range(200):
            run = np.random.default_rng(seed)
            creators = Counter()
            for node in run.integers(0, 50, size=400).tolist():
                creators[(node, bool(run.random() < p[node]))] += 1
            tally = self._tally(creators)
            scores.append(surprise(tally, baselines)[0][0])
        scores = np.array(scores)
        assert np.mean(np.abs(scores) <= 4) >= 0.99
        assert -0.5 <= scores.mean() <= 0.5
        assert 0.5 <= scores.var() <= 2.0


class TestScale:
    @pytest.mark.slow
    def test_large_zipf_graph(self):
        rng = np.random.default_rng(0)
        n, m = 100_000, 1_000_000
        weights = 1.0 / np.arange(1, n + 1)
        weights /= weights.sum()
        src = rng.choice(n, size=m, p=weights)
        dst = rng.choice(n, size=m, p=weights)
        keep = src != dst
        src, dst = src[keep], dst[keep]
        is_trade = rng.random(len(src)) < 0.5
        events = pd.DataFrame({
            "kind": np.where(is_trade, TRADE, MESSAGE),
            "src": src, "dst": dst,
            "timestamp": T0 + rng.integers(0, 30 * DAY, size=len(src)),
            "product_id": np.where(is_trade, "p", None),
            "category_id": np.where(is_trade, 1, np.nan),
            "price": np.where(is_trade, 10.0, np.nan),
            "quantity": np.where(is_trade, 1, np.nan),
        })
        g = TemporalMultigraph(events, None, (T0, T0 + 30 * DAY), n_nodes=n)

        start = time.perf_counter()
        single = rows_to_frame(config_census(g, threads=1))
        assert time.perf_counter() - start < 60
        assert resource.getrusage(resource.RUSAGE_SELF).ru_maxrss < 4 * 1024 * 1024
        assert single.equals(rows_to_frame(config_census(g, threads=8)))
