"""
テスト共通のフィクスチャと小さなグラフの組み立て補助
"""

import numpy as np
import pandas as pd
import pytest

from scripts.graph_core import EVENT_COLUMNS, MESSAGE, SECONDS_PER_DAY, TRADE, TemporalMultigraph
from scripts.syngen import SynthConfig, generate_dataset

T0 = 1_250_000_000
DAY = SECONDS_PER_DAY


def trade(buyer, seller, t, product="p1", category=1, price=10.0, quantity=1) -> dict:
    return {"kind": TRADE, "src": buyer, "dst": seller, "timestamp": t, "product_id": product,
            "category_id": category, "price": price, "quantity": quantity}


def message(src, dst, t) -> dict:
    return {"kind": MESSAGE, "src": src, "dst": dst, "timestamp": t}


def build_graph(events, contacts=(), window=None, n_nodes=None) -> TemporalMultigraph:
    """イベント辞書のリストからグラフを作る（既定の観測期間は T0 から30日）"""
    frame = pd.DataFrame(list(events), columns=EVENT_COLUMNS)
    contact_frame = pd.DataFrame(list(contacts), columns=["u", "v"])
    window = window or (T0, T0 + 30 * DAY)
    return TemporalMultigraph(frame, contact_frame, window, n_nodes=n_nodes)


def random_graph(seed: int, n_nodes: int = 12, n_events: int = 40, n_contacts: int = 8) -> TemporalMultigraph:
    """時刻が重複しない小さなランダムグラフ"""
    rng = np.random.default_rng(seed)
    times = T0 + rng.choice(30 * DAY, size=n_events, replace=False)
    events = []
    for t in times.tolist():
        a, b = rng.choice(n_nodes, size=2, replace=False).tolist()
        if rng.random() < 0.4:
            events.append(trade(a, b, t, price=float(rng.integers(1, 100))))
        else:
            events.append(message(a, b, t))
    contacts = set()
    while len(contacts) < n_contacts:
        a, b = rng.choice(n_nodes, size=2, replace=False).tolist()
        contacts.add((min(a, b), max(a, b)))
    return build_graph(events, sorted(contacts), n_nodes=n_nodes)


def write_csvs(tmp_path, events, contacts=()):
    """events.csv / contacts.csv をCSVに書き出してパスを返す"""
    frame = pd.DataFrame(list(events), columns=EVENT_COLUMNS)
    frame["category_id"] = frame["category_id"].astype("Int64")
    frame["quantity"] = frame["quantity"].astype("Int64")
    events_path = tmp_path / "events.csv"
    contacts_path = tmp_path / "contacts.csv"
    frame.to_csv(events_path, index=False)
    pd.DataFrame(list(contacts), columns=["u", "v"]).to_csv(contacts_path, index=False)
    return events_path, contacts_path


@pytest.fixture
def triangle_graph():
    """B1=0, S1=1, B2=2: B1 が S1 から買い、B1→B2 にメッセージ、B2 が S1 から買う"""
    return build_graph([
        trade(0, 1, T0 + 1 * DAY),
        message(0, 2, T0 + 2 * DAY),
        trade(2, 1, T0 + 3 * DAY),
    ])


@pytest.fixture(scope="session")
def small_synth_config():
    return SynthConfig(n_buyers=300, n_sellers=40, trades_per_buyer=2.0, friends_per_buyer=3,
                       n_trust_clusters=200, n_choice_clusters=40, choice_buyers_per_cluster=6,
                       window_days=30, seed=7)


@pytest.fixture(scope="session")
def small_synth(small_synth_config):
    return generate_dataset(small_synth_config)
