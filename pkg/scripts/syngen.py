#!/usr/bin/env python3
"""
合成データ生成（シード固定で再現可能）

生成するもの:
- events.csv / contacts.csv: 買い手 → 売り手 の取引（人気はべき分布）、買い手同士の友人メッセージ（同質性あり）、
  取引前後の買い手・売り手間メッセージ
- 情報伝播の埋め込み: 取引のあと友人に知らせ（メッセージ）、確率 p_plant で友人が Δ 以内に同じ売り手から買う
- clusters.csv / ratings.csv: 乖離 d = a·(r/100)^b + c + ノイズ に従う出品価格
- choice_clusters.csv: 購買先を exp(w*·z) に比例して選ぶ
- truth.json: 埋め込んだパラメータ

ノードID: 買い手 0..n_buyers-1、売り手 n_buyers..n_buyers+n_sellers-1
"""

import heapq
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.choice import FEATURE_NAMES, DecisionInstance, FeatureContext
from scripts.graph_core import (
    CONTACT_COLUMNS, EVENT_COLUMNS, MESSAGE, SECONDS_PER_DAY, TRADE, TemporalMultigraph,
)
from scripts.trust import CLUSTER_COLUMNS, RATING_COLUMNS
from scripts.utils.config import get_syngen_config
from scripts.utils.errors import ConfigError
from scripts.utils.files import write_json
from scripts.utils.log import get_logger

logger = get_logger(__name__)

CHOICE_FILE_COLUMNS = ["cluster_id", "buyer", "seller", "purchase_date", "price", "rating_percent",
                       "historical_sold", "inventory_sold", "insurance", "category_id"]

DEFAULT_CHOICE_WEIGHTS = {"bs_message_volume": 1.5, "message_rank": -1.0, "days_since_message": -0.5}


@dataclass
class SynthConfig:
    n_buyers: int = 2000
    n_sellers: int = 200
    popularity_exponent: float = 1.0
    trades_per_buyer: float = 2.0
    n_categories: int = 5
    products_per_seller: int = 3
    friends_per_buyer: int = 4
    n_communities: int = 20
    homophily: float = 0.8
    base_message_rate: float = 3.0
    p_plant: float = 0.05
    plant_delta_days: float = 2.0
    burst_messages: int = 3
    category_p_plant: Dict[int, float] = field(default_factory=dict)
    bs_message_rate: float = 2.0
    buyer_buyer_trade_rate: float = 0.0
    contact_prob: float = 0.5
    bs_contact_prob: float = 0.1
    rating_scale: float = 3.0
    trust_a: float = 5.0
    trust_b: float = 80.0
    trust_c: float = -2.0
    trust_noise: float = 0.5
    n_trust_clusters: int = 600
    n_choice_clusters: int = 80
    choice_buyers_per_cluster: int = 8
    choice_msg_pool_prob: float = 0.9
    choice_weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CHOICE_WEIGHTS))
    window_days: int = 58
    t_start: int = 1251763200
    seed: int = 0

    @property
    def t_end(self) -> int:
        return self.t_start + self.window_days * SECONDS_PER_DAY

    def validate(self):
        if self.n_buyers < 2 or self.n_sellers < 2:
            raise ConfigError("n_buyers と n_sellers は2以上です")
        if self.window_days <= 0:
            raise ConfigError("window_days は正の値です")
        probabilities = {
            "homophily": self.homophily, "p_plant": self.p_plant,
            "buyer_buyer_trade_rate": self.buyer_buyer_trade_rate, "contact_prob": self.contact_prob,
            "bs_contact_prob": self.bs_contact_prob, "choice_msg_pool_prob": self.choice_msg_pool_prob,
        }
        probabilities.update({f"category_p_plant[{k}]": v for k, v in self.category_p_plant.items()})
        for name, value in probabilities.items():
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} は0〜1です: {value}")
        for name in ("trades_per_buyer", "base_message_rate", "bs_message_rate", "rating_scale",
                     "trust_noise", "plant_delta_days"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} は0以上です")
        any_plant = self.p_plant > 0 or any(v > 0 for v in self.category_p_plant.values())
        if any_plant and self.friends_per_buyer == 0:
            raise ConfigError("p_plant > 0 には友人（friends_per_buyer > 0）が必要です")
        unknown = set(self.choice_weights) - set(FEATURE_NAMES)
        if unknown:
            raise ConfigError(f"choice_weights に不明な特徴量があります: {sorted(unknown)}")
        if self.products_per_seller < 1 or self.n_categories < 1:
            raise ConfigError("products_per_seller と n_categories は1以上です")

    def p_plant_for(self, category: int) -> float:
        return self.category_p_plant.get(category, self.p_plant)


# ============================================================
# 設定ファイル
# ============================================================

def _parse_map(text: str, key_type, value_type) -> dict:
    result = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, _, value = item.partition(":")
        result[key_type(key.strip())] = value_type(value.strip())
    return result


def _convert(name: str, raw: str, current):
    try:
        if name == "category_p_plant":
            return _parse_map(raw, int, float)
        if name == "choice_weights":
            return _parse_map(raw, str, float)
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{name} の値が不正です: {raw} ({e})")
    return raw


def load_synth_config(path=None, **overrides) -> SynthConfig:
    """
    key=value 形式の設定ファイルを読む（# 以降はコメント）

    settings.yml の syngen セクション → ファイル → overrides の順に上書きする。
    未知のキーは ConfigError。
    """
    cfg = SynthConfig()
    known = {f.name for f in fields(SynthConfig)}

    def _apply(name, value, source):
        if name not in known:
            raise ConfigError(f"{source}: 未知のキーです: {name}")
        if isinstance(value, str):
            value = _convert(name, value, getattr(cfg, name))
        setattr(cfg, name, value)

    for name, value in get_syngen_config().items():
        _apply(name, value, "settings.yml")

    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: key=value 形式ではありません")
                key, value = (s.strip() for s in line.split("=", 1))
                _apply(key, value, f"{path}:{lineno}")

    for name, value in overrides.items():
        if value is not None:
            _apply(name, value, "引数")
    cfg.validate()
    return cfg


# ============================================================
# 生成
# ============================================================

@dataclass
class SyntheticDataset:
    config: SynthConfig
    events: pd.DataFrame
    contacts: pd.DataFrame
    clusters: pd.DataFrame
    ratings: pd.DataFrame
    choice_clusters: pd.DataFrame
    truth: dict

    def graph(self) -> TemporalMultigraph:
        """ID を詰め直さずにグラフを作る"""
        cfg = self.config
        return _graph_from(self.events, self.contacts, cfg)


def _graph_from(events: pd.DataFrame, contacts: pd.DataFrame, cfg: SynthConfig) -> TemporalMultigraph:
    return TemporalMultigraph(events, contacts, (cfg.t_start, cfg.t_end), n_nodes=cfg.n_buyers + cfg.n_sellers)


def seller_popularity(cfg: SynthConfig) -> np.ndarray:
    """売り手 j の人気 ∝ (j + 1)^(-α)"""
    weights = np.power(np.arange(1, cfg.n_sellers + 1, dtype=float), -cfg.popularity_exponent)
    return weights / weights.sum()


class _Generator:
    """イベントを時刻順に積み上げる"""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.rows: List[tuple] = []
        self.counts = {"base_trades": 0, "planted_trades": 0, "tell_messages": 0,
                       "burst_messages": 0, "friend_messages": 0, "bs_messages": 0}

    def message(self, src: int, dst: int, t: int):
        self.rows.append((MESSAGE, src, dst, int(t), None, None, None, None))

    def trade(self, buyer: int, seller: int, t: int, product: Tuple[str, int, float], quantity: int):
        self.rows.append((TRADE, buyer, seller, int(t), product[0], product[1], product[2], quantity))

    # --- 構造 ---

    def friendships(self) -> List[Tuple[int, int]]:
        cfg, rng = self.cfg, self.rng
        nb = cfg.n_buyers
        community = rng.integers(0, max(cfg.n_communities, 1), size=nb)
        members: Dict[int, np.ndarray] = {c: np.flatnonzero(community == c) for c in np.unique(community)}
        pairs = set()
        for b in range(nb):
            for _ in range(cfg.friends_per_buyer):
                group = members[community[b]]
                if rng.random() < cfg.homophily and len(group) > 1:
                    f = int(group[rng.integers(0, len(group))])
                else:
                    f = int(rng.integers(0, nb))
                if f != b:
                    pairs.add((min(b, f), max(b, f)))
        return sorted(pairs)

    def catalogs(self) -> Dict[int, List[Tuple[str, int, float]]]:
        cfg, rng = self.cfg, self.rng
        catalogs = {}
        for j in range(cfg.n_sellers):
            seller = cfg.n_buyers + j
            category = int(rng.integers(0, cfg.n_categories))
            catalogs[seller] = [
                (f"p{seller}_{k}", category, float(np.round(np.exp(rng.normal(np.log(20.0), 1.0)), 2)) or 0.01)
                for k in range(cfg.products_per_seller)
            ]
        return catalogs

    def buyer_seller_messages(self, buyer: int, seller: int, t: int):
        """取引前後のメッセージ（当日が多く、前より後が多い）"""
        cfg, rng = self.cfg, self.rng
        for _ in range(int(rng.poisson(cfg.bs_message_rate))):
            u = rng.random()
            if u < 0.6:
                offset = 0
            elif u < 0.9:
                offset = int(rng.integers(1, 4))
            else:
                offset = -int(rng.integers(1, 4))
            day_start = t - (t - cfg.t_start) % SECONDS_PER_DAY + offset * SECONDS_PER_DAY
            tm = day_start + int(rng.integers(0, SECONDS_PER_DAY))
            if cfg.t_start <= tm <= cfg.t_end:
                src, dst = (buyer, seller) if rng.random() < 0.6 else (seller, buyer)
                self.message(src, dst, tm)
                self.counts["bs_messages"] += 1

    def plant(self, b1: int, s1: int, t1: int, product, friends: List[int], queue: list, seq: int) -> int:
        """
        友人への推薦を埋め込む

        確率 p_plant で B1 が友人 f に知らせ（t1 の1時間以内）、知らせと購入の間にバーストを送り、
        f が t1 + plant_delta_days 以内に同じ売り手から買う。埋め込まなかった取引ではメッセージを送らない。
        """
        cfg, rng = self.cfg, self.rng
        p = cfg.p_plant_for(product[1])
        delta = int(cfg.plant_delta_days * SECONDS_PER_DAY)
        if p <= 0 or delta <= 3600 + 60:
            return seq
        for f in friends:
            if f == s1 or rng.random() >= p:
                continue
            tell = t1 + int(rng.integers(60, 3600))
            tp = tell + int(rng.integers(60, delta - 3600))
            if tp > cfg.t_end:
                continue
            self.message(b1, f, tell)
            self.counts["tell_messages"] += 1
            for _ in range(cfg.burst_messages):
                src, dst = (b1, f) if rng.random() < 0.5 else (f, b1)
                self.message(src, dst, rng.integers(tell + 1, tp))
                self.counts["burst_messages"] += 1
            heapq.heappush(queue, (tp, seq, f, s1, product, True))
            seq += 1
            self.counts["planted_trades"] += 1
        return seq

    def run(self):
        cfg, rng = self.cfg, self.rng
        nb = cfg.n_buyers
        friend_pairs = self.friendships()
        friends: Dict[int, List[int]] = {b: [] for b in range(nb)}
        for a, b in friend_pairs:
            friends[a].append(b)
            friends[b].append(a)

        for a, b in friend_pairs:
            for _ in range(int(rng.poisson(cfg.base_message_rate))):
                src, dst = (a, b) if rng.random() < 0.5 else (b, a)
                self.message(src, dst, rng.integers(cfg.t_start, cfg.t_end + 1))
                self.counts["friend_messages"] += 1

        catalogs = self.catalogs()
        popularity = seller_popularity(cfg)
        generic = ("generic", 0, 10.0)

        queue: List[tuple] = []
        seq = 0
        for b in range(nb):
            for _ in range(int(rng.poisson(cfg.trades_per_buyer))):
                t = int(rng.integers(cfg.t_start, cfg.t_end + 1))
                if cfg.buyer_buyer_trade_rate > 0 and rng.random() < cfg.buyer_buyer_trade_rate:
                    seller = int(rng.integers(0, nb - 1))
                    seller = seller + 1 if seller >= b else seller
                    product = generic
                else:
                    seller = nb + int(rng.choice(cfg.n_sellers, p=popularity))
                    product = catalogs[seller][int(rng.integers(0, cfg.products_per_seller))]
                heapq.heappush(queue, (t, seq, b, seller, product, False))
                seq += 1
                self.counts["base_trades"] += 1

        contact_pairs = set()
        while queue:
            t1, _, b1, s1, product, _planted = heapq.heappop(queue)
            self.trade(b1, s1, t1, product, 1 + int(rng.poisson(0.3)))
            self.buyer_seller_messages(b1, s1, t1)
            if rng.random() < cfg.bs_contact_prob:
                contact_pairs.add((min(b1, s1), max(b1, s1)))

            seq = self.plant(b1, s1, t1, product, friends.get(b1, []), queue, seq)

        for a, b in friend_pairs:
            if rng.random() < cfg.contact_prob:
                contact_pairs.add((a, b))
        self.contact_pairs = sorted(contact_pairs)


def _events_frame(rows: List[tuple]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    df = df.sort_values(["timestamp", "kind", "src", "dst"], kind="mergesort").reset_index(drop=True)
    return df


def _ratings(cfg: SynthConfig, rng: np.random.Generator) -> pd.DataFrame:
    sellers = np.arange(cfg.n_buyers, cfg.n_buyers + cfg.n_sellers)
    ratings = np.clip(100.0 - rng.exponential(cfg.rating_scale, size=len(sellers)), 50.0, 100.0)
    return pd.DataFrame({"seller": sellers, "rating_percent": np.round(ratings, 1)})


def _trust_clusters(cfg: SynthConfig, ratings: pd.DataFrame, rng: np.random.Generator) -> pd.DataFrame:
    """乖離 d(r) = a·(r/100)^b + c + N(0, σ) の出品価格"""
    rating_of = dict(zip(ratings["seller"], ratings["rating_percent"]))
    sellers = ratings["seller"].to_numpy()
    rows = []
    for cid in range(cfg.n_trust_clusters):
        k = int(rng.integers(2, min(10, len(sellers)) + 1))
        chosen = np.sort(rng.choice(sellers, size=k, replace=False))
        base = float(np.exp(rng.normal(np.log(30.0), 0.8)))
        for j, s in enumerate(chosen):
            r = rating_of[s]
            d = cfg.trust_a * (r / 100.0) ** cfg.trust_b + cfg.trust_c + rng.normal(0.0, cfg.trust_noise)
            price = max(round(base * (1.0 + max(d, -90.0) / 100.0), 2), 0.01)
            rows.append((f"c{cid}", int(s), f"i{cid}_{j}", price))
    return pd.DataFrame(rows, columns=CLUSTER_COLUMNS)


def _choice_clusters(cfg: SynthConfig, g: TemporalMultigraph, ratings: pd.DataFrame,
                     rng: np.random.Generator) -> Tuple[pd.DataFrame, dict]:
    """候補の特徴量 z（全候補で標準化）から exp(w*·z) に比例して購買先を選ぶ"""
    rating_of = dict(zip(ratings["seller"], ratings["rating_percent"]))
    sellers = ratings["seller"].to_numpy()
    nb = cfg.n_buyers

    events = g.events
    msgs = events[(events["kind"] == MESSAGE)]
    bs = msgs[(msgs["src"] < nb) & (msgs["dst"] >= nb)]
    sb = msgs[(msgs["src"] >= nb) & (msgs["dst"] < nb)]
    contact_msgs = pd.DataFrame({
        "buyer": np.concatenate([bs["src"].to_numpy(), sb["dst"].to_numpy()]),
        "seller": np.concatenate([bs["dst"].to_numpy(), sb["src"].to_numpy()]),
        "t": np.concatenate([bs["timestamp"].to_numpy(), sb["timestamp"].to_numpy()]),
    })

    context = FeatureContext(g)
    plans = []
    half = cfg.t_start + (cfg.window_days // 2) * SECONDS_PER_DAY
    for cid in range(cfg.n_choice_clusters):
        k = int(rng.integers(2, min(10, len(sellers)) + 1))
        chosen = np.sort(rng.choice(sellers, size=k, replace=False))
        base = float(np.exp(rng.normal(np.log(30.0), 0.8)))
        listing = {
            int(s): (round(base * (1.0 + rng.normal(0.0, 0.1)), 2) or 0.01, rating_of[s],
                     float(rng.poisson(50)), float(rng.poisson(5)), int(rng.random() < 0.5))
            for s in chosen
        }
        category = int(rng.integers(0, cfg.n_categories))
        used = set()
        for _ in range(cfg.choice_buyers_per_cluster):
            date = int(rng.integers(half, cfg.t_end + 1))
            day_start = date - (date - cfg.t_start) % SECONDS_PER_DAY
            pool = contact_msgs[(contact_msgs["t"] < day_start) & contact_msgs["seller"].isin(chosen)]
            pool_buyers = np.setdiff1d(np.unique(pool["buyer"].to_numpy()), np.array(sorted(used), dtype=np.int64))
            if len(pool_buyers) and rng.random() < cfg.choice_msg_pool_prob:
                buyer = int(pool_buyers[rng.integers(0, len(pool_buyers))])
            else:
                buyer = int(rng.integers(0, nb))
            if buyer in used:
                continue
            used.add(buyer)
            d = DecisionInstance(
                cluster_id=f"k{cid}", buyer=str(buyer), purchase_date=date,
                true_sellers=(), candidates=tuple(str(int(s)) for s in chosen),
                prices=tuple(listing[int(s)][0] for s in chosen),
                ratings=tuple(listing[int(s)][1] for s in chosen),
                historical_sold=tuple(listing[int(s)][2] for s in chosen),
                inventory_sold=tuple(listing[int(s)][3] for s in chosen),
                insurance=tuple(listing[int(s)][4] for s in chosen),
                category_id=category,
            )
            plans.append((d, listing, context.extract(d)))

    truth = {"choice_weights": dict(cfg.choice_weights), "decisions": len(plans)}
    if not plans:
        return pd.DataFrame(columns=CHOICE_FILE_COLUMNS), truth

    stacked = np.vstack([x for _, _, x in plans])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    w = np.array([cfg.choice_weights.get(name, 0.0) for name in FEATURE_NAMES])

    rows = []
    for d, listing, x in plans:
        utility = ((x - mean) / std) @ w
        prob = np.exp(utility - utility.max())
        prob /= prob.sum()
        pick = d.candidates[int(rng.choice(d.k, p=prob))]
        price, rating, sold, inventory, insurance = listing[int(pick)]
        rows.append((d.cluster_id, d.buyer, pick, d.purchase_date, price, rating, sold, inventory,
                     insurance, d.category_id))
    truth["feature_mean"] = dict(zip(FEATURE_NAMES, mean.tolist()))
    truth["feature_std"] = dict(zip(FEATURE_NAMES, std.tolist()))
    return pd.DataFrame(rows, columns=CHOICE_FILE_COLUMNS), truth


def generate_dataset(cfg: SynthConfig) -> SyntheticDataset:
    """設定からデータセットを作る（ファイルには書かない）"""
    cfg.validate()
    gen = _Generator(cfg)
    gen.run()
    events = _events_frame(gen.rows)
    contacts = pd.DataFrame(gen.contact_pairs, columns=CONTACT_COLUMNS)

    rng = gen.rng
    ratings = _ratings(cfg, rng)
    clusters = _trust_clusters(cfg, ratings, rng)
    g = _graph_from(events, contacts, cfg)
    choice_clusters, choice_truth = _choice_clusters(cfg, g, ratings, rng)

    config_dict = asdict(cfg)
    config_dict["category_p_plant"] = {str(k): v for k, v in cfg.category_p_plant.items()}
    truth = {
        "config": config_dict,
        "window": [cfg.t_start, cfg.t_end],
        "counts": dict(gen.counts, events=len(events), contacts=len(contacts)),
        "info_passing": {"p_plant": cfg.p_plant, "category_p_plant": config_dict["category_p_plant"],
                         "delta_days": cfg.plant_delta_days, "burst_messages": cfg.burst_messages},
        "trust": {"a": cfg.trust_a, "b": cfg.trust_b, "c": cfg.trust_c, "noise": cfg.trust_noise},
        "popularity_exponent": cfg.popularity_exponent,
        "choice": choice_truth,
    }
    logger.info("合成データ: イベント %d 件, 連絡先 %d 件, 埋め込み購入 %d 件",
                len(events), len(contacts), gen.counts["planted_trades"])
    return SyntheticDataset(cfg, events, contacts, clusters, ratings, choice_clusters, truth)


def _format_events(events: pd.DataFrame) -> pd.DataFrame:
    """CSV 用に整形（メッセージ行の取引列は空欄、価格は小数2桁）"""
    out = events.copy()
    is_trade = out["kind"] == TRADE
    out["category_id"] = [str(int(v)) if t else "" for v, t in zip(out["category_id"], is_trade)]
    out["quantity"] = [str(int(v)) if t else "" for v, t in zip(out["quantity"], is_trade)]
    out["price"] = [f"{v:.2f}" if t else "" for v, t in zip(out["price"], is_trade)]
    out["product_id"] = out["product_id"].where(is_trade, "")
    return out


def generate(cfg: SynthConfig, out_dir) -> Dict[str, Path]:
    """
    データセットをファイルに書き出す

    Returns:
        ファイル名 → パス
    """
    data = generate_dataset(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "events.csv": out_dir / "events.csv",
        "contacts.csv": out_dir / "contacts.csv",
        "clusters.csv": out_dir / "clusters.csv",
        "ratings.csv": out_dir / "ratings.csv",
        "choice_clusters.csv": out_dir / "choice_clusters.csv",
        "truth.json": out_dir / "truth.json",
    }
    _format_events(data.events).to_csv(paths["events.csv"], index=False, encoding="utf-8")
    data.contacts.to_csv(paths["contacts.csv"], index=False, encoding="utf-8")
    data.clusters.to_csv(paths["clusters.csv"], index=False, encoding="utf-8", float_format="%.2f")
    data.ratings[RATING_COLUMNS].to_csv(paths["ratings.csv"], index=False, encoding="utf-8", float_format="%.1f")
    data.choice_clusters.to_csv(paths["choice_clusters.csv"], index=False, encoding="utf-8")
    write_json(data.truth, paths["truth.json"])
    return paths


def popularity_ks(events: pd.DataFrame, cfg: SynthConfig) -> float:
    """売り手の取引シェアと設定したべき分布の KS 距離（売り手の人気順で累積）"""
    trades = events[events["kind"] == TRADE]
    seller_idx = trades["dst"].to_numpy(dtype=np.int64) - cfg.n_buyers
    seller_idx = seller_idx[(seller_idx >= 0) & (seller_idx < cfg.n_sellers)]
    if len(seller_idx) == 0:
        return 1.0
    empirical = np.bincount(seller_idx, minlength=cfg.n_sellers) / len(seller_idx)
    return float(np.max(np.abs(np.cumsum(empirical) - np.cumsum(seller_popularity(cfg)))))
