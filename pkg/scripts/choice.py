#!/usr/bin/env python3
"""
購買先予測（どの売り手から買うか）

処理の流れ:
1. 商品クラスタ（売り手2〜10人）から購買判断を作る（買い手 × 購入日 ごとに1件）
2. 購入日前日の終わりまでのスナップショットで23個の特徴量を計算
3. 学習用クラスタで z-score を当て、ペアごとのヒンジ損失で線形ランカーを学習
4. テスト用クラスタで P@1 / 平均順位 / 平均逆順位 を評価（ベースライン: Random, MinPrice, MostMsg）

分割はクラスタ単位（sha256(f"{split_seed}:{cluster_id}") で決定）。
"""

import hashlib
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.preprocessing import StandardScaler

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.graph_core import (
    CONTACT, MESSAGE, SECONDS_PER_DAY, TRADE,
    TemporalMultigraph, check_rows, clustering_coefficient, is_integral, pagerank, read_csv_checked,
)
from scripts.utils.config import get_choice_config, get_feature_sets
from scripts.utils.errors import FitError, ValidationError
from scripts.utils.log import get_logger

logger = get_logger(__name__)

FEATURE_NAMES = [
    # メタデータ
    "price_rank",
    "rating_rank",
    "historical_sold_rank",
    "log_historical_sold",
    "inventory_sold",
    "insurance",
    # 買い手・売り手の直接の関係
    "bs_trade_volume",
    "bs_message_volume",
    "bs_contact",
    "days_since_trade",
    "days_since_message",
    "message_rank",
    "buyer_trade_volume",
    "seller_trade_volume",
    # 間接の関係
    "mutual_message",
    "mutual_contact",
    "seller_cc_message",
    "seller_cc_contact",
    "mutual_density_message",
    "mutual_density_contact",
    "seller_pagerank_trade",
    "seller_pagerank_message",
    "seller_pagerank_contact",
]
ALL_FEATURES = "All Features"

CHOICE_COLUMNS = ["cluster_id", "buyer", "seller", "purchase_date", "price", "rating_percent",
                  "historical_sold", "inventory_sold", "insurance"]
OPTIONAL_COLUMNS = ["category_id"]

RANDOM = "Random"
MIN_PRICE = "MinPrice"
MOST_MSG = "MostMsg"
BASELINES = (RANDOM, MIN_PRICE, MOST_MSG)


@dataclass(frozen=True)
class DecisionInstance:
    """1回の購買判断。候補ごとの出品情報は candidates と同じ並び"""
    cluster_id: str
    buyer: str
    purchase_date: int
    true_sellers: Tuple[str, ...]
    candidates: Tuple[str, ...]
    prices: Tuple[float, ...]
    ratings: Tuple[float, ...]
    historical_sold: Tuple[float, ...]
    inventory_sold: Tuple[float, ...]
    insurance: Tuple[int, ...]
    category_id: int = 0

    @property
    def key(self) -> str:
        return f"{self.cluster_id}|{self.buyer}|{self.purchase_date}"

    @property
    def k(self) -> int:
        return len(self.candidates)

    def truth_mask(self) -> np.ndarray:
        return np.array([s in self.true_sellers for s in self.candidates])


@dataclass
class BuyerSellerCluster:
    cluster_id: str
    sellers: Tuple[str, ...]
    decisions: List[DecisionInstance] = field(default_factory=list)
    category_id: int = 0


@dataclass
class RankModel:
    weights: np.ndarray
    feature_names: List[str]
    lam: float
    epochs: int
    seed: int
    eta0: float
    n_pairs: int = 0

    def score(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weights

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "epochs": self.epochs, "seed": self.seed, "eta0": self.eta0,
            "n_pairs": self.n_pairs,
            "weights": {name: float(w) for name, w in zip(self.feature_names, self.weights)},
        }


@dataclass(frozen=True)
class RankMetrics:
    p_at_1: Optional[float]
    mean_rank: Optional[float]
    mrr: Optional[float]
    n: int = 0
    per_k: Dict[int, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"p_at_1": self.p_at_1, "mean_rank": self.mean_rank, "mrr": self.mrr, "n": self.n,
                "per_k": {str(k): v for k, v in sorted(self.per_k.items())}}


@dataclass
class ExperimentResult:
    subset: str
    metrics: RankMetrics
    baselines: Dict[str, RankMetrics]
    n_train: int
    n_test: int
    model: Optional[RankModel] = None
    per_category: bool = False

    def to_dict(self) -> dict:
        out = {"subset": self.subset, **self.metrics.to_dict()}
        out.update({
            "baselines": {name: m.to_dict() for name, m in self.baselines.items()},
            "n_train": self.n_train,
            "n_test": self.n_test,
            "per_category": self.per_category,
            "fractional_rank": "(rank-1)/(k-1), ties averaged",
            "split": "by cluster_id, sha256(split_seed:cluster_id)",
            "loss": "pairwise hinge, L2",
        })
        if self.model is not None:
            out["model"] = self.model.to_dict()
        return out


# ============================================================
# 購買判断の構築
# ============================================================

def read_choice_clusters(path) -> pd.DataFrame:
    """choice_clusters.csv（category_id 列は任意）"""
    try:
        df = read_csv_checked(path, CHOICE_COLUMNS + OPTIONAL_COLUMNS)
    except ValidationError:
        df = read_csv_checked(path, CHOICE_COLUMNS)
        df["category_id"] = "0"

    numeric = {col: pd.to_numeric(df[col], errors="coerce")
               for col in ["purchase_date", "price", "rating_percent", "historical_sold",
                           "inventory_sold", "insurance", "category_id"]}
    check_rows(path, [
        (((df["cluster_id"] == "") | (df["buyer"] == "") | (df["seller"] == "")).to_numpy(),
         "cluster_id/buyer/seller が空です"),
        (~is_integral(numeric["purchase_date"]), "purchase_date は整数秒です"),
        (~(numeric["price"] > 0).to_numpy(), "price は正の値です"),
        (~((numeric["rating_percent"] >= 0) & (numeric["rating_percent"] <= 100)).to_numpy(),
         "rating_percent は0〜100です"),
        (~(numeric["historical_sold"] >= 0).to_numpy(), "historical_sold は0以上です"),
        (~(numeric["inventory_sold"] >= 0).to_numpy(), "inventory_sold は0以上です"),
        (~numeric["insurance"].isin([0, 1]).to_numpy(), "insurance は0か1です"),
        (~is_integral(numeric["category_id"]), "category_id は整数です"),
    ])
    for col, values in numeric.items():
        df[col] = values
    df["purchase_date"] = df["purchase_date"].astype(np.int64)
    df["category_id"] = df["category_id"].astype(np.int64)
    df["insurance"] = df["insurance"].astype(np.int64)
    return df


def build_decisions(
    rows: pd.DataFrame,
    g: Optional[TemporalMultigraph] = None,
    min_sellers: Optional[int] = None,
    max_sellers: Optional[int] = None,
) -> List[BuyerSellerCluster]:
    """
    クラスタごとに購買判断を作る

    - 売り手が min_sellers〜max_sellers 人のクラスタだけ残す
    - (買い手, 購入日) ごとに1件。同じ日に複数の売り手から買えば正解が複数
    - 出品情報は売り手ごとに最初の行を使う
    """
    config = get_choice_config()
    min_sellers = min_sellers or int(config.get("min_sellers", 2))
    max_sellers = max_sellers or int(config.get("max_sellers", 10))
    t_origin = g.t_start if g is not None else 0

    rows = rows.copy()
    rows["cluster_id"] = rows["cluster_id"].astype(str)
    rows["buyer"] = rows["buyer"].astype(str)
    rows["seller"] = rows["seller"].astype(str)
    rows["day"] = (rows["purchase_date"] - t_origin) // SECONDS_PER_DAY
    rows = rows.sort_values(["cluster_id", "purchase_date", "buyer", "seller"], kind="mergesort")

    clusters = []
    dropped = 0
    for cluster_id, group in rows.groupby("cluster_id", sort=True):
        listing = group.drop_duplicates("seller").set_index("seller").sort_index()
        sellers = tuple(listing.index)
        if not (min_sellers <= len(sellers) <= max_sellers):
            dropped += 1
            continue
        category = int(group["category_id"].iloc[0]) if "category_id" in group else 0
        cluster = BuyerSellerCluster(str(cluster_id), sellers, category_id=category)
        for (buyer, _day), sub in group.groupby(["buyer", "day"], sort=True):
            cluster.decisions.append(DecisionInstance(
                cluster_id=str(cluster_id),
                buyer=str(buyer),
                purchase_date=int(sub["purchase_date"].min()),
                true_sellers=tuple(sorted(set(sub["seller"]))),
                candidates=sellers,
                prices=tuple(float(v) for v in listing["price"]),
                ratings=tuple(float(v) for v in listing["rating_percent"]),
                historical_sold=tuple(float(v) for v in listing["historical_sold"]),
                inventory_sold=tuple(float(v) for v in listing["inventory_sold"]),
                insurance=tuple(int(v) for v in listing["insurance"]),
                category_id=category,
            ))
        clusters.append(cluster)

    logger.info("クラスタ %d 件（売り手数で除外 %d 件）, 購買判断 %d 件",
                len(clusters), dropped, sum(len(c.decisions) for c in clusters))
    return clusters


def all_decisions(clusters: Iterable[BuyerSellerCluster]) -> List[DecisionInstance]:
    return [d for c in clusters for d in c.decisions]


# ============================================================
# 特徴量
# ============================================================

def fractional_rank(values: Sequence[float], descending: bool = False) -> np.ndarray:
    """(順位 - 1) / (k - 1)。同順位は平均順位"""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return np.zeros(len(values))
    ranks = rankdata(-values if descending else values, method="average")
    return (ranks - 1.0) / (len(values) - 1.0)


def _pair_stats(frame: pd.DataFrame, a: np.ndarray, b: np.ndarray) -> Dict[Tuple[int, int], Tuple[int, int]]:
    """(a, b) ごとの (件数, 最終時刻)"""
    if frame.empty:
        return {}
    keyed = pd.DataFrame({"a": a, "b": b, "t": frame["timestamp"].to_numpy()})
    grouped = keyed.groupby(["a", "b"])["t"].agg(["size", "max"])
    return {(int(x), int(y)): (int(n), int(t))
            for (x, y), n, t in zip(grouped.index, grouped["size"], grouped["max"])}


class _Snapshot:
    """1日分のスナップショットから引く値"""

    def __init__(self, g: TemporalMultigraph, cutoff: int):
        view = g.view(cutoff)
        self.view = view
        self.cutoff = cutoff
        events = view.events
        trades = events[events["kind"] == TRADE]
        msgs = events[events["kind"] == MESSAGE]
        n = g.n_nodes

        self.trades = _pair_stats(trades, trades["src"].to_numpy(), trades["dst"].to_numpy())
        ms, md = msgs["src"].to_numpy(), msgs["dst"].to_numpy()
        self.messages = _pair_stats(msgs, np.minimum(ms, md), np.maximum(ms, md))
        self.buyer_volume = np.bincount(trades["src"].to_numpy(dtype=np.int64), minlength=n)
        self.seller_volume = np.bincount(trades["dst"].to_numpy(dtype=np.int64), minlength=n)
        self.msg_nbrs = view.neighbor_sets(MESSAGE)
        self.pr_trade = pagerank(view, TRADE)
        self.pr_message = pagerank(view, MESSAGE)


def _mutual_density(nbrs: List[set], mutual: set) -> float:
    """共通隣接ノード間に張られた辺の割合（2人未満なら0）"""
    m = len(mutual)
    if m < 2:
        return 0.0
    links = sum(len(nbrs[u] & mutual) for u in mutual) / 2.0
    return links / (m * (m - 1) / 2.0)


class FeatureContext:
    """日ごとのスナップショットをキャッシュしながら特徴量を計算する"""

    def __init__(self, g: TemporalMultigraph):
        self.g = g
        self.window_days = g.window_days
        self._snapshots: Dict[int, _Snapshot] = {}
        # 連絡先は時刻を持たないので全期間のビューで計算
        full = g.full
        self._contact_view = full
        self._contact_nbrs = full.neighbor_sets(CONTACT)
        self._pr_contact = pagerank(full, CONTACT)
        self._default_pr = 1.0 / g.n_nodes if g.n_nodes else 0.0

    def cutoff_for(self, purchase_date: int) -> int:
        """購入日の開始時刻の1秒前"""
        day = (purchase_date - self.g.t_start) // SECONDS_PER_DAY
        return self.g.t_start + day * SECONDS_PER_DAY - 1

    def snapshot(self, cutoff: int) -> _Snapshot:
        if cutoff not in self._snapshots:
            self._snapshots[cutoff] = _Snapshot(self.g, cutoff)
        return self._snapshots[cutoff]

    def _days_since(self, last: Optional[int], cutoff: int) -> float:
        if last is None:
            return self.window_days
        return min((cutoff - last) / SECONDS_PER_DAY, self.window_days)

    def network_features(self, buyer: int, seller: int, snap: _Snapshot) -> List[float]:
        """ネットワーク特徴量17個（message_rank はここでは 0 を入れておく）"""
        w = self.window_days
        known_b = buyer >= 0
        known_s = seller >= 0
        known = known_b and known_s

        trade = snap.trades.get((buyer, seller)) if known else None
        msg = snap.messages.get((min(buyer, seller), max(buyer, seller))) if known else None

        contact = 0.0
        mutual_msg = mutual_contact = 0
        density_msg = density_contact = 0.0
        if known:
            contact = float(seller in self._contact_nbrs[buyer])
            common_msg = snap.msg_nbrs[buyer] & snap.msg_nbrs[seller]
            common_contact = self._contact_nbrs[buyer] & self._contact_nbrs[seller]
            mutual_msg, mutual_contact = len(common_msg), len(common_contact)
            density_msg = _mutual_density(snap.msg_nbrs, common_msg)
            density_contact = _mutual_density(self._contact_nbrs, common_contact)

        return [
            float(trade[0]) if trade else 0.0,
            float(msg[0]) if msg else 0.0,
            contact,
            self._days_since(trade[1] if trade else None, snap.cutoff) if known else w,
            self._days_since(msg[1] if msg else None, snap.cutoff) if known else w,
            0.0,
            float(snap.buyer_volume[buyer]) if known_b else 0.0,
            float(snap.seller_volume[seller]) if known_s else 0.0,
            float(mutual_msg),
            float(mutual_contact),
            clustering_coefficient(snap.view, MESSAGE, seller) if known_s else 0.0,
            clustering_coefficient(self._contact_view, CONTACT, seller) if known_s else 0.0,
            density_msg,
            density_contact,
            snap.pr_trade.get(seller, self._default_pr) if known_s else self._default_pr,
            snap.pr_message.get(seller, self._default_pr) if known_s else self._default_pr,
            self._pr_contact.get(seller, self._default_pr) if known_s else self._default_pr,
        ]

    def extract(self, d: DecisionInstance) -> np.ndarray:
        """候補ごとの特徴量（k × 23, FEATURE_NAMES の順）"""
        snap = self.snapshot(self.cutoff_for(d.purchase_date))
        buyer = int(self.g.to_internal([d.buyer])[0])
        sellers = self.g.to_internal(list(d.candidates))

        meta = np.column_stack([
            fractional_rank(d.prices),
            fractional_rank(d.ratings, descending=True),
            fractional_rank(d.historical_sold, descending=True),
            np.log1p(np.asarray(d.historical_sold, dtype=float)),
            np.asarray(d.inventory_sold, dtype=float),
            np.asarray(d.insurance, dtype=float),
        ])
        network = np.array([self.network_features(buyer, int(s), snap) for s in sellers], dtype=float)
        msg_col = FEATURE_NAMES.index("message_rank") - 6
        network[:, msg_col] = fractional_rank(network[:, 1], descending=True)
        return np.hstack([meta, network])


def extract_features(d: DecisionInstance, g: TemporalMultigraph,
                     context: Optional[FeatureContext] = None) -> pd.DataFrame:
    """1件の購買判断の特徴量表（行 = 候補の売り手）"""
    context = context or FeatureContext(g)
    return pd.DataFrame(context.extract(d), columns=FEATURE_NAMES, index=list(d.candidates))


def feature_table(decisions: Sequence[DecisionInstance], g: TemporalMultigraph,
                  features: Optional[Dict[str, np.ndarray]] = None) -> pd.DataFrame:
    """features.csv（監査用。特徴量は標準化前）"""
    context = FeatureContext(g)
    frames = []
    for d in decisions:
        x = features[d.key] if features is not None else context.extract(d)
        frame = pd.DataFrame(x, columns=FEATURE_NAMES)
        frame.insert(0, "is_true", d.truth_mask().astype(int))
        frame.insert(0, "seller", list(d.candidates))
        frame.insert(0, "purchase_date", d.purchase_date)
        frame.insert(0, "buyer", d.buyer)
        frame.insert(0, "cluster_id", d.cluster_id)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["cluster_id", "buyer", "purchase_date", "seller", "is_true"] + FEATURE_NAMES)
    return pd.concat(frames, ignore_index=True)


# ============================================================
# ランカー
# ============================================================

def _pair_differences(groups: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
    """
    グループごとの 正解 - 不正解 の差分ベクトル

    内容がまったく同じグループは1つにまとめる。別のグループで差分が一致しても、それぞれ残す。
    """
    seen = set()
    diffs = []
    for x, truth in groups:
        x = np.asarray(x, dtype=float)
        truth = np.asarray(truth, dtype=bool)
        key = (x.shape, x.tobytes(), truth.tobytes())
        if key in seen:
            continue
        seen.add(key)
        pos, neg = x[truth], x[~truth]
        if len(pos) and len(neg):
            diffs.append((pos[:, None, :] - neg[None, :, :]).reshape(-1, x.shape[1]))
    return diffs


def train_ranker(
    groups: Sequence[Tuple[np.ndarray, np.ndarray]],
    lam: Optional[float] = None,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    eta0: Optional[float] = None,
    feature_names: Optional[List[str]] = None,
) -> RankModel:
    """
    ペアごとのヒンジ損失 + λ‖w‖² を確率的劣勾配法で最小化する

    Args:
        groups: (特徴量 k × p, 正解フラグ k) のリスト
        lam: 正則化係数
        epochs: エポック数（各エポックでグループの順番をシャッフル）
        seed: シャッフルの乱数シード
        eta0: 初期ステップ幅（η_t = η0 / (1 + λ η0 t)）

    Raises:
        FitError: 学習用のペアがない
    """
    config = get_choice_config()
    lam = float(config.get("lambda", 1e-4) if lam is None else lam)
    epochs = int(config.get("epochs", 50) if epochs is None else epochs)
    seed = int(config.get("seed", 0) if seed is None else seed)
    eta0 = float(config.get("eta0", 0.1) if eta0 is None else eta0)

    pair_groups = _pair_differences(groups)
    if not pair_groups:
        raise FitError("学習用のペア（正解と不正解の候補）がありません")

    # エポックごとにグループの順番をシャッフルし、グループ内のペアは順に使う
    rng = np.random.default_rng(seed)
    n_features = pair_groups[0].shape[1]
    w = np.zeros(n_features)
    t = 0
    for _ in range(epochs):
        for gi in rng.permutation(len(pair_groups)):
            for d in pair_groups[gi]:
                eta = eta0 / (1.0 + lam * eta0 * t)
                if w @ d < 1.0:
                    w = (w + eta * d) / (1.0 + 2.0 * lam * eta)
                else:
                    w = w / (1.0 + 2.0 * lam * eta)
                t += 1

    names = feature_names or [f"f{i}" for i in range(n_features)]
    n_pairs = sum(len(d) for d in pair_groups)
    return RankModel(w, list(names), lam, epochs, seed, eta0, n_pairs=n_pairs)


def _decision_rng(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(key.encode("utf-8"))])


def order_by_score(scores: np.ndarray, seed: int, key: str) -> np.ndarray:
    """スコアの降順。同点はシード付きシャッフルで決める"""
    perm = _decision_rng(seed, key).permutation(len(scores))
    return perm[np.argsort(-np.asarray(scores, dtype=float)[perm], kind="stable")]


def baseline_rank(kind: str, d: DecisionInstance, seed: int = 0,
                  message_volume: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    ベースラインの並び（候補のインデックス順）

    - Random: 一様ランダム
    - MinPrice: 価格の安い順
    - MostMsg: 購入日より前の買い手とのメッセージ数が多い順（全員0なら Random と同じ）
    同点は判断ごとのシード付きシャッフルで決める。
    """
    perm = _decision_rng(seed, d.key).permutation(d.k)
    if kind == RANDOM:
        return perm
    if kind == MIN_PRICE:
        return perm[np.argsort(np.asarray(d.prices)[perm], kind="stable")]
    if kind == MOST_MSG:
        if message_volume is None:
            raise ValidationError("MostMsg にはメッセージ数が必要です")
        return perm[np.argsort(-np.asarray(message_volume, dtype=float)[perm], kind="stable")]
    raise ValidationError(f"不明なベースライン: {kind}")


def true_rank(order: np.ndarray, truth: np.ndarray) -> int:
    """最上位の正解の順位（1始まり）"""
    positions = np.flatnonzero(np.asarray(truth)[order])
    return int(positions[0]) + 1


def evaluate(ranks: Sequence[Tuple[int, int]]) -> RankMetrics:
    """(正解の順位, 候補数) のリストから P@1 / 平均順位 / 平均逆順位 と k 別の内訳"""
    if not ranks:
        return RankMetrics(None, None, None, 0, {})
    r = np.array([x[0] for x in ranks], dtype=float)
    k = np.array([x[1] for x in ranks], dtype=np.int64)

    def _summary(mask):
        sub = r[mask]
        return {"p_at_1": float(np.mean(sub == 1)), "mean_rank": float(np.mean(sub)),
                "mrr": float(np.mean(1.0 / sub)), "n": int(mask.sum())}

    overall = _summary(np.ones(len(r), dtype=bool))
    per_k = {int(v): _summary(k == v) for v in np.unique(k)}
    return RankMetrics(overall["p_at_1"], overall["mean_rank"], overall["mrr"], len(r), per_k)


# ============================================================
# 実験
# ============================================================

def in_train_split(cluster_id: str, split_seed: int, ratio: float) -> bool:
    digest = hashlib.sha256(f"{split_seed}:{cluster_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64 < ratio


def resolve_subset(subset: str) -> List[str]:
    """サブセット名 → 特徴量名（FEATURE_NAMES の順）"""
    sets = get_feature_sets()
    if subset not in sets:
        if subset == ALL_FEATURES:
            return list(FEATURE_NAMES)
        raise ValidationError(f"不明なサブセット: {subset}（{', '.join(sets)}）")
    names = set(sets[subset])
    unknown = names - set(FEATURE_NAMES)
    if unknown:
        raise ValidationError(f"サブセット {subset} に不明な特徴量があります: {sorted(unknown)}")
    return [f for f in FEATURE_NAMES if f in names]


def run_experiment(
    decisions: Sequence[DecisionInstance],
    g: TemporalMultigraph,
    subset: str = ALL_FEATURES,
    split_seed: Optional[int] = None,
    lam: Optional[float] = None,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    per_category: bool = False,
    features: Optional[Dict[str, np.ndarray]] = None,
) -> ExperimentResult:
    """
    学習・評価を1回行う

    features を渡すと特徴量の再計算を省く（判断の key → k × 23 の配列）。
    per_category=True ならカテゴリごとにモデルを学習し、学習ペアのないカテゴリは全体モデルを使う。
    """
    config = get_choice_config()
    split_seed = int(config.get("split_seed", 0) if split_seed is None else split_seed)
    seed = int(config.get("seed", 0) if seed is None else seed)
    ratio = float(config.get("train_ratio", 0.75))

    names = resolve_subset(subset)
    cols = [FEATURE_NAMES.index(n) for n in names]
    msg_col = FEATURE_NAMES.index("bs_message_volume")

    if features is None:
        context = FeatureContext(g)
        features = {d.key: context.extract(d) for d in decisions}

    train = [d for d in decisions if in_train_split(d.cluster_id, split_seed, ratio)]
    test = [d for d in decisions if not in_train_split(d.cluster_id, split_seed, ratio)]
    if not train:
        raise FitError("学習用の購買判断がありません")

    scaler = StandardScaler().fit(np.vstack([features[d.key][:, cols] for d in train]))

    def _groups(ds):
        return [(scaler.transform(features[d.key][:, cols]), d.truth_mask()) for d in ds]

    model = train_ranker(_groups(train), lam=lam, epochs=epochs, seed=seed, feature_names=names)
    models = {}
    if per_category:
        for category in sorted({d.category_id for d in train}):
            groups = _groups([d for d in train if d.category_id == category])
            try:
                models[category] = train_ranker(groups, lam=lam, epochs=epochs, seed=seed, feature_names=names)
            except FitError:
                logger.info("カテゴリ %s は学習ペアがないため全体モデルを使います", category)

    ranks: List[Tuple[int, int]] = []
    baseline_ranks: Dict[str, List[Tuple[int, int]]] = {name: [] for name in BASELINES}
    for d in test:
        x = features[d.key]
        truth = d.truth_mask()
        scorer = models.get(d.category_id, model)
        order = order_by_score(scorer.score(scaler.transform(x[:, cols])), seed, d.key)
        ranks.append((true_rank(order, truth), d.k))
        for name in BASELINES:
            base_order = baseline_rank(name, d, seed, message_volume=x[:, msg_col])
            baseline_ranks[name].append((true_rank(base_order, truth), d.k))

    result = ExperimentResult(
        subset=subset,
        metrics=evaluate(ranks),
        baselines={name: evaluate(r) for name, r in baseline_ranks.items()},
        n_train=len(train),
        n_test=len(test),
        model=model,
        per_category=per_category,
    )
    logger.info("%s: P@1=%s, 学習 %d 件, テスト %d 件", subset, result.metrics.p_at_1, len(train), len(test))
    return result
