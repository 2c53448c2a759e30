#!/usr/bin/env python3
"""
情報伝播の計測

B1 が S1 から買い（t1）、その後 B1 が B2 に初めてメッセージを送り（t2）、
B2 が Δ 以内に同じ S1 から買えば「伝播成功」とみなす。

このほか、メッセージ強度・経過日数・価格・カテゴリ別の成功率、
取引日前後のメッセージ数（前/間/後）、共通連絡先数と取引の関係、
買い手・売り手間のメッセージと取引の関係、
比較用のランダム化（辺の付け替え、売り手のランダム化）を提供する。
"""

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.graph_core import (
    CONTACT, MESSAGE, SECONDS_PER_DAY, TRADE,
    GraphLike, GraphView, TemporalMultigraph, as_view,
)
from scripts.utils.config import get_infopass_config
from scripts.utils.errors import ValidationError
from scripts.utils.log import get_logger

logger = get_logger(__name__)

STANDARD = "Standard"
FIRST_BUY_REQ = "FirstBuyReq"
MSG_REQ = "MsgReq"
RANDOM = "Random"
VARIANTS = (STANDARD, FIRST_BUY_REQ, MSG_REQ, RANDOM)

MSG_STRENGTH = "MsgStrength"
TIME_DIFF_DAYS = "TimeDiffDays"
PRICE_CNY = "PriceCNY"
CATEGORY = "Category"
AXES = (MSG_STRENGTH, TIME_DIFF_DAYS, PRICE_CNY, CATEGORY)

TRADE_VS_MSG_VOLUME = "TradeVsMsgVolume"
MSGS_VS_PRICE = "MsgsVsPrice"
MSGS_VS_TRADE_DATE_OFFSET = "MsgsVsTradeDateOffset"
DYAD_REPORTS = (TRADE_VS_MSG_VOLUME, MSGS_VS_PRICE, MSGS_VS_TRADE_DATE_OFFSET)

CURVE_COLUMNS = ["bucket", "numerator", "denominator", "rate"]
BBA_COLUMNS = ["delta_days", "instances", "avg_before", "avg_between", "avg_after",
               "se_before", "se_between", "se_after"]
INSTANCE_COLUMNS = ["b1", "s1", "b2", "t1", "t2", "price", "category_id",
                    "success", "first_buy", "msg_strength"]


@dataclass(frozen=True)
class IPQuery:
    """情報伝播の計測条件（時間は秒）"""
    delta_max: int = 2 * SECONDS_PER_DAY
    window_delta: int = 3 * SECONDS_PER_DAY
    variant: str = STANDARD
    seed: int = 0
    min_support: int = 30

    def __post_init__(self):
        if self.delta_max <= 0 or self.window_delta <= 0:
            raise ValidationError("Δ と δ は正の値です")
        if self.variant not in VARIANTS:
            raise ValidationError(f"不明なバリアント: {self.variant}")

    @classmethod
    def from_config(cls, **overrides) -> "IPQuery":
        """settings.yml の infopass セクションから作る"""
        config = get_infopass_config()
        params = {
            "delta_max": int(config.get("delta_max_days", 2) * SECONDS_PER_DAY),
            "window_delta": int(config.get("window_delta_days", 3) * SECONDS_PER_DAY),
            "min_support": int(config.get("min_support", 30)),
        }
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)


@dataclass(frozen=True)
class IPResult:
    numerator: int
    denominator: int
    rate: Optional[float]
    pairs: Optional[int] = None
    pair_successes: Optional[int] = None

    @classmethod
    def of(cls, numerator: int, denominator: int, **kwargs) -> "IPResult":
        rate = numerator / denominator if denominator else None
        return cls(int(numerator), int(denominator), rate, **kwargs)


@dataclass(frozen=True)
class CurveBucket:
    """曲線の1バケット（平均を表すときは numerator = 合計値）"""
    label: str
    numerator: float
    denominator: int
    rate: Optional[float]


@dataclass
class BucketedCurve:
    axis: str
    buckets: List[CurveBucket] = field(default_factory=list)
    suppressed: int = 0
    meta: Dict[str, object] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(b.label, b.numerator, b.denominator, b.rate) for b in self.buckets],
            columns=CURVE_COLUMNS,
        )


@dataclass(frozen=True)
class BBARow:
    delta_days: int
    instances: int
    avg_before: Optional[float]
    avg_between: Optional[float]
    avg_after: Optional[float]
    se_before: Optional[float]
    se_between: Optional[float]
    se_after: Optional[float]


@dataclass
class BBATable:
    rows: List[BBARow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=BBA_COLUMNS)


# ============================================================
# ノード対ごとの時刻索引
# ============================================================

class PairTimeIndex:
    """ノード対キーごとのイベント時刻を、区間内の件数として高速に数える"""

    def __init__(self, keys: np.ndarray, times: np.ndarray):
        keys = np.asarray(keys, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        self.t_min = int(times.min()) if len(times) else 0
        self.span = (int(times.max()) - self.t_min + 1) if len(times) else 1
        self.sorted = np.sort(keys * self.span + (times - self.t_min))

    def count(self, keys, lo, hi, lo_inclusive: bool = True, hi_inclusive: bool = True) -> np.ndarray:
        """各キーについて lo〜hi の時刻を持つイベント数"""
        keys = np.asarray(keys, dtype=np.int64)
        lo = np.asarray(lo, dtype=np.int64) - self.t_min
        hi = np.asarray(hi, dtype=np.int64) - self.t_min
        last = self.span - 1
        # 範囲外は隣のキーに食い込まないよう切り詰める
        empty = (hi < 0) | (lo > last)
        base = keys * self.span
        lo_c = base + np.clip(lo, 0, last)
        hi_c = base + np.clip(hi, 0, last)

        left_incl = np.searchsorted(self.sorted, lo_c, side="left")
        if lo_inclusive:
            left = left_incl
        else:
            left = np.where(lo < 0, left_incl, np.searchsorted(self.sorted, lo_c, side="right"))

        right_incl = np.searchsorted(self.sorted, hi_c, side="right")
        if hi_inclusive:
            right = right_incl
        else:
            right = np.where(hi > last, right_incl, np.searchsorted(self.sorted, hi_c, side="left"))
        return np.where(empty, 0, np.maximum(right - left, 0))


def _pair_key(a, b, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.minimum(a, b) * n + np.maximum(a, b)


def _message_index(view, directed: bool = False) -> PairTimeIndex:
    events = view.events
    msgs = events[events["kind"] == MESSAGE]
    src = msgs["src"].to_numpy(dtype=np.int64)
    dst = msgs["dst"].to_numpy(dtype=np.int64)
    keys = src * view.n_nodes + dst if directed else _pair_key(src, dst, view.n_nodes)
    return PairTimeIndex(keys, msgs["timestamp"].to_numpy())


def _events_of(view, kind: str) -> pd.DataFrame:
    events = view.events
    return events[events["kind"] == kind]


# ============================================================
# 情報伝播
# ============================================================

def ip_instances(g: GraphLike, q: Optional[IPQuery] = None) -> pd.DataFrame:
    """
    (B1, S1, B2) の組を列挙する

    - t1: B1→S1 の集約辺の初回取引時刻
    - t2: t1 より後で最初の B1→B2 メッセージ
    - success: B2→S1 の取引が (t2, t2 + Δ] にある
    - first_buy: B2 が t2 以前に S1 から買っていない
    - msg_strength: [t1 - δ, t1 + δ] の B1↔B2 メッセージ数
    """
    q = q or IPQuery()
    view = as_view(g)
    edges = view.edges
    events = view.events

    trade_edges = edges[edges["kind"] == TRADE]
    msg_edges = edges[edges["kind"] == MESSAGE]
    if trade_edges.empty or msg_edges.empty:
        return pd.DataFrame(columns=INSTANCE_COLUMNS)

    first_rows = events.iloc[trade_edges["start"].to_numpy()]
    b1s1 = pd.DataFrame({
        "b1": trade_edges["src"].to_numpy(),
        "s1": trade_edges["dst"].to_numpy(),
        "t1": trade_edges["first_time"].to_numpy(),
        "price": first_rows["price"].to_numpy(),
        "category_id": first_rows["category_id"].to_numpy(),
    })
    partners = pd.DataFrame({"b1": msg_edges["src"].to_numpy(), "b2": msg_edges["dst"].to_numpy()})
    cand = b1s1.merge(partners, on="b1")
    cand = cand[cand["b2"] != cand["s1"]]
    if cand.empty:
        return pd.DataFrame(columns=INSTANCE_COLUMNS)

    msgs = _events_of(view, MESSAGE)
    msg_times = pd.DataFrame({
        "b1": msgs["src"].to_numpy(), "b2": msgs["dst"].to_numpy(), "t2": msgs["timestamp"].to_numpy(),
    }).sort_values("t2", kind="mergesort")
    cand = pd.merge_asof(
        cand.sort_values("t1", kind="mergesort"), msg_times,
        left_on="t1", right_on="t2", by=["b1", "b2"],
        direction="forward", allow_exact_matches=False,
    )
    cand = cand[cand["t2"].notna()].copy()
    if cand.empty:
        return pd.DataFrame(columns=INSTANCE_COLUMNS)
    cand["t2"] = cand["t2"].astype(np.int64)

    trades = _events_of(view, TRADE)
    next_trade = pd.DataFrame({
        "b2": trades["src"].to_numpy(), "s1": trades["dst"].to_numpy(), "t_next": trades["timestamp"].to_numpy(),
    }).sort_values("t_next", kind="mergesort")
    cand = pd.merge_asof(
        cand.sort_values("t2", kind="mergesort"), next_trade,
        left_on="t2", right_on="t_next", by=["b2", "s1"],
        direction="forward", allow_exact_matches=False,
    )
    cand["success"] = cand["t_next"].notna() & (cand["t_next"] <= cand["t2"] + q.delta_max)

    prior = pd.DataFrame({
        "b2": trade_edges["src"].to_numpy(), "s1": trade_edges["dst"].to_numpy(),
        "first_b2s1": trade_edges["first_time"].to_numpy(),
    })
    cand = cand.merge(prior, on=["b2", "s1"], how="left")
    cand["first_buy"] = cand["first_b2s1"].isna() | (cand["first_b2s1"] > cand["t2"])

    index = _message_index(view)
    cand["msg_strength"] = index.count(
        _pair_key(cand["b1"], cand["b2"], view.n_nodes),
        cand["t1"] - q.window_delta, cand["t1"] + q.window_delta,
    )

    out = cand[INSTANCE_COLUMNS].sort_values(["b1", "s1", "b2"], kind="mergesort")
    return out.reset_index(drop=True)


def _variant_instances(g: GraphLike, q: IPQuery) -> pd.DataFrame:
    if q.variant == RANDOM:
        return ip_instances(_randomized_snapshot(as_view(g), q.seed), q)
    inst = ip_instances(g, q)
    if q.variant == FIRST_BUY_REQ:
        inst = inst[inst["first_buy"]]
    elif q.variant == MSG_REQ:
        inst = inst[inst["msg_strength"] >= 1]
    return inst


def _result_of(inst: pd.DataFrame) -> IPResult:
    pairs = inst.drop_duplicates(["b1", "b2"]) if len(inst) else inst
    pair_hits = inst[inst["success"].astype(bool)].drop_duplicates(["b1", "b2"]) if len(inst) else inst
    return IPResult.of(int(inst["success"].astype(bool).sum()) if len(inst) else 0, len(inst),
                       pairs=len(pairs), pair_successes=len(pair_hits))


def ip_success_rate(g: GraphLike, q: Optional[IPQuery] = None) -> IPResult:
    """伝播成功率（分母0なら rate は None）"""
    q = q or IPQuery()
    return _result_of(_variant_instances(g, q))


def _price_labels(edges: Sequence[float]) -> List[str]:
    bounds = list(edges) + [np.inf]
    return [f"[{_fmt(lo)},{_fmt(hi)})" for lo, hi in zip(bounds[:-1], bounds[1:])]


def _fmt(x: float) -> str:
    return "inf" if np.isinf(x) else f"{x:g}"


def _bucketize(inst: pd.DataFrame, axis: str, q: IPQuery):
    """軸ごとのバケットラベルと並び順"""
    config = get_infopass_config()
    if axis == MSG_STRENGTH:
        cap = int(config.get("msg_strength_cap", 20))
        values = inst["msg_strength"].to_numpy(dtype=np.int64)
        order = np.minimum(values, cap)
        labels = np.where(values >= cap, f"{cap}+", order.astype(str))
        return labels, order
    if axis == TIME_DIFF_DAYS:
        days = ((inst["t2"] - inst["t1"]) // SECONDS_PER_DAY).to_numpy(dtype=np.int64)
        return days.astype(str), days
    if axis == PRICE_CNY:
        edges = [float(e) for e in config.get("price_edges", [0, 1, 2, 5, 10, 15, 25, 50, 100, 250])]
        idx = np.searchsorted(np.array(edges), inst["price"].to_numpy(dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(edges) - 1)
        names = np.array(_price_labels(edges), dtype=object)
        return names[idx], idx
    if axis == CATEGORY:
        cats = inst["category_id"].astype(np.int64).to_numpy()
        return cats.astype(str), cats
    raise ValidationError(f"不明な軸: {axis}（{', '.join(AXES)}）")


def _curve_from(axis: str, labels, order, numer, denom, min_support: int, meta=None) -> BucketedCurve:
    """(ラベル, 並び順) ごとに合計してバケットにする。support 未満は出力しない"""
    frame = pd.DataFrame({"label": labels, "order": order, "numer": numer, "denom": denom})
    grouped = frame.groupby(["order", "label"], sort=True)[["numer", "denom"]].sum().reset_index()
    curve = BucketedCurve(axis, meta=dict(meta or {}))
    for row in grouped.itertuples(index=False):
        if row.denom < min_support:
            curve.suppressed += 1
            continue
        rate = row.numer / row.denom if row.denom else None
        numerator = int(row.numer) if float(row.numer).is_integer() else float(row.numer)
        curve.buckets.append(CurveBucket(str(row.label), numerator, int(row.denom), rate))
    return curve


def closure_rate_by(g: GraphLike, axis: str, q: Optional[IPQuery] = None) -> BucketedCurve:
    """軸別の伝播成功率。FirstBuyReq は分母から事前購入済みの B2 を除く"""
    q = q or IPQuery()
    if axis not in AXES:
        raise ValidationError(f"不明な軸: {axis}（{', '.join(AXES)}）")
    inst = _variant_instances(g, q)
    meta = {"variant": q.variant, "first_buy_applies_to": "denominator",
            "delta_max": q.delta_max, "window_delta": q.window_delta}
    if inst.empty:
        return BucketedCurve(axis, meta=meta)
    labels, order = _bucketize(inst, axis, q)
    return _curve_from(axis, labels, order, inst["success"].astype(int).to_numpy(),
                       np.ones(len(inst), dtype=np.int64), q.min_support, meta)


# ============================================================
# 取引日前後のメッセージ数
# ============================================================

def before_between_after(g: GraphLike, delta_days: Sequence[int] = (1, 2, 3, 4, 5)) -> BBATable:
    """
    同じ売り手から δ 日違いで買った2人の買い手間のメッセージ数

    窓: 前 [t1 - δ, t1], 間 (t1, t1 + δ], 後 (t1 + δ, t1 + 2δ]。境界のイベントは前の窓に入れる。
    """
    view = as_view(g)
    base = view.base
    trades = _events_of(view, TRADE)
    frame = pd.DataFrame({
        "buyer": trades["src"].to_numpy(), "seller": trades["dst"].to_numpy(),
        "t": trades["timestamp"].to_numpy(),
    })
    frame["day"] = base.day_index(frame["t"].to_numpy()) if len(frame) else np.array([], dtype=np.int64)
    index = _message_index(view)

    table = BBATable()
    for delta in delta_days:
        if delta < 1:
            raise ValidationError("δ は1日以上です")
        first = frame.rename(columns={"buyer": "b1", "t": "t1"})
        first["day"] = first["day"] + delta
        second = frame.rename(columns={"buyer": "b2", "t": "t2"})
        pairs = first.merge(second, on=["seller", "day"])
        pairs = pairs[pairs["b1"] != pairs["b2"]]

        if pairs.empty:
            table.rows.append(BBARow(int(delta), 0, None, None, None, None, None, None))
            continue

        ds = delta * SECONDS_PER_DAY
        keys = _pair_key(pairs["b1"], pairs["b2"], view.n_nodes)
        t1 = pairs["t1"].to_numpy(dtype=np.int64)
        before = index.count(keys, t1 - ds, t1, True, True)
        between = index.count(keys, t1, t1 + ds, False, True)
        after = index.count(keys, t1 + ds, t1 + 2 * ds, False, True)

        n = len(pairs)
        table.rows.append(BBARow(
            int(delta), n,
            float(before.mean()), float(between.mean()), float(after.mean()),
            _standard_error(before), _standard_error(between), _standard_error(after),
        ))
    return table


def _standard_error(values: np.ndarray) -> Optional[float]:
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


# ============================================================
# 共通連絡先と取引
# ============================================================

def _traded_pairs(view) -> np.ndarray:
    src, dst = view.layer_pairs(TRADE)
    return np.unique(_pair_key(src, dst, view.n_nodes))


def _messaged_pairs(view) -> np.ndarray:
    src, dst = view.layer_pairs(MESSAGE)
    return np.unique(_pair_key(src, dst, view.n_nodes))


def mutual_contact_trade_curve(
    g: GraphLike,
    variant: str = STANDARD,
    min_support: Optional[int] = None,
) -> BucketedCurve:
    """共通連絡先が k 人いるノード対（k ≥ 1）が取引した割合。MsgReq はメッセージのある対に限定"""
    if variant not in (STANDARD, MSG_REQ):
        raise ValidationError(f"mutual_contact_trade_curve のバリアントは {STANDARD} か {MSG_REQ} です")
    view = as_view(g)
    if min_support is None:
        min_support = int(get_infopass_config().get("min_support", 30))
    n = view.n_nodes
    u, v = view.layer_pairs(CONTACT)
    meta = {"variant": variant}
    if n == 0 or len(u) == 0:
        return BucketedCurve("MutualContacts", meta=meta)

    adj = sparse.coo_matrix((np.ones(2 * len(u)), (np.concatenate([u, v]), np.concatenate([v, u]))),
                            shape=(n, n)).tocsr()
    common = sparse.triu(adj @ adj, k=1).tocoo()
    a, b, k = common.row.astype(np.int64), common.col.astype(np.int64), np.rint(common.data).astype(np.int64)
    keep = k > 0
    a, b, k = a[keep], b[keep], k[keep]
    keys = a * n + b

    if variant == MSG_REQ:
        has_msg = np.isin(keys, _messaged_pairs(view))
        keys, k = keys[has_msg], k[has_msg]

    traded = np.isin(keys, _traded_pairs(view)).astype(np.int64)
    return _curve_from("MutualContacts", k.astype(str), k, traded, np.ones(len(k), dtype=np.int64),
                       min_support, meta)


def direct_contact_trade_rate(g: GraphLike) -> IPResult:
    """直接の連絡先同士が取引したことのある割合"""
    view = as_view(g)
    u, v = view.layer_pairs(CONTACT)
    keys = _pair_key(u, v, view.n_nodes)
    traded = int(np.isin(keys, _traded_pairs(view)).sum())
    return IPResult.of(traded, len(keys))


# ============================================================
# 買い手・売り手のメッセージと取引
# ============================================================

def dyad_report(g: GraphLike, which: str, variant: str = "message",
                min_support: int = 1) -> BucketedCurve:
    """
    買い手・売り手の対ごとの集計

    - TradeVsMsgVolume: メッセージ数別の平均取引数（variant: message / message_trade）
    - MsgsVsPrice: 価格帯別の、取引当日の買い手→売り手メッセージ数の平均
    - MsgsVsTradeDateOffset: 取引日からの日数差別の、1日あたりメッセージ数の平均
    """
    view = as_view(g)
    config = get_infopass_config()
    n = view.n_nodes
    if which == TRADE_VS_MSG_VOLUME:
        if variant not in ("message", "message_trade"):
            raise ValidationError(f"不明なバリアント: {variant}")
        events = view.events
        keys = _pair_key(events["src"], events["dst"], n)
        counts = pd.DataFrame({"key": keys, "is_trade": (events["kind"] == TRADE).to_numpy()})
        per_pair = counts.groupby("key")["is_trade"].agg(trades="sum", total="size")
        per_pair["msgs"] = per_pair["total"] - per_pair["trades"]
        per_pair = per_pair[per_pair["msgs"] >= 1]
        if variant == "message_trade":
            per_pair = per_pair[per_pair["trades"] >= 1]
        cap = int(config.get("dyad_msg_cap", 50))
        msgs = per_pair["msgs"].to_numpy(dtype=np.int64)
        labels = np.where(msgs >= cap, f"{cap}+", np.minimum(msgs, cap).astype(str))
        return _curve_from(which, labels, np.minimum(msgs, cap), per_pair["trades"].to_numpy(),
                           np.ones(len(per_pair), dtype=np.int64), min_support, {"variant": variant})

    trades = _events_of(view, TRADE)
    buyer = trades["src"].to_numpy(dtype=np.int64)
    seller = trades["dst"].to_numpy(dtype=np.int64)
    day = np.asarray(view.base.day_index(trades["timestamp"].to_numpy()), dtype=np.int64) \
        if len(trades) else np.array([], dtype=np.int64)
    day_start = view.base.t_start + day * SECONDS_PER_DAY

    if which == MSGS_VS_PRICE:
        directed = buyer * n + seller
        msg_src, msg_dst = view.layer_pairs(MESSAGE)
        has_msg = np.isin(directed, msg_src * n + msg_dst)
        index = _message_index(view, directed=True)
        same_day = index.count(directed, day_start, day_start + SECONDS_PER_DAY - 1)
        edges = [float(e) for e in config.get("price_edges", [0, 1, 2, 5, 10, 15, 25, 50, 100, 250])]
        price = trades["price"].to_numpy(dtype=float)[has_msg]
        idx = np.clip(np.searchsorted(np.array(edges), price, side="right") - 1, 0, len(edges) - 1)
        labels = np.array(_price_labels(edges), dtype=object)[idx]
        return _curve_from(which, labels, idx, same_day[has_msg], np.ones(len(idx), dtype=np.int64),
                           min_support)

    if which == MSGS_VS_TRADE_DATE_OFFSET:
        keys = _pair_key(buyer, seller, n)
        has_msg = np.isin(keys, _messaged_pairs(view))
        keys, day_start = keys[has_msg], day_start[has_msg]
        index = _message_index(view)
        span = int(config.get("dyad_offset_days", 7))
        labels, order, numer, denom = [], [], [], []
        for offset in range(-span, span + 1):
            lo = day_start + offset * SECONDS_PER_DAY
            counts = index.count(keys, lo, lo + SECONDS_PER_DAY - 1)
            labels.append(str(offset))
            order.append(offset)
            numer.append(int(counts.sum()))
            denom.append(len(keys))
        return _curve_from(which, labels, order, numer, denom, min_support)

    raise ValidationError(f"不明なレポート: {which}（{', '.join(DYAD_REPORTS)}）")


# ============================================================
# ランダム化（比較用のヌルモデル）
# ============================================================

def _swap_directed(src: np.ndarray, dst: np.ndarray, rng: np.random.Generator,
                   nswap: int, max_tries: int) -> int:
    """有向の二重辺交換 (a→b, c→d) → (a→d, c→b)。入次数・出次数を保つ。成功回数を返す"""
    existing = set(zip(src.tolist(), dst.tolist()))
    m = len(src)
    swaps = tries = 0
    batch = 4096
    while swaps < nswap and tries < max_tries:
        picks = rng.integers(0, m, size=(batch, 2))
        for i, j in picks.tolist():
            tries += 1
            if i != j:
                a, b, c, d = int(src[i]), int(dst[i]), int(src[j]), int(dst[j])
                if a != d and c != b and (a, d) not in existing and (c, b) not in existing:
                    existing.discard((a, b))
                    existing.discard((c, d))
                    existing.add((a, d))
                    existing.add((c, b))
                    dst[i], dst[j] = d, b
                    swaps += 1
            if swaps >= nswap or tries >= max_tries:
                break
    return swaps


def rewire(g: TemporalMultigraph, seed: int = 0,
           swap_factor: Optional[int] = None, retry_factor: Optional[int] = None) -> TemporalMultigraph:
    """
    次数とイベント時刻を保ったまま、レイヤーごとに辺の端点を入れ替える

    取引/メッセージは有向の二重辺交換（イベントは辺のスロットと一緒に動く）、
    連絡先は無向の二重辺交換。辺が少なすぎるレイヤーはそのまま返す。
    """
    config = get_infopass_config()
    swap_factor = swap_factor or int(config.get("rewire_swap_factor", 10))
    retry_factor = retry_factor or int(config.get("rewire_retry_factor", 100))
    trade_seq, msg_seq, contact_seq = np.random.SeedSequence(seed).spawn(3)

    edges = g.edges
    new_src = edges["src"].to_numpy(dtype=np.int64).copy()
    new_dst = edges["dst"].to_numpy(dtype=np.int64).copy()
    for kind, seq in ((TRADE, trade_seq), (MESSAGE, msg_seq)):
        mask = (edges["kind"] == kind).to_numpy()
        m = int(mask.sum())
        if m < 2:
            logger.warning("%s レイヤーの辺が %d 本しかないため付け替えません", kind, m)
            continue
        src, dst = new_src[mask], new_dst[mask]
        nswap = swap_factor * m
        done = _swap_directed(src, dst, np.random.default_rng(seq), nswap, retry_factor * nswap)
        if done < nswap:
            logger.warning("%s レイヤー: 交換 %d / %d 回で試行上限に達しました", kind, done, nswap)
        new_dst[mask] = dst

    events = g.events.copy()
    n_events = edges["n_events"].to_numpy(dtype=np.int64)
    events["src"] = np.repeat(new_src, n_events)
    events["dst"] = np.repeat(new_dst, n_events)

    contacts = g.contacts
    if len(contacts) >= 2:
        graph = nx.Graph()
        graph.add_edges_from(zip(contacts["u"].tolist(), contacts["v"].tolist()))
        nswap = swap_factor * len(contacts)
        try:
            nx.double_edge_swap(graph, nswap=nswap, max_tries=retry_factor * nswap,
                                seed=int(contact_seq.generate_state(1)[0]))
            contacts = pd.DataFrame(list(graph.edges()), columns=["u", "v"])
        except (nx.NetworkXError, nx.NetworkXAlgorithmError) as e:
            logger.warning("連絡先レイヤーを付け替えられません: %s", e)
    else:
        logger.warning("連絡先レイヤーの辺が %d 本しかないため付け替えません", len(contacts))

    return TemporalMultigraph(events, contacts, g.window, n_nodes=g.n_nodes, id_map=g.id_map)


def randomize_sellers(g: TemporalMultigraph, seed: int = 0) -> TemporalMultigraph:
    """取引ごとに売り手を「一度でも売ったノード」から一様に引き直す（買い手自身は除く）"""
    events = _randomized_trades(g.events, seed)
    return TemporalMultigraph(events, g.contacts, g.window, n_nodes=g.n_nodes, id_map=g.id_map)


def _randomized_snapshot(view: GraphView, seed: int) -> TemporalMultigraph:
    """ビューに見えるイベントだけで売り手を引き直す（観測期間の終わりは cutoff）"""
    base = view.base
    t_end = max(base.t_start, min(view.cutoff, base.t_end))
    events = _randomized_trades(view.events, seed)
    return TemporalMultigraph(events, view.contacts, (base.t_start, t_end), n_nodes=base.n_nodes, id_map=base.id_map)


def _randomized_trades(events: pd.DataFrame, seed: int) -> pd.DataFrame:
    events = events.copy()
    is_trade = (events["kind"] == TRADE).to_numpy()
    sellers = np.unique(events["dst"].to_numpy()[is_trade])
    if len(sellers) < 2:
        raise ValidationError("売り手が2人以上必要です")

    rng = np.random.default_rng(seed)
    buyers = events["src"].to_numpy()[is_trade]
    draws = sellers[rng.integers(0, len(sellers), size=len(buyers))]
    clash = draws == buyers
    while clash.any():
        draws[clash] = sellers[rng.integers(0, len(sellers), size=int(clash.sum()))]
        clash = draws == buyers

    dst = events["dst"].to_numpy().copy()
    dst[is_trade] = draws
    events["dst"] = dst
    return events
