#!/usr/bin/env python3
"""
有向トライアド集計（16通りの向き付き構成）

中央ノード X と、U–X の辺（第1脚, 時刻 t1）、V–X の辺（第2脚, 時刻 t2 > t1）からなる
くさび (U, X, V) を数え、その後 U–V 間に辺ができる（閉じる）確率と、閉じた辺の種類を集計する。

脚のコード（X から見た向き。取引は 買い手 → 売り手）:
    0: 取引 U→X（X が売る）
    1: 取引 X→U（X が買う）
    2: メッセージ U→X
    3: メッセージ X→U
構成ID = 4 × 第1脚 + 第2脚（0〜15）
"""

import math
import multiprocessing
import os
import sys
from bisect import bisect_right
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.graph_core import MESSAGE, TRADE, GraphLike, as_view
from scripts.utils.config import get_census_config
from scripts.utils.log import get_logger

logger = get_logger(__name__)

LEG_TRADE_IN, LEG_TRADE_OUT, LEG_MSG_IN, LEG_MSG_OUT = range(4)
LEG_LABELS = ("trade_to_x", "trade_from_x", "msg_to_x", "msg_from_x")
N_CONFIGS = 16

# 閉じた辺の種類（U, V から見た向き）
CLOSING_TYPES = ("m_o", "m_i", "t_o", "t_i")
M_O, M_I, T_O, T_I = range(4)

BUYER, SELLER, AMBIGUOUS = "Buyer", "Seller", "Ambiguous"

CENSUS_COLUMNS = [
    "config_id", "leg1", "leg2", "instances", "unique_x", "p_close_x100",
    "p_trade_given_close", "p_msg_given_close", "s_t_o", "s_t_i", "x_role",
    "closures", "n_m_o", "n_m_i", "n_t_o", "n_t_i",
]

# 対イベントのコード（min→max 向きを正とする）→ 閉じた辺の種類
# u < v のとき: 取引 u→v = t_o, 取引 v→u = t_i, メッセージ u→v = m_o, メッセージ v→u = m_i
_TYPE_IF_U_LOW = (T_O, T_I, M_O, M_I)
_TYPE_IF_U_HIGH = (T_I, T_O, M_I, M_O)


@dataclass(frozen=True)
class GenerativeBaseline:
    """ノードが新しく張る外向き辺が取引である確率"""
    node: int
    p_t: Optional[float]
    trade_out: int = 0
    message_out: int = 0

    @property
    def defined(self) -> bool:
        return self.p_t is not None


@dataclass
class CensusRow:
    config: int
    instances: int
    unique_x: int
    p_close_x100: float
    p_trade_given_close: Optional[float]
    p_msg_given_close: Optional[float]
    s_t_o: Optional[float]
    s_t_i: Optional[float]
    x_role: str
    closures: int = 0
    n_m_o: int = 0
    n_m_i: int = 0
    n_t_o: int = 0
    n_t_i: int = 0

    @property
    def leg1(self) -> str:
        return LEG_LABELS[self.config // 4]

    @property
    def leg2(self) -> str:
        return LEG_LABELS[self.config % 4]


@dataclass
class CensusTally:
    """集計途中の値（シャード同士は足し算でまとめられる）"""
    instances: np.ndarray = field(default_factory=lambda: np.zeros(N_CONFIGS, dtype=np.int64))
    unique_x: np.ndarray = field(default_factory=lambda: np.zeros(N_CONFIGS, dtype=np.int64))
    closed: np.ndarray = field(default_factory=lambda: np.zeros((N_CONFIGS, 4), dtype=np.int64))
    # 構成ごとに (作成者, 取引か) → 件数。o 方向は U、i 方向は V が作成者
    creators_o: List[Counter] = field(default_factory=lambda: [Counter() for _ in range(N_CONFIGS)])
    creators_i: List[Counter] = field(default_factory=lambda: [Counter() for _ in range(N_CONFIGS)])

    def merge(self, other: "CensusTally") -> "CensusTally":
        self.closed += other.closed
        for c in range(N_CONFIGS):
            self.creators_o[c].update(other.creators_o[c])
            self.creators_i[c].update(other.creators_i[c])
        return self


def config_id(leg1: int, leg2: int) -> int:
    return 4 * leg1 + leg2


def role_of_x(config: int) -> str:
    """X が買うだけなら Buyer、売るだけなら Seller、それ以外は Ambiguous"""
    legs = {config // 4, config % 4}
    sells = LEG_TRADE_IN in legs
    buys = LEG_TRADE_OUT in legs
    if buys and not sells:
        return BUYER
    if sells and not buys:
        return SELLER
    return AMBIGUOUS


# ============================================================
# 生成ベースライン
# ============================================================

def out_edge_counts(g: GraphLike) -> Tuple[np.ndarray, np.ndarray]:
    """ノードごとの取引/メッセージの外向き集約辺数"""
    view = as_view(g)
    n = view.n_nodes
    trade_src, _ = view.layer_pairs(TRADE)
    msg_src, _ = view.layer_pairs(MESSAGE)
    return (np.bincount(trade_src, minlength=n).astype(np.int64),
            np.bincount(msg_src, minlength=n).astype(np.int64))


def generative_baseline(g: GraphLike, node: int) -> GenerativeBaseline:
    """p_t = 取引の外向き辺 / (取引 + メッセージの外向き辺)。外向き辺がなければ未定義"""
    view = as_view(g)
    view.check_node(node)
    trade_out, message_out = out_edge_counts(view)
    t, m = int(trade_out[node]), int(message_out[node])
    p_t = t / (t + m) if t + m > 0 else None
    return GenerativeBaseline(int(node), p_t, t, m)


def generative_baselines(g: GraphLike) -> Dict[int, GenerativeBaseline]:
    """全ノードの生成ベースライン"""
    trade_out, message_out = out_edge_counts(g)
    total = trade_out + message_out
    result = {}
    for node in range(len(total)):
        p_t = float(trade_out[node] / total[node]) if total[node] > 0 else None
        result[node] = GenerativeBaseline(node, p_t, int(trade_out[node]), int(message_out[node]))
    return result


# ============================================================
# くさびの数え上げ
# ============================================================

def _leg_table(view) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """集約辺1本を両端から見た脚 (中央, 相手, コード, 初回時刻) に展開する"""
    edges = view.edges
    src = edges["src"].to_numpy(dtype=np.int64)
    dst = edges["dst"].to_numpy(dtype=np.int64)
    t = edges["first_time"].to_numpy(dtype=np.int64)
    is_trade = (edges["kind"] == TRADE).to_numpy()
    code_in = np.where(is_trade, LEG_TRADE_IN, LEG_MSG_IN)
    code_out = np.where(is_trade, LEG_TRADE_OUT, LEG_MSG_OUT)
    x = np.concatenate([dst, src])
    other = np.concatenate([src, dst])
    code = np.concatenate([code_in, code_out]).astype(np.int64)
    times = np.concatenate([t, t])
    return x, other, code, times


def _count_instances(n: int, x, other, code, t) -> Tuple[np.ndarray, np.ndarray]:
    """構成ごとのくさび数と、くさびを持つ中央ノード数

    同じ X の脚の組で t1 < t2 となるものを二分探索で数え、U = V の組を差し引く。
    """
    per_x = np.zeros(n * N_CONFIGS, dtype=np.float64)
    if len(x) == 0:
        return np.zeros(N_CONFIGS, dtype=np.int64), np.zeros(N_CONFIGS, dtype=np.int64)

    t_min = int(t.min())
    span = int(t.max()) - t_min + 1
    offset = t - t_min
    keys = np.sort((x * 4 + code) * span + offset)

    for c1 in range(4):
        base = (x * 4 + c1) * span
        earlier = np.searchsorted(keys, base + offset, side="left") - np.searchsorted(keys, base, side="left")
        cfg = 4 * c1 + code
        per_x += np.bincount(x * N_CONFIGS + cfg, weights=earlier, minlength=n * N_CONFIGS)

    # 同じ相手との脚同士（最大4本）は U = V になるので除外
    order = np.lexsort((code, t, other, x))
    xs, os_, ts, cs = x[order], other[order], t[order], code[order]
    for shift in range(1, 4):
        if len(xs) <= shift:
            break
        i, j = slice(0, len(xs) - shift), slice(shift, len(xs))
        same = (xs[i] == xs[j]) & (os_[i] == os_[j]) & (ts[i] < ts[j])
        cfg = 4 * cs[i][same] + cs[j][same]
        per_x -= np.bincount(xs[i][same] * N_CONFIGS + cfg, minlength=n * N_CONFIGS)

    table = np.rint(per_x).astype(np.int64).reshape(n, N_CONFIGS)
    return table.sum(axis=0), (table > 0).sum(axis=0)


class _ClosureIndex:
    """三角形の列挙に使う索引"""

    def __init__(self, view, x, other, code, t):
        n = view.n_nodes
        self.n = n
        self.nbrs = view.neighbor_sets(TRADE, MESSAGE)

        self.legs: Dict[int, List[Tuple[int, int]]] = {}
        for xi, oi, ci, ti in zip(x.tolist(), other.tolist(), code.tolist(), t.tolist()):
            self.legs.setdefault(xi * n + oi, []).append((ci, ti))

        # ノード対ごとのイベント列（時刻, コード 順）
        events = view.events
        src = events["src"].to_numpy(dtype=np.int64)
        dst = events["dst"].to_numpy(dtype=np.int64)
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        pair_code = np.where((events["kind"] == TRADE).to_numpy(), 0, 2) + (src > dst)
        pair_key = lo * n + hi
        ts = events["timestamp"].to_numpy(dtype=np.int64)
        order = np.lexsort((pair_code, ts, pair_key))
        self.pair_t = ts[order].tolist()
        self.pair_code = pair_code[order].tolist()
        keys = pair_key[order]
        self.pair_span: Dict[int, Tuple[int, int]] = {}
        if len(keys):
            uniq, starts = np.unique(keys, return_index=True)
            stops = np.append(starts[1:], len(keys))
            self.pair_span = dict(zip(uniq.tolist(), zip(starts.tolist(), stops.tolist())))

    def closing_type(self, u: int, v: int, t2: int) -> Optional[int]:
        """t2 より後で最初の U–V イベントの種類（なければ None）"""
        span = self.pair_span.get(min(u, v) * self.n + max(u, v))
        if span is None:
            return None
        start, stop = span
        idx = bisect_right(self.pair_t, t2, start, stop)
        if idx >= stop:
            return None
        table = _TYPE_IF_U_LOW if u < v else _TYPE_IF_U_HIGH
        return table[self.pair_code[idx]]

    def tally_middle(self, x: int, tally: CensusTally):
        n = self.n
        nbrs_x = self.nbrs[x]
        for u in nbrs_x:
            legs_u = self.legs[x * n + u]
            for v in nbrs_x & self.nbrs[u]:
                legs_v = self.legs[x * n + v]
                for c1, t1 in legs_u:
                    for c2, t2 in legs_v:
                        if t1 >= t2:
                            continue
                        kind = self.closing_type(u, v, t2)
                        if kind is None:
                            continue
                        cfg = 4 * c1 + c2
                        tally.closed[cfg, kind] += 1
                        if kind in (M_O, T_O):
                            tally.creators_o[cfg][(u, kind == T_O)] += 1
                        else:
                            tally.creators_i[cfg][(v, kind == T_I)] += 1


# fork で子プロセスに引き継ぐ索引
_SHARED_INDEX: Optional[_ClosureIndex] = None


def _closure_shard(shard: int, n_shards: int) -> CensusTally:
    index = _SHARED_INDEX
    tally = CensusTally()
    for x in range(shard, index.n, n_shards):
        if index.nbrs[x]:
            index.tally_middle(x, tally)
    return tally


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = get_census_config().get("threads", 1)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return int(threads)


def census_tally(g: GraphLike, threads: Optional[int] = None) -> CensusTally:
    """
    くさび数・閉包数・作成者別の件数を集計する

    threads > 1 のときは中央ノードを x mod threads でシャードに分け、プロセスで並列に数える。
    結果はシャード数に依存しない。
    """
    global _SHARED_INDEX
    view = as_view(g)
    threads = _resolve_threads(threads)
    x, other, code, t = _leg_table(view)

    tally = CensusTally()
    tally.instances, tally.unique_x = _count_instances(view.n_nodes, x, other, code, t)

    index = _ClosureIndex(view, x, other, code, t)
    if threads > 1 and "fork" not in multiprocessing.get_all_start_methods():
        logger.warning("fork が使えないため1プロセスで集計します")
        threads = 1

    _SHARED_INDEX = index
    try:
        if threads == 1:
            tally.merge(_closure_shard(0, 1))
        else:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
                futures = [pool.submit(_closure_shard, s, threads) for s in range(threads)]
                for future in futures:
                    tally.merge(future.result())
    finally:
        _SHARED_INDEX = None

    logger.debug("くさび合計 %d, 閉包合計 %d", int(tally.instances.sum()), int(tally.closed.sum()))
    return tally


# ============================================================
# 驚き度（符号付き標準偏差）
# ============================================================

def _z_score(creators: Counter, baselines: Dict[int, GenerativeBaseline]) -> Optional[float]:
    """観測された取引数と Σp_t の差を √Σp_t(1-p_t) で割る

    p_t が未定義の作成者は除外する。和はノード順に取って並列数に依存しないようにする。
    """
    totals: Dict[int, List[int]] = {}
    for (node, is_trade), count in creators.items():
        entry = totals.setdefault(node, [0, 0])
        entry[0] += count
        if is_trade:
            entry[1] += count

    observed = 0
    expected, variance = [], []
    for node in sorted(totals):
        p = baselines[node].p_t if node in baselines else None
        if p is None:
            continue
        total, trades = totals[node]
        observed += trades
        expected.append(total * p)
        variance.append(total * p * (1.0 - p))

    exp, var = math.fsum(expected), math.fsum(variance)
    if var <= 0.0:
        return 0.0 if math.isclose(observed, exp, abs_tol=1e-9) else None
    return (observed - exp) / math.sqrt(var)


def surprise(
    tally: CensusTally,
    baselines: Dict[int, GenerativeBaseline],
) -> Dict[int, Tuple[Optional[float], Optional[float]]]:
    """構成ごとの (s_t_o, s_t_i)。メッセージ側は符号反転 s(m) = -s(t)"""
    return {
        cfg: (_z_score(tally.creators_o[cfg], baselines), _z_score(tally.creators_i[cfg], baselines))
        for cfg in range(N_CONFIGS)
    }


# ============================================================
# 集計表
# ============================================================

def rows_from_tally(tally: CensusTally, baselines: Dict[int, GenerativeBaseline]) -> List[CensusRow]:
    scores = surprise(tally, baselines)
    rows = []
    for cfg in range(N_CONFIGS):
        instances = int(tally.instances[cfg])
        n_m_o, n_m_i, n_t_o, n_t_i = (int(v) for v in tally.closed[cfg])
        closures = n_m_o + n_m_i + n_t_o + n_t_i
        p_close = 100.0 * closures / instances if instances else 0.0
        p_trade = (n_t_o + n_t_i) / closures if closures else None
        p_msg = (n_m_o + n_m_i) / closures if closures else None
        s_o, s_i = scores[cfg]
        rows.append(CensusRow(
            config=cfg,
            instances=instances,
            unique_x=int(tally.unique_x[cfg]),
            p_close_x100=p_close,
            p_trade_given_close=p_trade,
            p_msg_given_close=p_msg,
            s_t_o=s_o,
            s_t_i=s_i,
            x_role=role_of_x(cfg),
            closures=closures,
            n_m_o=n_m_o, n_m_i=n_m_i, n_t_o=n_t_o, n_t_i=n_t_i,
        ))
    return rows


def config_census(g: GraphLike, threads: Optional[int] = None) -> List[CensusRow]:
    """16構成すべての集計行（空のグラフでも16行）"""
    view = as_view(g)
    tally = census_tally(view, threads)
    return rows_from_tally(tally, generative_baselines(view))


def rows_to_frame(rows: List[CensusRow]) -> pd.DataFrame:
    """census.csv の形式"""
    records = []
    for row in rows:
        records.append({
            "config_id": row.config,
            "leg1": row.leg1,
            "leg2": row.leg2,
            "instances": row.instances,
            "unique_x": row.unique_x,
            "p_close_x100": row.p_close_x100,
            "p_trade_given_close": row.p_trade_given_close,
            "p_msg_given_close": row.p_msg_given_close,
            "s_t_o": row.s_t_o,
            "s_t_i": row.s_t_i,
            "x_role": row.x_role,
            "closures": row.closures,
            "n_m_o": row.n_m_o,
            "n_m_i": row.n_m_i,
            "n_t_o": row.n_t_o,
            "n_t_i": row.n_t_i,
        })
    return pd.DataFrame(records, columns=CENSUS_COLUMNS)


def role_summary(rows: List[CensusRow]) -> Dict[str, Optional[float]]:
    """買い手中心と売り手中心の構成の比較（閉包確率の平均と、くさび数の比）"""
    def _mean_close(role):
        values = [r.p_close_x100 for r in rows if r.x_role == role and r.instances > 0]
        return float(np.mean(values)) if values else None

    buyer_instances = sum(r.instances for r in rows if r.x_role == BUYER)
    seller_instances = sum(r.instances for r in rows if r.x_role == SELLER)
    return {
        "buyer_mean_p_close_x100": _mean_close(BUYER),
        "seller_mean_p_close_x100": _mean_close(SELLER),
        "buyer_instances": buyer_instances,
        "seller_instances": seller_instances,
        "seller_to_buyer_instance_ratio": (seller_instances / buyer_instances) if buyer_instances else None,
    }
