#!/usr/bin/env python3
"""
時系列マルチグラフ（取引・メッセージ・連絡先の3レイヤー）

データモデル:
- 取引/メッセージは (種別, 送信元, 宛先) ごとに1本の集約辺にまとめ、時刻順のイベント列を持たせる
- 連絡先は無向・時刻なし（観測期間中ずっと存在するとみなす）
- 取引辺の向きは 買い手 → 売り手
- 1つのノード対に張られる集約辺は最大5本（取引2 + メッセージ2 + 連絡先1）

構築後は不変。スナップショット (GraphView) は cutoff 以前のイベントだけを見せる。
"""

import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.utils.config import get_graph_config
from scripts.utils.errors import IngestError, SnapshotError, UnknownNodeError, ValidationError
from scripts.utils.log import get_logger

logger = get_logger(__name__)

TRADE = "trade"
MESSAGE = "message"
CONTACT = "contact"
LAYERS = (TRADE, MESSAGE, CONTACT)
EVENT_KINDS = (TRADE, MESSAGE)

SECONDS_PER_DAY = 86400

EVENT_COLUMNS = ["kind", "src", "dst", "timestamp", "product_id", "category_id", "price", "quantity"]
TRADE_FIELDS = ["product_id", "category_id", "price", "quantity"]
CONTACT_COLUMNS = ["u", "v"]
ID_MAP_COLUMNS = ["external_id", "internal_id"]
EDGE_COLUMNS = ["kind", "src", "dst", "first_time", "last_time", "n_events", "start", "stop"]

PathLike = Union[str, Path]


@dataclass(frozen=True)
class EdgeEvent:
    """取引またはメッセージ1件"""
    kind: str
    src: int
    dst: int
    timestamp: int
    product_id: Optional[str] = None
    category_id: Optional[int] = None
    price: Optional[float] = None
    quantity: Optional[int] = None


@dataclass(frozen=True)
class AggregatedEdge:
    """集約辺。連絡先はイベントを持たない"""
    kind: str
    src: int
    dst: int
    events: Tuple[EdgeEvent, ...] = ()

    @property
    def first_time(self) -> Optional[int]:
        return self.events[0].timestamp if self.events else None


@dataclass(frozen=True)
class NetworkStats:
    """レイヤー単位の基本統計"""
    kind: str
    nodes: int
    edges: int
    avg_degree: float
    avg_clustering: float
    undirected_pairs: int


# ============================================================
# フレーム正規化・集約
# ============================================================

def _normalize_events(events: pd.DataFrame) -> pd.DataFrame:
    """イベント表の型を揃え、(種別, 送信元, 宛先, 時刻) 順に安定ソートする"""
    df = pd.DataFrame({
        "kind": events["kind"].astype(str).to_numpy() if len(events) else np.array([], dtype=object),
        "src": events["src"].to_numpy(dtype=np.int64) if len(events) else np.array([], dtype=np.int64),
        "dst": events["dst"].to_numpy(dtype=np.int64) if len(events) else np.array([], dtype=np.int64),
        "timestamp": events["timestamp"].to_numpy(dtype=np.int64) if len(events) else np.array([], dtype=np.int64),
    })
    for col in TRADE_FIELDS:
        df[col] = events[col].to_numpy() if col in events and len(events) else [None] * len(df)

    is_trade = df["kind"] == TRADE
    df["product_id"] = df["product_id"].where(is_trade, None).astype(object)
    df["category_id"] = pd.to_numeric(df["category_id"].where(is_trade), errors="coerce").astype("Int64")
    df["price"] = pd.to_numeric(df["price"].where(is_trade), errors="coerce").astype(float)
    df["quantity"] = pd.to_numeric(df["quantity"].where(is_trade), errors="coerce").astype("Int64")

    df = df.sort_values(["kind", "src", "dst", "timestamp"], kind="mergesort").reset_index(drop=True)
    return df


def _normalize_contacts(contacts: pd.DataFrame) -> pd.DataFrame:
    """連絡先を (min, max) に正規化して重複除去"""
    if contacts is None or len(contacts) == 0:
        return pd.DataFrame({"u": np.array([], dtype=np.int64), "v": np.array([], dtype=np.int64)})
    u = contacts["u"].to_numpy(dtype=np.int64)
    v = contacts["v"].to_numpy(dtype=np.int64)
    if np.any(u == v):
        raise ValidationError("連絡先に自己ループがあります")
    df = pd.DataFrame({"u": np.minimum(u, v), "v": np.maximum(u, v)})
    return df.drop_duplicates().sort_values(["u", "v"]).reset_index(drop=True)


def aggregate_edges(events: pd.DataFrame) -> pd.DataFrame:
    """ソート済みイベント表から集約辺の表を作る

    start/stop はイベント表の行範囲（events.iloc[start:stop] がその辺のイベント）。
    """
    if len(events) == 0:
        return pd.DataFrame({
            "kind": np.array([], dtype=object),
            **{col: np.array([], dtype=np.int64) for col in EDGE_COLUMNS[1:]},
        })
    grouped = events.groupby(["kind", "src", "dst"], sort=False)
    edges = grouped["timestamp"].agg(first_time="min", last_time="max", n_events="size").reset_index()
    stop = edges["n_events"].to_numpy(dtype=np.int64).cumsum()
    edges["start"] = stop - edges["n_events"].to_numpy(dtype=np.int64)
    edges["stop"] = stop
    return edges[EDGE_COLUMNS]


def _validate_events(events: pd.DataFrame, window: Tuple[int, int], n_nodes: int):
    """構築済みフレームの整合性チェック"""
    if len(events) == 0:
        return
    if np.any(events["src"].to_numpy() == events["dst"].to_numpy()):
        raise ValidationError("イベントに自己ループがあります")
    ts = events["timestamp"].to_numpy()
    if ts.min() < window[0] or ts.max() > window[1]:
        raise ValidationError(f"観測期間 {window} 外のイベントがあります")
    if events["src"].min() < 0 or events["dst"].min() < 0:
        raise ValidationError("ノードIDは非負整数です")
    if max(events["src"].max(), events["dst"].max()) >= n_nodes:
        raise ValidationError("ノードIDがノード数を超えています")
    if not set(events["kind"].unique()) <= set(EVENT_KINDS):
        raise ValidationError("不明なイベント種別があります")

    trades = events[events["kind"] == TRADE]
    if len(trades):
        if trades["product_id"].isna().any() or trades["category_id"].isna().any():
            raise ValidationError("取引イベントに商品ID/カテゴリがありません")
        if (trades["price"].isna() | (trades["price"] <= 0)).any():
            raise ValidationError("取引価格は正の値です")
        if (trades["quantity"].isna() | (trades["quantity"] < 1)).any():
            raise ValidationError("取引数量は1以上です")


# ============================================================
# グラフ本体
# ============================================================

class TemporalMultigraph:
    """3レイヤーの時系列マルチグラフ（構築後は不変）"""

    def __init__(
        self,
        events: pd.DataFrame,
        contacts: Optional[pd.DataFrame],
        window: Tuple[int, int],
        n_nodes: Optional[int] = None,
        id_map: Optional[pd.DataFrame] = None,
    ):
        t_start, t_end = int(window[0]), int(window[1])
        if t_start > t_end:
            raise ValidationError(f"観測期間が不正です: {window}")

        events = _normalize_events(events)
        contacts = _normalize_contacts(contacts)

        max_id = -1
        for arr in (events["src"], events["dst"], contacts["u"], contacts["v"]):
            if len(arr):
                max_id = max(max_id, int(arr.max()))
        if n_nodes is None:
            n_nodes = max_id + 1
        elif n_nodes <= max_id:
            raise ValidationError(f"n_nodes={n_nodes} ですがノードID {max_id} があります")
        if len(contacts) and contacts["u"].min() < 0:
            raise ValidationError("ノードIDは非負整数です")

        _validate_events(events, (t_start, t_end), n_nodes)

        self._events = events
        self._edges = aggregate_edges(events)
        self._contacts = contacts
        self._window = (t_start, t_end)
        self._n_nodes = int(n_nodes)
        self._id_map = id_map
        self._full_view: Optional["GraphView"] = None
        self._lookup: Optional[Dict[str, int]] = None
        self._names: Optional[np.ndarray] = None

    @property
    def events(self) -> pd.DataFrame:
        return self._events

    @property
    def edges(self) -> pd.DataFrame:
        return self._edges

    @property
    def contacts(self) -> pd.DataFrame:
        return self._contacts

    @property
    def window(self) -> Tuple[int, int]:
        return self._window

    @property
    def t_start(self) -> int:
        return self._window[0]

    @property
    def t_end(self) -> int:
        return self._window[1]

    @property
    def n_nodes(self) -> int:
        return self._n_nodes

    @property
    def id_map(self) -> Optional[pd.DataFrame]:
        return self._id_map

    @property
    def full(self) -> "GraphView":
        """観測終了時点のビュー（キャッシュ）"""
        if self._full_view is None:
            self._full_view = GraphView(self, self.t_end)
        return self._full_view

    def view(self, cutoff: int) -> "GraphView":
        """検証なしのビュー（cutoff < t_start なら空のイベント集合）"""
        if cutoff >= self.t_end:
            return self.full
        return GraphView(self, cutoff)

    def day_index(self, t) -> Union[int, np.ndarray]:
        """日番号 = floor((t - t_start) / 86400)"""
        return (np.asarray(t, dtype=np.int64) - self.t_start) // SECONDS_PER_DAY if np.ndim(t) else \
            (int(t) - self.t_start) // SECONDS_PER_DAY

    @property
    def window_days(self) -> float:
        return (self.t_end - self.t_start) / SECONDS_PER_DAY

    def to_internal(self, external_ids: Sequence) -> np.ndarray:
        """外部ID → 内部ID（未知のIDは -1）"""
        if self._id_map is None:
            ids = pd.to_numeric(pd.Series(list(external_ids), dtype=object), errors="coerce")
            ids = ids.where((ids >= 0) & (ids < self.n_nodes))
            return ids.fillna(-1).to_numpy(dtype=np.int64)
        if self._lookup is None:
            self._lookup = dict(zip(self._id_map["external_id"].astype(str), self._id_map["internal_id"].astype(int)))
        return np.array([self._lookup.get(str(x), -1) for x in external_ids], dtype=np.int64)

    def to_external(self, internal_ids: Sequence[int]) -> List[str]:
        """内部ID → 外部ID"""
        if self._id_map is None:
            return [str(int(i)) for i in internal_ids]
        if self._names is None:
            self._names = self._id_map.sort_values("internal_id")["external_id"].astype(str).to_numpy()
        return [self._names[int(i)] for i in internal_ids]

    def edge(self, kind: str, src: int, dst: int) -> Optional[AggregatedEdge]:
        """集約辺を1本取得。連絡先は (src, dst) の順不同"""
        if kind == CONTACT:
            a, b = min(src, dst), max(src, dst)
            hit = self._contacts[(self._contacts["u"] == a) & (self._contacts["v"] == b)]
            return AggregatedEdge(CONTACT, a, b) if len(hit) else None
        return self.full.edge(kind, src, dst)

    def aggregated_edges(self, kind: Optional[str] = None) -> List[AggregatedEdge]:
        """集約辺の一覧（種別, 送信元, 宛先 の順）"""
        return self.full.aggregated_edges(kind)


class GraphView:
    """cutoff 以前のイベントだけが見えるスナップショット"""

    def __init__(self, base: TemporalMultigraph, cutoff: int):
        self.base = base
        self.cutoff = int(cutoff)
        self._events: Optional[pd.DataFrame] = None
        self._edges: Optional[pd.DataFrame] = None
        self._neighbors: Dict[Tuple[str, ...], List[set]] = {}
        self._nx: Dict[Tuple[str, bool], nx.Graph] = {}
        self._pagerank: Dict[Tuple[str, float, float, int], Dict[int, float]] = {}
        self._clustering: Dict[str, Dict[int, float]] = {}

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes

    @property
    def events(self) -> pd.DataFrame:
        if self._events is None:
            events = self.base.events
            if self.cutoff < self.base.t_end:
                events = events[events["timestamp"].to_numpy() <= self.cutoff].reset_index(drop=True)
            self._events = events
        return self._events

    @property
    def edges(self) -> pd.DataFrame:
        if self._edges is None:
            if self.cutoff >= self.base.t_end:
                self._edges = self.base.edges
            else:
                self._edges = aggregate_edges(self.events)
        return self._edges

    @property
    def contacts(self) -> pd.DataFrame:
        # 連絡先は時刻を持たないので常に見える
        return self.base.contacts

    def layer_pairs(self, kind: str) -> Tuple[np.ndarray, np.ndarray]:
        """レイヤーの辺 (送信元配列, 宛先配列)。連絡先は (u, v) で u < v"""
        if kind == CONTACT:
            return self.contacts["u"].to_numpy(), self.contacts["v"].to_numpy()
        if kind not in EVENT_KINDS:
            raise ValidationError(f"不明なレイヤー: {kind}")
        edges = self.edges
        mask = (edges["kind"] == kind).to_numpy()
        return edges["src"].to_numpy()[mask], edges["dst"].to_numpy()[mask]

    def check_node(self, n: int):
        if not (0 <= int(n) < self.n_nodes):
            raise UnknownNodeError(f"ノード {n} は存在しません")

    def neighbor_sets(self, *kinds: str) -> List[set]:
        """無向射影での隣接集合（複数レイヤーを指定すると和集合）"""
        key = tuple(sorted(kinds))
        if key not in self._neighbors:
            nbrs = [set() for _ in range(self.n_nodes)]
            for kind in key:
                src, dst = self.layer_pairs(kind)
                for a, b in zip(src.tolist(), dst.tolist()):
                    nbrs[a].add(b)
                    nbrs[b].add(a)
            self._neighbors[key] = nbrs
        return self._neighbors[key]

    def nx_graph(self, kind: str, directed: Optional[bool] = None) -> nx.Graph:
        """networkx グラフ（全ノードを含む）。directed=None ならレイヤー本来の向き"""
        if directed is None:
            directed = kind != CONTACT
        key = (kind, directed)
        if key not in self._nx:
            graph = nx.DiGraph() if directed else nx.Graph()
            graph.add_nodes_from(range(self.n_nodes))
            src, dst = self.layer_pairs(kind)
            graph.add_edges_from(zip(src.tolist(), dst.tolist()))
            self._nx[key] = graph
        return self._nx[key]

    def layer_nodes(self, kind: str) -> np.ndarray:
        """そのレイヤーに辺を持つノード"""
        src, dst = self.layer_pairs(kind)
        return np.unique(np.concatenate([src, dst]))

    def edge(self, kind: str, src: int, dst: int) -> Optional[AggregatedEdge]:
        edges = self.edges
        hit = edges[(edges["kind"] == kind) & (edges["src"] == src) & (edges["dst"] == dst)]
        if not len(hit):
            return None
        row = hit.iloc[0]
        return AggregatedEdge(kind, int(src), int(dst), self._edge_events(int(row["start"]), int(row["stop"])))

    def aggregated_edges(self, kind: Optional[str] = None) -> List[AggregatedEdge]:
        result = []
        kinds = [kind] if kind else list(EVENT_KINDS) + [CONTACT]
        for k in sorted(kinds):
            if k == CONTACT:
                result.extend(AggregatedEdge(CONTACT, int(u), int(v))
                              for u, v in zip(self.contacts["u"], self.contacts["v"]))
                continue
            edges = self.edges[self.edges["kind"] == k]
            for row in edges.itertuples(index=False):
                result.append(AggregatedEdge(k, int(row.src), int(row.dst),
                                             self._edge_events(int(row.start), int(row.stop))))
        return result

    def _edge_events(self, start: int, stop: int) -> Tuple[EdgeEvent, ...]:
        rows = self.events.iloc[start:stop]
        out = []
        for r in rows.itertuples(index=False):
            if r.kind == TRADE:
                out.append(EdgeEvent(r.kind, int(r.src), int(r.dst), int(r.timestamp),
                                     r.product_id, int(r.category_id), float(r.price), int(r.quantity)))
            else:
                out.append(EdgeEvent(r.kind, int(r.src), int(r.dst), int(r.timestamp)))
        return tuple(out)


GraphLike = Union[TemporalMultigraph, GraphView]


def as_view(g: GraphLike) -> GraphView:
    return g.full if isinstance(g, TemporalMultigraph) else g


# ============================================================
# 取り込み
# ============================================================

def _parser_error_line(error: Exception) -> Optional[int]:
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def read_csv_checked(path: PathLike, columns: List[str]) -> pd.DataFrame:
    """全列を文字列として読み込み、ヘッダーを検証する"""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False,
                         encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise IngestError(path, 1, "ヘッダーがありません")
    except pd.errors.ParserError as e:
        raise IngestError(path, _parser_error_line(e), f"CSVの形式が不正です: {e}")
    if [c.strip() for c in df.columns] != columns:
        raise IngestError(path, 1, f"ヘッダーが不正です（期待: {','.join(columns)}）")
    df.columns = columns
    df = df.fillna("")
    for col in columns:
        df[col] = df[col].astype(str).str.strip()
    return df


def check_rows(path: PathLike, checks: List[Tuple[np.ndarray, str]]):
    """最初に不正になる行を見つけてエラーにする（行番号はヘッダーを1行目とする）"""
    first_row, first_msg = None, None
    for mask, message in checks:
        idx = np.flatnonzero(mask)
        if len(idx) and (first_row is None or idx[0] < first_row):
            first_row, first_msg = int(idx[0]), message
    if first_row is not None:
        raise IngestError(path, first_row + 2, first_msg)


def is_integral(values: pd.Series) -> np.ndarray:
    return (values.notna() & (values == values.round())).to_numpy()


def _read_events(path: PathLike, window: Optional[Tuple[int, int]]) -> pd.DataFrame:
    df = read_csv_checked(path, EVENT_COLUMNS)
    kind = df["kind"]
    ts = pd.to_numeric(df["timestamp"], errors="coerce")
    price = pd.to_numeric(df["price"], errors="coerce")
    qty = pd.to_numeric(df["quantity"], errors="coerce")
    cat = pd.to_numeric(df["category_id"], errors="coerce")
    is_trade = (kind == TRADE).to_numpy()
    is_msg = (kind == MESSAGE).to_numpy()

    checks = [
        (~(is_trade | is_msg), "kind は trade か message です"),
        (((df["src"] == "") | (df["dst"] == "")).to_numpy(), "src/dst が空です"),
        (~is_integral(ts), "timestamp は整数秒です"),
        ((df["src"] == df["dst"]).to_numpy(), "自己ループは不可です"),
        (is_trade & (df["product_id"] == "").to_numpy(), "取引行に product_id がありません"),
        (is_trade & ~is_integral(cat), "取引行の category_id は整数です"),
        (is_trade & ~(price > 0).to_numpy(), "取引行の price は正の値です"),
        (is_trade & ~(is_integral(qty) & (qty >= 1).to_numpy()), "取引行の quantity は1以上の整数です"),
        (is_msg & (df[TRADE_FIELDS] != "").any(axis=1).to_numpy(), "メッセージ行の取引列は空欄です"),
    ]
    if window is not None:
        checks.append((is_integral(ts) & ((ts < window[0]) | (ts > window[1])).to_numpy(),
                       f"timestamp が観測期間 [{window[0]}, {window[1]}] の外です"))
    check_rows(path, checks)

    df["timestamp"] = ts.astype(np.int64) if len(df) else pd.Series([], dtype=np.int64)
    df["price"] = price.where(is_trade)
    df["quantity"] = qty.where(is_trade)
    df["category_id"] = cat.where(is_trade)
    df["product_id"] = df["product_id"].where(is_trade, None)
    return df


def _read_contacts(path: PathLike) -> pd.DataFrame:
    df = read_csv_checked(path, CONTACT_COLUMNS)
    checks = [
        (((df["u"] == "") | (df["v"] == "")).to_numpy(), "u/v が空です"),
        ((df["u"] == df["v"]).to_numpy(), "自己ループは不可です"),
    ]
    check_rows(path, checks)
    return df


def _sorted_ids(ids: np.ndarray) -> List[str]:
    """外部IDの並び順（全て数字なら数値順、それ以外は文字列順）"""
    unique = sorted(set(ids.tolist()))
    if all(s.isdigit() for s in unique):
        return sorted(unique, key=int)
    return unique


def load_dataset(
    event_file: PathLike,
    contact_file: PathLike,
    window: Optional[Tuple[int, int]] = None,
    id_map_file: Optional[PathLike] = None,
) -> TemporalMultigraph:
    """
    events.csv / contacts.csv を読み込んでグラフを構築する

    Args:
        event_file: イベントCSV
        contact_file: 連絡先CSV
        window: 観測期間 [t_start, t_end]。None ならイベント時刻の最小・最大
        id_map_file: 指定すると id_map.csv を書き出す

    Returns:
        TemporalMultigraph（ノードIDは 0..n-1 に詰め直し済み）
    """
    events = _read_events(event_file, window)
    contacts = _read_contacts(contact_file)

    external = np.concatenate([
        events["src"].to_numpy(dtype=object), events["dst"].to_numpy(dtype=object),
        contacts["u"].to_numpy(dtype=object), contacts["v"].to_numpy(dtype=object),
    ]).astype(str)
    ordered = _sorted_ids(external)
    id_map = pd.DataFrame({"external_id": ordered, "internal_id": np.arange(len(ordered), dtype=np.int64)})
    lookup = dict(zip(ordered, range(len(ordered))))

    events["src"] = events["src"].map(lookup)
    events["dst"] = events["dst"].map(lookup)
    contacts = pd.DataFrame({"u": contacts["u"].map(lookup), "v": contacts["v"].map(lookup)})

    if window is None:
        ts = events["timestamp"]
        window = (int(ts.min()), int(ts.max())) if len(ts) else (0, 0)

    g = TemporalMultigraph(events, contacts, window, n_nodes=len(ordered), id_map=id_map)
    if id_map_file is not None:
        write_id_map(g, id_map_file)
    logger.info("取り込み完了: ノード %d, イベント %d, 集約辺 %d, 連絡先 %d",
                g.n_nodes, len(g.events), len(g.edges), len(g.contacts))
    return g


def write_id_map(g: TemporalMultigraph, path: PathLike) -> Path:
    """id_map.csv を書き出す"""
    id_map = g.id_map
    if id_map is None:
        id_map = pd.DataFrame({"external_id": np.arange(g.n_nodes), "internal_id": np.arange(g.n_nodes)})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    id_map[ID_MAP_COLUMNS].to_csv(path, index=False, encoding="utf-8")
    return path


def events_frame(g: TemporalMultigraph) -> pd.DataFrame:
    """events.csv 形式のフレーム（外部IDで出力）"""
    ev = g.events
    names = np.array(g.to_external(range(g.n_nodes)), dtype=object)
    out = pd.DataFrame({
        "kind": ev["kind"],
        "src": names[ev["src"].to_numpy()] if len(ev) else [],
        "dst": names[ev["dst"].to_numpy()] if len(ev) else [],
        "timestamp": ev["timestamp"],
        "product_id": ev["product_id"],
        "category_id": ev["category_id"],
        "price": ev["price"],
        "quantity": ev["quantity"],
    })
    return out.sort_values(["timestamp", "kind", "src", "dst"], kind="mergesort")


def contacts_frame(g: TemporalMultigraph) -> pd.DataFrame:
    """contacts.csv 形式のフレーム（外部IDで出力）"""
    names = np.array(g.to_external(range(g.n_nodes)), dtype=object)
    c = g.contacts
    return pd.DataFrame({
        "u": names[c["u"].to_numpy()] if len(c) else [],
        "v": names[c["v"].to_numpy()] if len(c) else [],
    })


def write_dataset(g: TemporalMultigraph, out_dir: PathLike) -> Tuple[Path, Path]:
    """events.csv / contacts.csv を書き出す（再取り込み可能な形式）"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.csv"
    contacts_path = out_dir / "contacts.csv"
    events_frame(g).to_csv(events_path, index=False, encoding="utf-8")
    contacts_frame(g).to_csv(contacts_path, index=False, encoding="utf-8")
    return events_path, contacts_path


# ============================================================
# ノード・レイヤー分析
# ============================================================

def network_stats(g: GraphLike, kind: str) -> NetworkStats:
    """
    レイヤー単位の基本統計

    平均次数は 有向レイヤー = 辺数 / ノード数、連絡先 = 2 × 辺数 / ノード数。
    平均クラスタ係数はレイヤーに現れるノード全体の平均（無向射影）。
    """
    view = as_view(g)
    src, dst = view.layer_pairs(kind)
    nodes = view.layer_nodes(kind)
    n, m = len(nodes), len(src)
    if n == 0:
        return NetworkStats(kind, 0, 0, 0.0, 0.0, 0)

    pairs = len(set(zip(np.minimum(src, dst).tolist(), np.maximum(src, dst).tolist())))
    avg_degree = (2.0 * m / n) if kind == CONTACT else (m / n)
    projection = view.nx_graph(kind, directed=False).subgraph(nodes.tolist())
    avg_clustering = float(nx.average_clustering(projection))
    return NetworkStats(kind, n, m, avg_degree, avg_clustering, pairs)


def snapshot_at(g: TemporalMultigraph, cutoff: int) -> GraphView:
    """cutoff 時点のスナップショット（観測期間外はエラー）"""
    if not (g.t_start <= cutoff <= g.t_end):
        raise SnapshotError(f"cutoff {cutoff} が観測期間 [{g.t_start}, {g.t_end}] の外です")
    return g.view(cutoff)


def mutual_neighbors(view: GraphLike, kind: str, u: int, v: int) -> int:
    """無向射影での共通隣接ノード数"""
    view = as_view(view)
    if u == v:
        raise ValidationError("u と v は異なるノードです")
    view.check_node(u)
    view.check_node(v)
    nbrs = view.neighbor_sets(kind)
    return len(nbrs[u] & nbrs[v])


def clustering_coefficient(view: GraphLike, kind: str, n: int) -> float:
    """局所クラスタ係数（無向射影、多重度は無視。次数2未満は0）"""
    view = as_view(view)
    view.check_node(n)
    cache = view._clustering.setdefault(kind, {})
    if n not in cache:
        cache[n] = float(nx.clustering(view.nx_graph(kind, directed=False), n))
    return cache[n]


def pagerank(
    view: GraphLike,
    kind: str,
    damping: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> Dict[int, float]:
    """
    PageRank（全ノード対象。ぶら下がりノードの質量は一様に再配分）

    連絡先レイヤーは各辺を双方向の有向辺として扱う。
    """
    view = as_view(view)
    config = get_graph_config()
    damping = config.get("pagerank_damping", 0.85) if damping is None else damping
    tol = config.get("pagerank_tol", 1e-10) if tol is None else tol
    max_iter = config.get("pagerank_max_iter", 100) if max_iter is None else max_iter

    key = (kind, float(damping), float(tol), int(max_iter))
    if key not in view._pagerank:
        graph = view.nx_graph(kind)
        if graph.number_of_nodes() == 0:
            view._pagerank[key] = {}
            return view._pagerank[key]
        try:
            scores = nx.pagerank(graph, alpha=damping, tol=tol, max_iter=max_iter)
        except nx.PowerIterationFailedConvergence:
            logger.warning("PageRank が %d 回で収束しませんでした（%s）。上限を10倍にして再計算します",
                           max_iter, kind)
            scores = nx.pagerank(graph, alpha=damping, tol=tol, max_iter=max_iter * 10)
        view._pagerank[key] = {int(k): float(s) for k, s in scores.items()}
    return view._pagerank[key]


def role_counts(g: GraphLike) -> Dict[str, int]:
    """購入者数・販売者数・両方の数・取引カテゴリ数"""
    view = as_view(g)
    trades = view.events[view.events["kind"] == TRADE]
    buyers = set(trades["src"].tolist())
    sellers = set(trades["dst"].tolist())
    return {
        "buyers": len(buyers),
        "sellers": len(sellers),
        "both": len(buyers & sellers),
        "categories": int(trades["category_id"].nunique()),
    }
