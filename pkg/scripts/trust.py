#!/usr/bin/env python3
"""
信頼の価格（売り手評価と価格のクラスタ中央値からの乖離）

ロジック:
1. 同一商品クラスタごとに価格の中央値を算出（出品1件のクラスタは除外）
2. 出品ごとに 乖離(%) = 100 × (価格 − 中央値) / 中央値
3. 評価帯ごと（出品単位）または売り手ごと（売り手単位, 15件以上）に平均
4. d(r) = a·(r/100)^b + c を当てはめ、R²・乖離0となる評価・弾力性を求める

評価帯:
- [0, 50) は1つ
- [50, 90) は1ポイント刻み
- [90, 100] は0.1ポイント刻み
"""

import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.graph_core import check_rows, read_csv_checked
from scripts.utils.config import get_trust_config
from scripts.utils.errors import FitError
from scripts.utils.log import get_logger

logger = get_logger(__name__)

CLUSTER_COLUMNS = ["cluster_id", "seller", "item_id", "price"]
RATING_COLUMNS = ["seller", "rating_percent"]
DEVIATION_COLUMNS = ["cluster_id", "seller", "item_id", "price", "median_price", "rating", "deviation"]
BUCKET_COLUMNS = ["bin_lo", "bin_hi", "rating", "deviation", "weight"]


@dataclass(frozen=True)
class DeviationPoint:
    rating: float
    deviation: float
    weight: int = 1


@dataclass
class DeviationReport:
    """出品単位の乖離と、除外件数"""
    points: pd.DataFrame
    skipped_missing_rating: int = 0
    dropped_clusters: int = 0
    dropped_items: int = 0


@dataclass(frozen=True)
class PowerFit:
    a: float
    b: float
    c: float
    r_squared: float
    zero_crossing: Optional[float]
    elasticity: Optional[float]
    slope_at_median: float
    median_rating: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


# ============================================================
# 読み込み
# ============================================================

def read_listings(path) -> pd.DataFrame:
    """clusters.csv（cluster_id,seller,item_id,price）"""
    df = read_csv_checked(path, CLUSTER_COLUMNS)
    price = pd.to_numeric(df["price"], errors="coerce")
    check_rows(path, [
        (((df["cluster_id"] == "") | (df["seller"] == "") | (df["item_id"] == "")).to_numpy(),
        "cluster_id/seller/item_id が空です"),
        (~(price > 0).to_numpy(), "price は正の値です"),
    ])
    df["price"] = price.astype(float)
    return df


def read_ratings(path) -> pd.DataFrame:
    """ratings.csv（seller,rating_percent）"""
    df = read_csv_checked(path, RATING_COLUMNS)
    rating = pd.to_numeric(df["rating_percent"], errors="coerce")
    check_rows(path, [
        ((df["seller"] == "").to_numpy(), "seller が空です"),
        (~((rating >= 0) & (rating <= 100)).to_numpy(), "rating_percent は0〜100です"),
        (df["seller"].duplicated().to_numpy(), "seller が重複しています"),
    ])
    df["rating_percent"] = rating.astype(float)
    return df


# ============================================================
# 乖離
# ============================================================

def price_deviations(
    listings: pd.DataFrame,
    ratings: pd.DataFrame,
    min_cluster_size: Optional[int] = None,
) -> DeviationReport:
    """
    出品ごとのクラスタ中央値からの乖離(%)

    中央値はクラスタの全出品で計算する（偶数件なら中央2値の平均）。
    評価のない売り手の出品は除外して件数を返す。
    """
    if min_cluster_size is None:
        min_cluster_size = int(get_trust_config().get("min_cluster_size", 2))

    df = listings[["cluster_id", "seller", "item_id", "price"]].copy()
    df["seller"] = df["seller"].astype(str)
    sizes = df.groupby("cluster_id")["price"].transform("size")
    small = sizes < min_cluster_size
    dropped_clusters = int(df.loc[small, "cluster_id"].nunique())
    dropped_items = int(small.sum())
    df = df[~small].copy()

    df["median_price"] = df.groupby("cluster_id")["price"].transform("median")
    df["deviation"] = 100.0 * (df["price"] - df["median_price"]) / df["median_price"]

    rating_map = ratings.set_index(ratings["seller"].astype(str))["rating_percent"]
    df["rating"] = df["seller"].map(rating_map)
    missing = df["rating"].isna()
    skipped = int(missing.sum())
    if skipped:
        logger.info("評価のない売り手の出品を %d 件スキップしました", skipped)
    df = df[~missing]

    return DeviationReport(
        points=df[DEVIATION_COLUMNS].reset_index(drop=True),
        skipped_missing_rating=skipped,
        dropped_clusters=dropped_clusters,
        dropped_items=dropped_items,
    )


def rating_bin_edges() -> np.ndarray:
    """評価帯の境界"""
    coarse = np.array([0.0, 50.0])
    middle = np.arange(51, 91, dtype=float)
    fine = np.round(np.linspace(90.0, 100.0, 101), 1)[1:]
    return np.concatenate([coarse, middle, fine])


def bucket_deviations(points: pd.DataFrame) -> pd.DataFrame:
    """評価帯ごとの平均乖離（weight = 出品数）。100% は最後の帯に入れる"""
    edges = rating_bin_edges()
    if points.empty:
        return pd.DataFrame(columns=BUCKET_COLUMNS)
    idx = np.searchsorted(edges, points["rating"].to_numpy(dtype=float), side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    frame = pd.DataFrame({"bin": idx, "rating": points["rating"].to_numpy(),
                          "deviation": points["deviation"].to_numpy()})
    grouped = frame.groupby("bin").agg(rating=("rating", "mean"), deviation=("deviation", "mean"),
                                       weight=("deviation", "size")).reset_index()
    grouped["bin_lo"] = edges[grouped["bin"].to_numpy()]
    grouped["bin_hi"] = edges[grouped["bin"].to_numpy() + 1]
    return grouped[BUCKET_COLUMNS]


def seller_deviation_profile(
    listings: pd.DataFrame,
    ratings: pd.DataFrame,
    min_items: Optional[int] = None,
) -> pd.DataFrame:
    """売り手ごとの平均乖離（出品数が min_items 未満の売り手は除外）"""
    if min_items is None:
        min_items = int(get_trust_config().get("min_items", 15))
    points = price_deviations(listings, ratings).points
    return profile_from_points(points, min_items)


def profile_from_points(points: pd.DataFrame, min_items: int) -> pd.DataFrame:
    profile = points.groupby("seller").agg(
        rating=("rating", "first"), deviation=("deviation", "mean"), weight=("deviation", "size"),
    ).reset_index()
    return profile[profile["weight"] >= min_items].reset_index(drop=True)


def dataset_scale(listings: pd.DataFrame) -> dict:
    """出品数・クラスタ数・売り手数"""
    return {
        "items": int(len(listings)),
        "clusters": int(listings["cluster_id"].nunique()),
        "sellers": int(listings["seller"].nunique()),
    }


# ============================================================
# べき関数の当てはめ
# ============================================================

def _as_arrays(points: Union[pd.DataFrame, Sequence[DeviationPoint]]):
    if isinstance(points, pd.DataFrame):
        r = points["rating"].to_numpy(dtype=float)
        d = points["deviation"].to_numpy(dtype=float)
        w = points["weight"].to_numpy(dtype=float) if "weight" in points else np.ones(len(points))
    else:
        r = np.array([p.rating for p in points], dtype=float)
        d = np.array([p.deviation for p in points], dtype=float)
        w = np.array([p.weight for p in points], dtype=float)
    return r, d, w


def _solve_linear(x: np.ndarray, d: np.ndarray, w: np.ndarray, b: float):
    """b を固定したときの (a, c) の重み付き最小二乗解と残差平方和"""
    f = np.power(x, b)
    sw = np.sqrt(w)
    design = np.column_stack([f, np.ones_like(f)]) * sw[:, None]
    coef, *_ = np.linalg.lstsq(design, d * sw, rcond=None)
    a, c = float(coef[0]), float(coef[1])
    resid = d - (a * f + c)
    return a, c, float(np.sum(w * resid ** 2))


def fit_power(
    points: Union[pd.DataFrame, Sequence[DeviationPoint]],
    b_grid: Optional[np.ndarray] = None,
    refine: Optional[bool] = None,
) -> PowerFit:
    """
    d(r) = a·(r/100)^b + c を最小二乗で当てはめる

    b は対数等間隔のグリッドで探索し、各 b で (a, c) を線形に解く。
    refine=True なら最良点の両隣の区間で minimize_scalar により b を詰める（残差が減るときだけ採用）。

    Raises:
        FitError: 評価の値が3種類未満
    """
    config = get_trust_config()
    if b_grid is None:
        b_grid = np.logspace(np.log10(config.get("b_min", 1)), np.log10(config.get("b_max", 400)),
                             int(config.get("grid_steps", 200)))
    if refine is None:
        refine = bool(config.get("refine", True))

    r, d, w = _as_arrays(points)
    if len(np.unique(r)) < 3:
        raise FitError("当てはめには3種類以上の評価値が必要です")
    x = r / 100.0

    b_grid = np.asarray(b_grid, dtype=float)
    results = [_solve_linear(x, d, w, b) for b in b_grid]
    best = int(np.argmin([res[2] for res in results]))
    b = float(b_grid[best])
    a, c, ss_res = results[best]

    if refine and len(b_grid) > 1:
        lo = np.log(b_grid[max(best - 1, 0)])
        hi = np.log(b_grid[min(best + 1, len(b_grid) - 1)])
        if hi > lo:
            opt = minimize_scalar(lambda lb: _solve_linear(x, d, w, float(np.exp(lb)))[2],
                                  bounds=(lo, hi), method="bounded")
            b_ref = float(np.exp(opt.x))
            a_ref, c_ref, ss_ref = _solve_linear(x, d, w, b_ref)
            if ss_ref < ss_res:
                a, b, c, ss_res = a_ref, b_ref, c_ref, ss_ref

    mean = np.average(d, weights=w)
    ss_tot = float(np.sum(w * (d - mean) ** 2))
    if ss_tot > 0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res <= 1e-12 else 0.0

    zero_crossing = None
    if a != 0:
        ratio = -c / a
        if ratio > 0:
            crossing = 100.0 * ratio ** (1.0 / b)
            if 0 < crossing <= 100:
                zero_crossing = float(crossing)

    median_rating = float(np.median(r))
    xm = median_rating / 100.0
    level = a * xm ** b
    denom = level + c + 100.0
    elasticity = float(b * level / denom) if denom != 0 else None
    slope = float(a * b * xm ** (b - 1) / 100.0)

    return PowerFit(a=a, b=b, c=c, r_squared=float(r_squared), zero_crossing=zero_crossing,
                    elasticity=elasticity, slope_at_median=slope, median_rating=median_rating,
                    n_points=int(len(r)))


def predict(fit: PowerFit, rating) -> np.ndarray:
    return fit.a * np.power(np.asarray(rating, dtype=float) / 100.0, fit.b) + fit.c
