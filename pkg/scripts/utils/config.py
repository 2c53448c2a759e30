"""
設定ファイル読み込みユーティリティ
"""

import yaml
from pathlib import Path

CONFIG_DIR = Path(__file__).parent.parent.parent / "config"
CONFIG_PATH = CONFIG_DIR / "settings.yml"
FEATURE_SETS_PATH = CONFIG_DIR / "feature_sets.yml"


def load_config(path: Path = CONFIG_PATH) -> dict:
    """設定ファイルを読み込む"""
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def get_graph_config() -> dict:
    """グラフ（PageRank等）の設定を取得"""
    return load_config().get("graph", {})


def get_census_config() -> dict:
    """トライアド集計の設定を取得"""
    return load_config().get("census", {})


def get_infopass_config() -> dict:
    """情報伝播計測の設定を取得"""
    return load_config().get("infopass", {})


def get_trust_config() -> dict:
    """信頼価格分析の設定を取得"""
    return load_config().get("trust", {})


def get_choice_config() -> dict:
    """購買先予測の設定を取得"""
    return load_config().get("choice", {})


def get_syngen_config() -> dict:
    """合成データ生成のデフォルト設定を取得"""
    return load_config().get("syngen", {})


def get_feature_sets() -> dict:
    """特徴量サブセット定義を取得（名前 → 特徴量名リスト）"""
    data = load_config(FEATURE_SETS_PATH)
    sets = {}
    for entry in data.get("feature_sets", []):
        # include はメタデータ特徴量などの共通部分
        sets[entry["name"]] = list(entry.get("include", [])) + list(entry.get("features", []))
    return sets
