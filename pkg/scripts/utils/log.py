"""
ログ設定ユーティリティ

環境変数 TRIAD_LOG (error / info / debug) でログレベルを切り替える。
.env があれば読み込む。
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# .envファイルを読み込み
load_dotenv(Path(__file__).parent.parent.parent / ".env")

LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None) -> int:
    """ルートロガーを設定し、適用したレベルを返す"""
    name = (level or os.getenv("TRIAD_LOG") or "info").lower()
    numeric = LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    return numeric


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
