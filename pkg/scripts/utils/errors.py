"""
例外定義

ValidationError系はCLIで終了コード1に変換される。
"""

from pathlib import Path
from typing import Optional, Union


class ValidationError(Exception):
    """入力・前提条件の検証エラー"""


class IngestError(ValidationError):
    """CSV取り込み時のエラー（ファイル名と行番号付き）"""

    def __init__(self, path: Union[str, Path], line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        location = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{location}: {message}")


class SnapshotError(ValidationError):
    """観測期間外のスナップショット指定"""


class UnknownNodeError(ValidationError):
    """存在しないノードID"""


class FitError(ValidationError):
    """フィッティング不能なデータ"""


class ConfigError(ValidationError):
    """設定値の不正"""
