"""
出力ファイルユーティリティ

出力は一時ディレクトリに書いてから rename する（途中失敗時に部分出力を残さない）。
"""

import hashlib
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Union

import pandas as pd

PathLike = Union[str, Path]


@contextmanager
def staged_output(out_dir: PathLike) -> Iterator[Path]:
    """出力先と同じファイルシステム上の一時ディレクトリを返すコンテキストマネージャ

    ブロックが正常終了した場合のみ、中のファイルを out_dir へ移動する。
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield staging
        for item in sorted(staging.iterdir()):
            os.replace(item, out_dir / item.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def write_csv(df: pd.DataFrame, path: PathLike) -> Path:
    """DataFrameをCSVで保存（UTF-8、インデックスなし）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8")
    return path


def write_json(obj, path: PathLike) -> Path:
    """JSONで保存（キー順固定）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def file_digest(path: PathLike) -> str:
    """ファイルのsha256"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digests(paths) -> Dict[str, str]:
    """ファイル名 → sha256 の辞書（存在するものだけ）"""
    return {Path(p).name: file_digest(p) for p in paths if Path(p).exists()}
