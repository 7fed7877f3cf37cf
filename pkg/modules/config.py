#!/usr/bin/env python3
"""
実行設定モジュール - サンプリング格子と許容誤差の管理

検証処理が共有する設定（乱数シード・格子密度・内側余白・許容誤差・並列数）を
一か所にまとめます。既定値はコード内に持ち、.env ファイルと環境変数で上書きできます。

環境変数:
- CONLAB_SEED: 乱数シード（既定 42）
- CONLAB_WORKERS: 残差評価の並列数（既定 1）
- CONLAB_RANDOM_POINTS: ランダム標本点数（既定 200）
- CONLAB_LATTICE: 1軸あたりの格子点数（既定 8）
"""

import os
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

from modules import ConlabError


class ConfigError(ConlabError):
    """設定値が不正"""
    pass


# 検証ごとの既定許容誤差
DEFAULT_TOLERANCES: Dict[str, float] = {
    "levi-civita": 1e-8,
    "sinyukov": 1e-8,
    "vnk-lambda": 1e-8,
    "vnk-mu": 1e-8,
    "concircular": 1e-9,
    "special": 1e-9,
    "convergent": 1e-9,
    "square-bilinear": 1e-8,
    "square-covector": 1e-8,
    "square-scalar": 1e-8,
    "vn0-sinyukov": 1e-12,
    "vn0-lambda": 1e-12,
    "vn0-mu-constant": 1e-12,
    "cone-convergent": 1e-9,
    "cone-mixed-connection": 1e-10,
    "cone-inverse": 1e-12,
    "parallel-covector": 1e-9,
    "parallel-bilinear": 1e-9,
    "closure": 1e-8,
    "isomorphism": 1e-9,
    "commutativity": 1e-10,
    "jordan-identity": 1e-8,
    "ideal-projection": 1e-7,
    "ideal-reproduction": 1e-7,
    "geodesic-map": 1e-8,
    "geodesic-energy": 1e-6,
    "fd-oracle": 1e-6,
    "metricity": 1e-10,
    "inverse-consistency": 1e-12,
    "sequence-parallel": 1e-8,
    "sequence-orthogonality": 1e-8,
    "transfer": 1e-8,
}

# 前提条件チェックの許容誤差（持ち上げ・ジョルダン要素の受理）
PRECONDITION_TOLERANCE = 1e-8
# 共円場の「基本」判定しきい値
BASIC_THRESHOLD = 1e-9


@dataclass(frozen=True)
class RunConfig:
    """検証実行の設定"""
    seed: int = 42                     # ランダム標本の乱数シード
    random_points: int = 200           # ランダム標本点数
    lattice_per_axis: int = 8          # 1軸あたりの格子点数（0で格子なし）
    inset: float = 0.05                # 領域境界からの内側余白（区間幅に対する比）
    workers: int = 1                   # 残差評価の並列数
    quadrature_nodes: int = 64         # 線積分のガウス・ルジャンドル節点数
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def __post_init__(self):
        if self.random_points < 0 or self.lattice_per_axis < 0:
            raise ConfigError("標本点数は0以上である必要があります")
        if self.random_points == 0 and self.lattice_per_axis == 0:
            raise ConfigError("標本点が1つもありません")
        if not 0.0 <= self.inset < 0.5:
            raise ConfigError(f"内側余白が範囲外です: {self.inset}")
        if self.workers < 1:
            raise ConfigError(f"並列数は1以上である必要があります: {self.workers}")
        if self.quadrature_nodes < 2:
            raise ConfigError(f"節点数が少なすぎます: {self.quadrature_nodes}")
        for name, value in self.tolerances.items():
            if not value > 0.0:
                raise ConfigError(f"許容誤差は正である必要があります: {name}={value}")

    def tolerance(self, equation: str) -> float:
        """検証名に対応する許容誤差"""
        try:
            return self.tolerances[equation]
        except KeyError:
            raise ConfigError(f"未知の検証名です: {equation}") from None

    def with_tolerance(self, equation: str, value: float) -> "RunConfig":
        """許容誤差を1つ差し替えた設定を返す"""
        tolerances = dict(self.tolerances)
        tolerances[equation] = value
        return replace(self, tolerances=tolerances)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"環境変数 {name} が整数ではありません: {raw!r}") from None


def load_run_config(env_file: Optional[Path] = None, **overrides) -> RunConfig:
    """
    .env ファイルと環境変数から実行設定を読み込む

    Args:
        env_file: .env ファイルのパス（省略時はカレントディレクトリの .env）
        **overrides: 明示的に上書きする設定値

    Returns:
        RunConfig: 実行設定
    """
    logger = logging.getLogger(__name__)
    env_path = Path(env_file) if env_file is not None else Path(".env")
    if env_path.exists():
        load_dotenv(env_path)
        logger.debug(f".envファイルを読み込みました: {env_path.absolute()}")

    values = {
        "seed": _env_int("CONLAB_SEED", 42),
        "workers": _env_int("CONLAB_WORKERS", 1),
        "random_points": _env_int("CONLAB_RANDOM_POINTS", 200),
        "lattice_per_axis": _env_int("CONLAB_LATTICE", 8),
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    config = RunConfig(**values)
    logger.debug(f"実行設定: seed={config.seed}, workers={config.workers}, "
                 f"random={config.random_points}, lattice={config.lattice_per_axis}")
    return config
