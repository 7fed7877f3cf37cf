#!/usr/bin/env python3
"""
カタログ自己検証プログラム - 解析例が自分の宣言した検証を通るかの確認

各カタログ項目について宣言された検証を順に実行し、期待どおりの合否と
所要時間を表示します。CI やインストール直後の動作確認に使います。

動作内容:
- 項目ごとに検証を実行（省略時は全項目）
- 検証ごとに最大残差・許容誤差・所要時間を表示
- 1項目あたりの所要時間が上限を超えたら警告
- 全項目が期待どおりなら終了コード0、そうでなければ1
"""

import argparse
import logging
import sys
import time
from pathlib import Path

# プロジェクトルートをパスに追加
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from modules import ConlabError  # noqa: E402
from modules.catalog import get_entry, list_entries, run_declared_checks  # noqa: E402
from modules.config import load_run_config  # noqa: E402

# 1項目あたりの所要時間の目安（秒）
ENTRY_TIME_LIMIT = 10.0


def check_entry(name: str, seed: int) -> bool:
    """
    1項目を検証して結果を表示

    Returns:
        bool: 全ての検証が期待どおりなら True
    """
    entry = get_entry(name)
    print(f"\n▶ {name}: {entry.note}")
    print("-" * 60)
    started = time.perf_counter()
    reports, ok = run_declared_checks(name, load_run_config(seed=seed))
    elapsed = time.perf_counter() - started
    for report in reports:
        mark = "✓" if report.passed else "✗"
        print(f"  {mark} {report.equation:<36} max={report.max:.3e}  tol={report.tolerance:.1e}")
    print(f"  所要時間: {elapsed:.2f} 秒")
    if elapsed > ENTRY_TIME_LIMIT:
        print(f"  ⚠ 目安の {ENTRY_TIME_LIMIT:.0f} 秒を超えました")
    return ok


def main():
    """メイン関数"""
    # コマンドライン引数の解析
    parser = argparse.ArgumentParser(description="カタログ自己検証プログラム - 解析例の検証確認")
    parser.add_argument('names', nargs='*', help='検証する項目名（省略時は全項目）')
    parser.add_argument('--seed', type=int, default=None, help='標本点の乱数シード')
    parser.add_argument('--verbose', action='store_true', help='検証ごとのログを表示')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    print("=" * 60)
    print("カタログ自己検証プログラム")
    print("=" * 60)

    names = args.names or list_entries()
    failed = []
    try:
        for name in names:
            if not check_entry(name, args.seed):
                failed.append(name)
    except ConlabError as e:
        print(f"\n検証中にエラーが発生しました: {e}")
        sys.exit(2)
    except KeyboardInterrupt:
        print("\n検証が中止されました")
        sys.exit(2)

    print("\n" + "=" * 60)
    if failed:
        print(f"期待どおりでない項目があります: {', '.join(failed)}")
        print("=" * 60)
        sys.exit(1)
    print(f"すべての項目（{len(names)} 件）が期待どおりでした！")
    print("=" * 60)


if __name__ == "__main__":
    main()
