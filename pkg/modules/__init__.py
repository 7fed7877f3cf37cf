"""
conlab - 測地写像検証ツールキット - モジュールパッケージ

このパッケージには以下のモジュールが含まれています:
- dsl: 数式言語の字句解析・構文解析・記号微分
- geometry: 計量チャート・クリストッフェル記号・共変微分・測地線積分
- fields: レヴィ＝チヴィタ方程式・シニュコフ系・共円場の残差検証
- cone: 錐計量（n+1次元）の構成と持ち上げ
- jordan: シニュコフ解のジョルダン代数
- reports: 残差レポートとJSONスキーマ検証
- config: 実行設定（シード・格子・許容誤差）
- fileio: 計量ファイル・場ファイル・軌道ファイルの読み書き
- catalog: 解析的な例のカタログ
"""

__version__ = "1.0.0"
__author__ = "conlab developers"


class ConlabError(Exception):
    """conlab全体の基底例外"""
    pass
