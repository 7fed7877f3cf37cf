"""
テストパッケージ - conlab 測地写像検証ツールキット

このパッケージには以下のテストモジュールが含まれています:
- test_dsl: 数式言語のテスト
- test_geometry: 計量チャート・測地線のテスト
- test_fields: 共円場・シニュコフ系・移送のテスト
- test_cone: 錐の構成と持ち上げのテスト
- test_jordan: ジョルダン代数のテスト
- test_fileio_catalog: ファイル形式とカタログのテスト
- test_reports_config: レポートと実行設定のテスト
- test_main: コマンドラインのテスト
"""
