#!/usr/bin/env python3
"""
conlab - 測地写像検証ツールキット - メインプログラム

計量ファイルと場ファイルを読み込み、測地写像・共円場・シニュコフ系・錐・
ジョルダン代数の各方程式を標本点上で検証して、JSONレポートを標準出力に書き出します。

主な機能:
- verify   : 共円場・シニュコフ系・V_n(K)・V_n(0)・レヴィ＝チヴィタ方程式・二乗恒等式・差分参照
- cone     : 錐の構成、共円場と解の持ち上げ、平行性・収束場の検証
- jordan   : ジョルダン積・公理・錐との同型・共円イデアルの検証
- geodesic : 測地線の積分（TSV出力）と測地写像の確認
- fields   : 共円場の移送、平行余ベクトル列の構成
- catalog  : 解析例の一覧・ファイル出力・自己検証

使用方法:
  python3 main.py catalog list
  python3 main.py catalog emit sphere2 ./work
  python3 main.py verify concircular --metric work/sphere2.metric --field work/sphere2.conc
  python3 main.py geodesic map-check --g work/flat2.metric --gbar work/klein2.metric --x0 0.1 0.1 --v0 1 0.5

終了コード:
  0: 全ての検証に合格
  1: 検証に不合格（JSONレポートは出力されます）
  2: 引数・入出力・ファイル形式のエラー
  3: 計量が特異な点に当たった（その点を worst_point とする不合格レポートを出力）
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

# プロジェクトルートをパスに追加
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from modules import ConlabError  # noqa: E402
from modules.catalog import emit_entry, field_components, get_entry, list_entries, run_declared_checks  # noqa: E402
from modules.cone import (  # noqa: E402
    DEFAULT_X0_DOMAIN, ConeSpace, build_cone, check_cone, check_convergent_field, check_parallel_bilinear,
    check_parallel_covector, lift_concircular, lift_solution,
)
from modules.config import DEFAULT_TOLERANCES, ConfigError, RunConfig, load_run_config  # noqa: E402
from modules.fields import (  # noqa: E402
    GeodesicPair, PreconditionError, build_parallel_sequence, check_concircular, check_levi_civita,
    check_sinyukov, check_square_identities, check_transfer, check_vn0, check_vnk, classification_of,
    classify_mapping_closure, select_square_constant,
)
from modules.fileio import (  # noqa: E402
    FieldFile, FieldFileKind, FileFormatError, field_kind_of, format_covector, format_lifted, format_metric,
    format_solution, load_field, load_metric, parse_field_text, read_text, write_json, write_text,
    write_trajectory,
)
from modules.geometry import (  # noqa: E402
    SINGULAR_TOLERANCE, MetricChart, SingularMetricError, build_sample_grid, check_metric_consistency,
    finite_difference_report, geodesic_energy_report, geodesic_map_check, integrate_geodesic,
)
from modules.jordan import (  # noqa: E402
    ClosureError, JordanElement, admit_element, check_ideal_membership, check_isomorphism, check_jordan_axioms,
    jordan_product, unit_element,
)
from modules.reports import (  # noqa: E402
    ResidualReport, build_document, combine_reports, dumps_document, render_human, single_value_report,
    validate_document,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_SINGULAR = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class UsageError(ConlabError):
    """コマンドライン引数が不正"""
    pass


@dataclass
class CommandResult:
    """1つのサブコマンドの結果"""
    reports: List[ResidualReport]
    extras: Dict[str, Any] = field(default_factory=dict)


# ===== 入力の読み込み =====

def _field(path: str, dim: int, *kinds: FieldFileKind) -> FieldFile:
    loaded = load_field(path, dim)
    if kinds and loaded.kind not in kinds:
        expected = " / ".join(k.value for k in kinds)
        raise FileFormatError(f"kind={loaded.kind.value} は使えません（{expected} が必要）", 0, path)
    return loaded


def _load_cone(path: str) -> ConeSpace:
    """錐の補助JSONから錐を再構成（底の計量ファイルは補助JSONからの相対パス）"""
    sidecar_path = Path(path)
    try:
        sidecar = json.loads(read_text(sidecar_path))
        base_path = sidecar_path.parent / sidecar["base"]
        K = float(sidecar["K"])
        x0_domain = tuple(sidecar.get("x0_domain", DEFAULT_X0_DOMAIN))
        positive_norm = bool(sidecar.get("positive_norm", False))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"錐の補助JSONが不正です: {e}", 0, str(sidecar_path)) from None
    return build_cone(load_metric(base_path), K, x0_domain, positive_norm)


def _cone_field(cone: ConeSpace, path: str) -> FieldFile:
    """錐上の場ファイル（covector は n+1 成分、sinyukov-lifted は底の次元を基準に読む）"""
    text = read_text(path)
    kind = field_kind_of(text, path)
    if kind is FieldFileKind.COVECTOR:
        return parse_field_text(text, cone.dim, source=path)
    if kind is FieldFileKind.SINYUKOV_LIFTED:
        return parse_field_text(text, cone.base.dim, source=path)
    raise FileFormatError(f"錐上の場には covector か sinyukov-lifted が必要です: {kind.value}", 0, path)


def _point(chart: MetricChart, values: Optional[Sequence[float]], label: str) -> List[float]:
    if values is None:
        return chart.center().tolist()
    if len(values) != chart.dim:
        raise UsageError(f"{label} の成分数 {len(values)} が次元 {chart.dim} と一致しません")
    return list(values)


def _label(path: str) -> str:
    return Path(path).name


class ConlabApp:
    """
    conlab コマンドラインアプリケーション

    サブコマンドごとにモジュールの検証関数を呼び出し、結果を1つのJSON文書にまとめます。
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.handlers: Dict[str, Callable[[argparse.Namespace, RunConfig], CommandResult]] = {
            "verify concircular": self.verify_concircular,
            "verify sinyukov": self.verify_sinyukov,
            "verify vnk": self.verify_vnk,
            "verify vn0": self.verify_vn0,
            "verify levicivita": self.verify_levicivita,
            "verify square": self.verify_square,
            "verify oracle": self.verify_oracle,
            "cone build": self.cone_build,
            "cone lift-field": self.cone_lift_field,
            "cone lift-solution": self.cone_lift_solution,
            "cone check-parallel": self.cone_check_parallel,
            "cone check-convergent": self.cone_check_convergent,
            "jordan multiply": self.jordan_multiply,
            "jordan check-axioms": self.jordan_check_axioms,
            "jordan check-isomorphism": self.jordan_check_isomorphism,
            "jordan check-ideal": self.jordan_check_ideal,
            "geodesic integrate": self.geodesic_integrate,
            "geodesic map-check": self.geodesic_map_check,
            "fields transfer-rho": self.fields_transfer_rho,
            "fields build-sequence": self.fields_build_sequence,
            "catalog list": self.catalog_list,
            "catalog emit": self.catalog_emit,
            "catalog check": self.catalog_check,
        }

    @staticmethod
    def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
        """ログ設定（標準出力はJSON文書専用なので標準エラーへ出す）"""
        handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
        if log_file:
            handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
        logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, handlers=handlers, force=True)

    @staticmethod
    def build_config(args: argparse.Namespace) -> RunConfig:
        """環境変数（.env）と引数から実行設定を作る"""
        env_file = getattr(args, "env_file", None)
        config = load_run_config(
            Path(env_file) if env_file else None,
            seed=getattr(args, "seed", None),
            random_points=getattr(args, "points", None),
            lattice_per_axis=getattr(args, "lattice", None),
            inset=getattr(args, "inset", None),
            workers=getattr(args, "workers", None),
        )
        for item in getattr(args, "tol", None) or []:
            name, sep, raw = item.partition("=")
            name = name.strip()
            if not sep or name not in DEFAULT_TOLERANCES:
                raise ConfigError(f"--tol は 検証名=値 の形式で指定してください: {item!r}")
            try:
                value = float(raw)
            except ValueError:
                raise ConfigError(f"許容誤差が数値ではありません: {item!r}") from None
            config = config.with_tolerance(name, value)
        return config

    @staticmethod
    def emit(args: argparse.Namespace, command: str, result: "CommandResult") -> Dict[str, Any]:
        """文書を組み立てて検証し、標準出力か --output に書き出す"""
        document = build_document(command, result.reports, result.extras)
        validate_document(document)
        text = render_human(document) if getattr(args, "human", False) else dumps_document(document)
        output = getattr(args, "output", None)
        if output:
            write_text(output, text + "\n")
        else:
            print(text)
        return document

    def run(self, args: argparse.Namespace) -> int:
        """サブコマンドを実行してJSON文書を出力し、終了コードを返す"""
        command = f"{args.group} {args.action}"
        try:
            config = self.build_config(args)
            try:
                result = self.handlers[command](args, config)
            except PreconditionError as e:
                self.logger.warning(str(e))
                result = CommandResult(
                    reports=[single_value_report(e.equation, e.residual, e.tolerance,
                                                 details={"precondition": str(e)})],
                    extras={"error": str(e)},
                )
            except ClosureError as e:
                self.logger.warning(str(e))
                result = CommandResult(reports=[e.report], extras={"error": str(e)})

            document = self.emit(args, command, result)
            return EXIT_PASS if document["pass"] else EXIT_FAIL

        except SingularMetricError as e:
            self.logger.error(f"特異な計量: {e}")
            print(f"エラー: {e}", file=sys.stderr)
            report = single_value_report("singular-metric", math.inf, SINGULAR_TOLERANCE, point=e.point,
                                         details={"determinant": e.determinant})
            try:
                self.emit(args, command, CommandResult([report], {"error": str(e)}))
            except (ConlabError, OSError) as emit_error:
                self.logger.error(f"レポートを書き出せません: {emit_error}")
            return EXIT_SINGULAR
        except ConlabError as e:
            self.logger.error(f"{command}: {e}")
            print(f"エラー: {e}", file=sys.stderr)
            return EXIT_USAGE
        except OSError as e:
            self.logger.error(f"入出力エラー: {e}")
            print(f"エラー: {e}", file=sys.stderr)
            return EXIT_USAGE

    # ===== verify =====

    def verify_concircular(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        candidate = _field(args.field, chart.dim, FieldFileKind.CONCIRCULAR).value
        if args.K is not None:
            candidate.K = args.K
        report = check_concircular(chart, candidate, build_sample_grid(chart, config), config)
        return CommandResult([report], {"classification": classification_of(report)})

    def verify_sinyukov(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        sol = _field(args.field, chart.dim, FieldFileKind.SINYUKOV).value
        return CommandResult([check_sinyukov(chart, sol, build_sample_grid(chart, config), config)])

    def verify_vnk(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        sol = _field(args.field, chart.dim, FieldFileKind.SINYUKOV).value
        report = check_vnk(chart, sol, build_sample_grid(chart, config), config, K=args.K)
        return CommandResult([report], {"K": report.details.get("K")})

    def verify_vn0(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        sol = _field(args.field, chart.dim, FieldFileKind.SINYUKOV).value
        return CommandResult([check_vn0(chart, sol, build_sample_grid(chart, config), config)])

    def verify_levicivita(self, args, config: RunConfig) -> CommandResult:
        g = load_metric(args.g)
        gbar = load_metric(args.gbar)
        psi = _field(args.psi, g.dim, FieldFileKind.COVECTOR).value if args.psi else None
        pair = GeodesicPair(g, gbar, psi)
        return CommandResult([check_levi_civita(pair, build_sample_grid(pair.joint_g, config), config)])

    def verify_square(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        sol = _field(args.field, chart.dim, FieldFileKind.SINYUKOV).value
        grid = build_sample_grid(chart, config)
        if args.e is not None:
            return CommandResult([check_square_identities(chart, sol, args.e, grid, config)], {"e": args.e})
        selected, reports = select_square_constant(chart, sol, grid, config)
        candidates = {str(e): report.max for e, report in reports.items()}
        if selected is not None:
            report = reports[selected]
            report.details["candidates"] = candidates
            return CommandResult([report], {"e": selected})
        report = combine_reports("square-select", list(reports.values()), details={"candidates": candidates})
        report.passed = False
        return CommandResult([report], {"e": None})

    def verify_oracle(self, args, config: RunConfig) -> CommandResult:
        fields = []
        if args.entry:
            entry = get_entry(args.entry)
            chart = entry.chart()
            if entry.cone_of is None:
                for filename in entry.files:
                    value = entry.field_file(filename, chart.dim).value
                    fields.extend(field_components(filename, value))
        elif args.metric:
            chart = load_metric(args.metric)
            for path in args.field or []:
                fields.extend(field_components(_label(path), load_field(path, chart.dim).value))
        else:
            raise UsageError("--entry か --metric を指定してください")
        grid = build_sample_grid(chart, config)
        report = finite_difference_report(chart, grid, config.tolerance("fd-oracle"), fields=fields,
                                          workers=config.workers)
        return CommandResult([report, check_metric_consistency(chart, grid, config)],
                             {"fields": [label for label, _ in fields]})

    # ===== cone =====

    def cone_build(self, args, config: RunConfig) -> CommandResult:
        base = load_metric(args.metric)
        cone = build_cone(base, args.K, tuple(args.x0_domain), args.positive_norm)
        extras: Dict[str, Any] = {"K": cone.K, "dim": cone.dim, "x0_name": cone.x0}
        if args.out:
            metric_path = Path(args.out)
            sidecar_path = metric_path.with_suffix(".cone.json")
            base_rel = os.path.relpath(Path(args.metric).resolve(), metric_path.resolve().parent)
            write_text(metric_path, format_metric(cone.chart, comments=[
                f"{Path(args.metric).name} の錐 G = e^(2Kx0)·diag(∓1, ±g/K)、K = {cone.K}"]))
            write_json(sidecar_path, cone.sidecar(base_rel))
            extras.update({"metric": str(metric_path), "sidecar": str(sidecar_path)})
        grid = build_sample_grid(cone.chart, config)
        return CommandResult([check_cone(cone, grid, config), check_convergent_field(cone, grid, config)], extras)

    def cone_lift_field(self, args, config: RunConfig) -> CommandResult:
        cone = _load_cone(args.cone)
        candidate = _field(args.field, cone.base.dim, FieldFileKind.CONCIRCULAR).value
        lifted = lift_concircular(cone, candidate, build_sample_grid(cone.base, config), config)
        if args.out:
            write_text(args.out, format_covector(lifted.field, comments=[f"{_label(args.field)} の持ち上げ"]))
        report = check_parallel_covector(cone, lifted, build_sample_grid(cone.chart, config), config)
        return CommandResult([report], {"out": args.out})

    def cone_lift_solution(self, args, config: RunConfig) -> CommandResult:
        cone = _load_cone(args.cone)
        sol = _field(args.field, cone.base.dim, FieldFileKind.SINYUKOV).value
        lifted = lift_solution(cone, sol, build_sample_grid(cone.base, config), config)
        if args.out:
            write_text(args.out, format_lifted(lifted.field, K=cone.K, comments=[f"{_label(args.field)} の持ち上げ"]))
        report = check_parallel_bilinear(cone, lifted, build_sample_grid(cone.chart, config), config)
        return CommandResult([report], {"out": args.out})

    def cone_check_parallel(self, args, config: RunConfig) -> CommandResult:
        cone = _load_cone(args.cone)
        loaded = _cone_field(cone, args.field)
        grid = build_sample_grid(cone.chart, config)
        if loaded.kind is FieldFileKind.COVECTOR:
            return CommandResult([check_parallel_covector(cone, loaded.value, grid, config)])
        return CommandResult([check_parallel_bilinear(cone, loaded.value, grid, config)])

    def cone_check_convergent(self, args, config: RunConfig) -> CommandResult:
        cone = _load_cone(args.cone)
        expect_negative = None if args.expect is None else args.expect == "negative"
        report = check_convergent_field(cone, build_sample_grid(cone.chart, config), config, expect_negative)
        return CommandResult([report])

    # ===== jordan =====

    def _elements(self, chart: MetricChart, paths: Sequence[str], grid, config: RunConfig) -> List[JordanElement]:
        elements = []
        for path in paths:
            sol = _field(path, chart.dim, FieldFileKind.SINYUKOV).value
            elements.append(admit_element(chart, sol, grid, config, label=_label(path)))
        return elements

    def jordan_multiply(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        grid = build_sample_grid(chart, config)
        first, second = self._elements(chart, [args.first, args.second], grid, config)
        product = jordan_product(first, second, grid, config)
        extras: Dict[str, Any] = {"product": product.label, "symbolic": product.symbolic}
        if args.out:
            if not product.symbolic:
                raise UsageError("点ごとに評価した積はファイルに書き出せません")
            write_text(args.out, format_solution(product.solution, comments=[f"{product.label}"]))
            extras["out"] = args.out
        return CommandResult([product.admission], extras)

    def jordan_check_axioms(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        grid = build_sample_grid(chart, config)
        elements = self._elements(chart, args.element or [], grid, config)
        if args.with_unit:
            if args.K is None and not elements:
                raise UsageError("--with-unit だけのときは --K が必要です")
            K = args.K if args.K is not None else elements[0].K
            elements.insert(0, unit_element(chart, K, grid, config))
        if not elements:
            raise UsageError("--element か --with-unit を指定してください")
        return CommandResult([check_jordan_axioms(elements, grid, config)],
                             {"elements": [e.label for e in elements]})

    def jordan_check_isomorphism(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        grid = build_sample_grid(chart, config)
        first, second = self._elements(chart, [args.first, args.second], grid, config)
        cone = build_cone(chart, first.K, tuple(args.x0_domain), args.positive_norm)
        report = check_isomorphism(first, second, cone, build_sample_grid(cone.chart, config), config)
        return CommandResult([report], {"positive_norm": cone.positive_norm})

    def jordan_check_ideal(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        grid = build_sample_grid(chart, config)
        candidates = [_field(path, chart.dim, FieldFileKind.CONCIRCULAR).value for path in args.conc]
        if args.element:
            element = self._elements(chart, [args.element], grid, config)[0]
        else:
            Ks = {c.K for c in candidates if c.K is not None}
            K = args.K if args.K is not None else (Ks.pop() if len(Ks) == 1 else None)
            if K is None:
                raise UsageError("単位元の K を決められません（--K を指定してください）")
            element = unit_element(chart, K, grid, config)
        report = check_ideal_membership(candidates, element, grid, config)
        return CommandResult([report], {"F": report.details["F"], "element": element.label})

    # ===== geodesic =====

    def geodesic_integrate(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        trajectory = integrate_geodesic(chart, _point(chart, args.x0, "--x0"), _point(chart, args.v0, "--v0"),
                                        args.steps, args.dt)
        write_trajectory(args.out, trajectory)
        report = geodesic_energy_report(chart, trajectory, config.tolerance("geodesic-energy"))
        return CommandResult([report], {"out": args.out, "steps": trajectory.steps_taken,
                                        "truncated": trajectory.truncated})

    def geodesic_map_check(self, args, config: RunConfig) -> CommandResult:
        g = load_metric(args.g)
        gbar = load_metric(args.gbar)
        report = geodesic_map_check(g, gbar, _point(g, args.x0, "--x0"), _point(g, args.v0, "--v0"),
                                    args.steps, args.dt, tolerance=config.tolerance("geodesic-map"))
        return CommandResult([report])

    # ===== fields =====

    def fields_transfer_rho(self, args, config: RunConfig) -> CommandResult:
        pair = GeodesicPair(load_metric(args.g), load_metric(args.gbar))
        candidate = _field(args.field, pair.dim, FieldFileKind.CONCIRCULAR).value
        report = check_transfer(pair, candidate, build_sample_grid(pair.joint_gbar, config), config)
        point = _point(pair.joint_g, args.point, "--point")
        return CommandResult([report], {"point": point, "closure": classify_mapping_closure(pair, candidate, point)})

    def fields_build_sequence(self, args, config: RunConfig) -> CommandResult:
        chart = load_metric(args.metric)
        sol = _field(args.solution, chart.dim, FieldFileKind.SINYUKOV).value
        phi = _field(args.covector, chart.dim, FieldFileKind.COVECTOR).value
        base = _point(chart, args.base_point, "--base-point") if args.base_point else None
        sequence = build_parallel_sequence(chart, sol, phi, base_point=base, max_len=args.max_len,
                                           grid=build_sample_grid(chart, config), config=config)
        return CommandResult([sequence.report], {
            "length": len(sequence),
            "stop_reason": sequence.stop_reason.value,
            "obstruction": sequence.obstruction,
            "base_point": sequence.base_point,
        })

    # ===== catalog =====

    def catalog_list(self, args, config: RunConfig) -> CommandResult:
        return CommandResult([], {"entries": {name: get_entry(name).note for name in list_entries()}})

    def catalog_emit(self, args, config: RunConfig) -> CommandResult:
        written = emit_entry(args.name, args.directory)
        return CommandResult([], {"name": args.name, "files": [str(path) for path in written]})

    def catalog_check(self, args, config: RunConfig) -> CommandResult:
        names = args.names or list_entries()
        reports: List[ResidualReport] = []
        summary = {}
        for name in names:
            entry_reports, ok = run_declared_checks(
                name, config, progress=lambda message: self.logger.info(f"カタログ検証: {message}"))
            reports.extend(entry_reports)
            summary[name] = ok
        return CommandResult(reports, {"entries": summary})


# ===== 引数解析 =====

def _common_options() -> argparse.ArgumentParser:
    """全サブコマンド共通のオプション（どの位置にも書ける）"""
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    # 標本設定
    common.add_argument('--seed', type=int, help='標本点の乱数シード (デフォルト: 42 または CONLAB_SEED)')
    common.add_argument('--points', type=int, help='ランダム標本点数 (デフォルト: 200)')
    common.add_argument('--lattice', type=int, help='1軸あたりの格子点数 (デフォルト: 8)')
    common.add_argument('--inset', type=float, help='領域境界からの内側余白の比 (デフォルト: 0.05)')
    common.add_argument('--workers', type=int, help='残差評価の並列数 (デフォルト: 1)')
    common.add_argument('--tol', action='append', metavar='EQUATION=VALUE', help='検証ごとの許容誤差を上書き')
    common.add_argument('--env-file', help='.env ファイルのパス')
    # 出力設定
    common.add_argument('--human', action='store_true', help='JSONの代わりに表形式で表示')
    common.add_argument('--output', help='文書を標準出力ではなくファイルに書き出す')
    # デバッグ設定
    common.add_argument('--debug', action='store_true', help='デバッグモードで実行')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='ログレベル (デフォルト: INFO)')
    common.add_argument('--log-file', help='ログをファイルにも書き出す')
    return common


def build_parser() -> argparse.ArgumentParser:
    """コマンドライン引数の構文"""
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="conlab",
        description="測地写像検証ツールキット",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
        epilog="""
使用例:
  python3 main.py catalog list
  python3 main.py catalog check sphere2
  python3 main.py verify vnk --metric sphere2.metric --field sphere2.sin --human
  python3 main.py cone build --metric hyperbolic2.metric --K 1 --out cone.metric
        """
    )
    groups = parser.add_subparsers(dest="group", metavar="{verify,cone,jordan,geodesic,fields,catalog}")
    groups.required = True

    def group(name: str, help_text: str):
        sub = groups.add_parser(name, help=help_text, parents=[common])
        actions = sub.add_subparsers(dest="action")
        actions.required = True
        return actions

    def action(actions, name: str, help_text: str, aliases: Sequence[str] = ()):
        sub = actions.add_parser(name, help=help_text, aliases=list(aliases), parents=[common])
        sub.set_defaults(action=name)
        return sub

    def point(sub, flag: str, required: bool = False, help_text: str = ''):
        sub.add_argument(flag, type=float, nargs='+', required=required, help=help_text)

    # verify
    verify = group("verify", "方程式の検証")
    sub = action(verify, "concircular", "共円場 ∇φ = ρg（と ∇ρ = Kφ）")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--field', required=True)
    sub.add_argument('--K', type=float, default=None, help='特殊共円場の定数（ファイルの値を上書き）')
    for name, help_text in (("sinyukov", "シニュコフ系"), ("vn0", "V_n(0) 方程式")):
        sub = action(verify, name, help_text)
        sub.add_argument('--metric', required=True)
        sub.add_argument('--field', required=True)
    sub = action(verify, "vnk", "V_n(K) 方程式")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--field', required=True)
    sub.add_argument('--K', type=float, default=None, help='K（省略時はファイルの値か最小二乗推定）')
    sub = action(verify, "levicivita", "レヴィ＝チヴィタ方程式")
    sub.add_argument('--g', required=True)
    sub.add_argument('--gbar', required=True)
    sub.add_argument('--psi', default=None, help='ψ の covector ファイル（省略時は行列式比から自動計算）')
    sub = action(verify, "square", "解の二乗恒等式", aliases=["corollary1"])
    sub.add_argument('--metric', required=True)
    sub.add_argument('--field', required=True)
    sub.add_argument('--e', type=int, choices=[-1, 0, 1], default=None, help='省略時は総当たりで選択')
    sub = action(verify, "oracle", "記号微分と中心差分の一致・計量の整合性")
    sub.add_argument('--entry', default=None, help='カタログ項目名')
    sub.add_argument('--metric', default=None)
    sub.add_argument('--field', action='append', default=None)

    # cone
    cone = group("cone", "錐の構成と持ち上げ")
    sub = action(cone, "build", "錐の計量ファイルと補助JSONを作成")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--K', type=float, required=True)
    sub.add_argument('--x0-domain', type=float, nargs=2, default=list(DEFAULT_X0_DOMAIN))
    sub.add_argument('--positive-norm', action='store_true', default=False)
    sub.add_argument('--out', default=None, help='錐の計量ファイル（補助JSONは .cone.json）')
    for name, help_text in (("lift-field", "特殊共円場の持ち上げ"), ("lift-solution", "V_n(K) 解の持ち上げ")):
        sub = action(cone, name, help_text)
        sub.add_argument('--cone', required=True, help='錐の補助JSON')
        sub.add_argument('--field', required=True)
        sub.add_argument('--out', default=None)
    sub = action(cone, "check-parallel", "錐上の場の平行性")
    sub.add_argument('--cone', required=True)
    sub.add_argument('--field', required=True)
    sub = action(cone, "check-convergent", "収束場 φ̃ = ∂_0")
    sub.add_argument('--cone', required=True)
    sub.add_argument('--expect', choices=['negative', 'positive'], default=None)

    # jordan
    jordan = group("jordan", "ジョルダン代数")
    sub = action(jordan, "multiply", "ジョルダン積と閉性の検証")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--first', required=True)
    sub.add_argument('--second', required=True)
    sub.add_argument('--out', default=None)
    sub = action(jordan, "check-axioms", "可換性とジョルダン恒等式")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--element', action='append', default=None)
    sub.add_argument('--with-unit', action='store_true', default=False)
    sub.add_argument('--K', type=float, default=None)
    sub = action(jordan, "check-isomorphism", "積の持ち上げと括弧の一致")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--first', required=True)
    sub.add_argument('--second', required=True)
    sub.add_argument('--x0-domain', type=float, nargs=2, default=list(DEFAULT_X0_DOMAIN))
    sub.add_argument('--positive-norm', action='store_true', default=False)
    sub = action(jordan, "check-ideal", "共円場の生成する部分空間がイデアルか")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--conc', nargs='+', required=True)
    sub.add_argument('--element', default=None, help='省略時は単位元')
    sub.add_argument('--K', type=float, default=None)

    # geodesic
    geodesic = group("geodesic", "測地線")
    sub = action(geodesic, "integrate", "測地線の積分（TSV出力）")
    sub.add_argument('--metric', required=True)
    point(sub, '--x0')
    point(sub, '--v0', required=True)
    sub.add_argument('--steps', type=int, default=1000)
    sub.add_argument('--dt', type=float, default=1e-3)
    sub.add_argument('--out', required=True, help='軌道TSVの出力先')
    sub = action(geodesic, "map-check", "g の測地線が ḡ でも測地線か")
    sub.add_argument('--g', required=True)
    sub.add_argument('--gbar', required=True)
    point(sub, '--x0')
    point(sub, '--v0', required=True)
    sub.add_argument('--steps', type=int, default=1000)
    sub.add_argument('--dt', type=float, default=1e-3)

    # fields
    fields = group("fields", "共円場の移送と平行余ベクトル列")
    sub = action(fields, "transfer-rho", "共円場を ḡ に移して検証")
    sub.add_argument('--g', required=True)
    sub.add_argument('--gbar', required=True)
    sub.add_argument('--field', required=True)
    point(sub, '--point', help_text='型の比較を行う点（省略時は領域中心）')
    sub = action(fields, "build-sequence", "V_n(0) の平行余ベクトル列")
    sub.add_argument('--metric', required=True)
    sub.add_argument('--solution', required=True)
    sub.add_argument('--covector', required=True)
    point(sub, '--base-point')
    sub.add_argument('--max-len', type=int, default=None)

    # catalog
    catalog = group("catalog", "解析例カタログ")
    action(catalog, "list", "項目の一覧")
    sub = action(catalog, "emit", "項目のファイルを書き出す")
    sub.add_argument('name')
    sub.add_argument('directory')
    sub = action(catalog, "check", "項目の自己検証（省略時は全項目）")
    sub.add_argument('names', nargs='*')

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    引数を解析して実行し、終了コードを返す

    標準出力にはJSON文書（--human では表）だけを書き、ログは標準エラーに出します。
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PASS if e.code in (0, None) else EXIT_USAGE

    # ログレベル設定
    level = getattr(args, "log_level", None) or "INFO"
    if getattr(args, "debug", False):
        level = "DEBUG"
    try:
        ConlabApp.setup_logging(level, getattr(args, "log_file", None))
    except OSError as e:
        print(f"エラー: ログファイルを開けません: {e}", file=sys.stderr)
        return EXIT_USAGE

    return ConlabApp().run(args)


def main():
    """
    メイン関数：アプリケーション実行エントリーポイント

    以下の処理を順序に実行します:
    1. コマンドライン引数を解析
    2. ログレベルを設定
    3. ConlabApp でサブコマンドを実行
    4. 終了コードで終了
    """
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\n操作がキャンセルされました。", file=sys.stderr)
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
