#!/usr/bin/env python3
"""
ソーシャルコマース分析ツール（コマンドライン）

使い方:
    python3 scripts/triad.py ingest  --events events.csv --contacts contacts.csv --out out/
    python3 scripts/triad.py stats   --events events.csv --contacts contacts.csv --out out/
    python3 scripts/triad.py census  --events e.csv --contacts c.csv --out census.csv --threads 8
    python3 scripts/triad.py infopass rate  --events e.csv --contacts c.csv --variant FirstBuyReq
    python3 scripts/triad.py infopass curve --events e.csv --contacts c.csv --axis MsgStrength
    python3 scripts/triad.py infopass bba   --events e.csv --contacts c.csv --deltas 1,2,3,4,5
    python3 scripts/triad.py infopass dyads --events e.csv --contacts c.csv --which TradeVsMsgVolume
    python3 scripts/triad.py infopass contacts --events e.csv --contacts c.csv
    python3 scripts/triad.py infopass rewire --events e.csv --contacts c.csv --seed 1 --out rewired/
    python3 scripts/triad.py infopass randomize-sellers --events e.csv --contacts c.csv --seed 1
    python3 scripts/triad.py trust   --clusters clusters.csv --ratings ratings.csv
    python3 scripts/triad.py choice  --events e.csv --contacts c.csv --choice-clusters choice_clusters.csv
    python3 scripts/triad.py syngen  --config config/syngen.conf --seed 0 --out data/
    python3 scripts/triad.py report  --inputs out/ --out bundle/

終了コード: 0 = 成功, 1 = 入力の検証エラー, 2 = 使い方の誤り
出力は一時ディレクトリに書いてから移動し、manifest.json を添える。
"""

import argparse
import shutil
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd

from scripts import __version__
from scripts import census, choice, infopass, syngen, trust
from scripts.graph_core import LAYERS, SECONDS_PER_DAY, load_dataset, network_stats, role_counts, write_dataset, write_id_map
from scripts.utils.config import (
    get_census_config, get_choice_config, get_feature_sets, get_trust_config, load_config,
)
from scripts.utils.errors import ValidationError
from scripts.utils.files import digests, staged_output, write_csv, write_json
from scripts.utils.log import get_logger, setup_logging

logger = get_logger(__name__)

REPORT_FILES = {
    "stats.csv": "table1_stats.csv",
    "bba.csv": "table2_bba.csv",
    "census.csv": "table3_census.csv",
    "metrics.json": "table5_choice.json",
}


class RunContext:
    """1回の実行で使う入出力と manifest の材料"""

    def __init__(self, args: argparse.Namespace, subcommand: str):
        self.args = args
        self.subcommand = subcommand
        self.inputs: List[Path] = []
        self.seeds: Dict[str, int] = {}
        self.out_dir, self.primary_name = _resolve_out(getattr(args, "out", None))
        self.started = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        self.inputs.append(path)
        return path

    def primary(self, default: str) -> str:
        """--out にファイル名が指定されていればそれを使う"""
        return self.primary_name or default

    def manifest(self, stage: Path) -> dict:
        outputs = sorted(p for p in stage.iterdir() if p.is_file())
        return {
            "subcommand": self.subcommand,
            "argv": [str(a) for a in self.args.argv],
            "version": __version__,
            "config": load_config(),
            "feature_sets": get_feature_sets(),
            "inputs": digests(self.inputs),
            "seeds": self.seeds,
            "threads": getattr(self.args, "threads", None),
            "started_at": datetime.now().isoformat(timespec="seconds"),
            "wall_clock_seconds": round(time.perf_counter() - self.started, 3),
            "outputs": digests(outputs),
        }


def _resolve_out(out: Optional[str]) -> Tuple[Path, Optional[str]]:
    if not out:
        return Path("out"), None
    path = Path(out)
    if path.suffix:
        return path.parent if str(path.parent) else Path("."), path.name
    return path, None


def _load_graph(ctx: RunContext):
    args = ctx.args
    window = None
    if args.t_start is not None or args.t_end is not None:
        if args.t_start is None or args.t_end is None:
            raise ValidationError("--t-start と --t-end は両方指定してください")
        window = (args.t_start, args.t_end)
    return load_dataset(ctx.input(args.events), ctx.input(args.contacts), window=window)


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return args.threads
    return int(get_census_config().get("threads", 0))


# ============================================================
# サブコマンド
# ============================================================

def cmd_ingest(ctx: RunContext, stage: Path):
    g = _load_graph(ctx)
    write_id_map(g, stage / "id_map.csv")
    summary = {
        "nodes": g.n_nodes, "events": len(g.events), "aggregated_edges": len(g.edges),
        "contacts": len(g.contacts), "window": list(g.window),
    }
    write_json(summary, stage / ctx.primary("ingest.json"))
    print(f"ノード: {g.n_nodes}件")
    print(f"イベント: {len(g.events)}件（集約辺 {len(g.edges)}件）")
    print(f"連絡先: {len(g.contacts)}件")


def cmd_stats(ctx: RunContext, stage: Path):
    g = _load_graph(ctx)
    rows = []
    for kind in LAYERS:
        s = network_stats(g, kind)
        rows.append({
            "layer": kind, "nodes": s.nodes, "edges": s.edges, "avg_degree": s.avg_degree,
            "avg_clustering": s.avg_clustering, "undirected_pairs": s.undirected_pairs,
        })
        print(f"{kind}: ノード {s.nodes}件, 辺 {s.edges}件, 平均次数 {s.avg_degree:.2f}, "
              f"平均クラスタ係数 {s.avg_clustering:.3f}")
    write_csv(pd.DataFrame(rows), stage / ctx.primary("stats.csv"))
    roles = role_counts(g)
    write_json(roles, stage / "roles.json")
    print(f"買い手: {roles['buyers']}件, 売り手: {roles['sellers']}件, 両方: {roles['both']}件")


def cmd_census(ctx: RunContext, stage: Path):
    g = _load_graph(ctx)
    rows = census.config_census(g, threads=_threads(ctx.args))
    write_csv(census.rows_to_frame(rows), stage / ctx.primary("census.csv"))
    summary = census.role_summary(rows)
    write_json(summary, stage / "census_summary.json")
    print(f"くさび: {sum(r.instances for r in rows)}件")
    print(f"閉包: {sum(r.closures for r in rows)}件")


def _ip_query(args) -> infopass.IPQuery:
    days = SECONDS_PER_DAY
    return infopass.IPQuery.from_config(
        delta_max=int(args.delta_max_days * days) if args.delta_max_days is not None else None,
        window_delta=int(args.window_delta_days * days) if args.window_delta_days is not None else None,
        variant=args.variant,
        seed=args.seed,
        min_support=args.min_support,
    )


def cmd_infopass(ctx: RunContext, stage: Path):
    args = ctx.args
    g = _load_graph(ctx)
    action = args.action
    if args.seed is not None:
        ctx.seeds["seed"] = args.seed

    if action == "rate":
        q = _ip_query(args)
        result = infopass.ip_success_rate(g, q)
        write_json({"variant": q.variant, "numerator": result.numerator, "denominator": result.denominator,
                    "rate": result.rate, "pairs": result.pairs, "pair_successes": result.pair_successes,
                    "first_buy_applies_to": "denominator"},
                   stage / ctx.primary("ip_rate.json"))
        print(f"伝播成功: {result.numerator} / {result.denominator}件 (rate={result.rate})")

    elif action == "curve":
        q = _ip_query(args)
        curve = infopass.closure_rate_by(g, args.axis, q)
        write_csv(curve.to_frame(), stage / ctx.primary(f"curve_{args.axis}.csv"))
        print(f"{args.axis}: {len(curve.buckets)}バケット（support 不足 {curve.suppressed}件）")

    elif action == "bba":
        deltas = [int(x) for x in args.deltas.split(",") if x.strip()]
        table = infopass.before_between_after(g, deltas)
        write_csv(table.to_frame(), stage / ctx.primary("bba.csv"))
        for row in table.rows:
            print(f"δ={row.delta_days}日: {row.instances}件 前 {row.avg_before} / 間 {row.avg_between} / 後 {row.avg_after}")

    elif action == "dyads":
        curve = infopass.dyad_report(g, args.which, variant=args.dyad_variant)
        write_csv(curve.to_frame(), stage / ctx.primary(f"dyads_{args.which}.csv"))
        print(f"{args.which}: {len(curve.buckets)}バケット")

    elif action == "contacts":
        min_support = args.min_support
        curve = infopass.mutual_contact_trade_curve(g, args.variant or infopass.STANDARD, min_support)
        write_csv(curve.to_frame(), stage / ctx.primary("mutual_contacts.csv"))
        direct = infopass.direct_contact_trade_rate(g)
        write_json({"numerator": direct.numerator, "denominator": direct.denominator, "rate": direct.rate},
                   stage / "direct_contact.json")
        print(f"直接の連絡先の取引率: {direct.rate}")

    elif action == "rewire":
        seed = args.seed or 0
        ctx.seeds["seed"] = seed
        rewired = infopass.rewire(g, seed)
        write_dataset(rewired, stage)
        print(f"付け替え完了: 集約辺 {len(rewired.edges)}件")

    elif action == "randomize-sellers":
        seed = args.seed or 0
        ctx.seeds["seed"] = seed
        randomized = infopass.randomize_sellers(g, seed)
        write_dataset(randomized, stage)
        print(f"売り手ランダム化完了: 集約辺 {len(randomized.edges)}件")


def cmd_trust(ctx: RunContext, stage: Path):
    args = ctx.args
    listings = trust.read_listings(ctx.input(args.clusters))
    ratings = trust.read_ratings(ctx.input(args.ratings))

    report = trust.price_deviations(listings, ratings)
    write_csv(report.points, stage / ctx.primary("deviations.csv"))
    buckets = trust.bucket_deviations(report.points)
    write_csv(buckets, stage / "deviation_buckets.csv")

    min_items = args.min_items if args.min_items is not None else int(get_trust_config().get("min_items", 15))
    profile = trust.profile_from_points(report.points, min_items)
    write_csv(profile, stage / "seller_profile.csv")

    fit = trust.fit_power(buckets)
    result = fit.to_dict()
    try:
        result["per_seller"] = trust.fit_power(profile).to_dict()
    except ValidationError as e:
        logger.warning("売り手単位の当てはめをスキップしました: %s", e)
        result["per_seller"] = None
    result["scale"] = trust.dataset_scale(listings)
    result["skipped_missing_rating"] = report.skipped_missing_rating
    result["dropped_clusters"] = report.dropped_clusters
    result["fit_on"] = "rating-bin averages weighted by item count"
    write_json(result, stage / "fit.json")

    print(f"出品: {len(report.points)}件（評価なし {report.skipped_missing_rating}件スキップ）")
    print(f"当てはめ: b={fit.b:.1f}, R²={fit.r_squared:.3f}, 乖離0の評価={fit.zero_crossing}")


def cmd_choice(ctx: RunContext, stage: Path):
    args = ctx.args
    g = _load_graph(ctx)
    rows = choice.read_choice_clusters(ctx.input(args.choice_clusters))
    clusters = choice.build_decisions(rows, g)
    decisions = choice.all_decisions(clusters)

    context = choice.FeatureContext(g)
    features = {d.key: context.extract(d) for d in decisions}
    table = choice.feature_table(decisions, g, features)
    write_csv(table, stage / "features.csv")

    seed = args.seed
    ctx.seeds.update({"seed": seed if seed is not None else get_choice_config().get("seed", 0),
                      "split_seed": args.split_seed if args.split_seed is not None
                      else get_choice_config().get("split_seed", 0)})
    result = choice.run_experiment(
        decisions, g, subset=args.subset, split_seed=args.split_seed, lam=args.lam,
        epochs=args.epochs, seed=seed, per_category=args.per_category, features=features,
    )
    write_json(result.to_dict(), stage / ctx.primary("metrics.json"))

    print(f"購買判断: {len(decisions)}件（学習 {result.n_train}件, テスト {result.n_test}件）")
    print(f"{args.subset}: P@1={result.metrics.p_at_1}, MRR={result.metrics.mrr}, MR={result.metrics.mean_rank}")
    for name, metrics in result.baselines.items():
        print(f"  {name}: P@1={metrics.p_at_1}")


def cmd_syngen(ctx: RunContext, stage: Path):
    args = ctx.args
    config_path = ctx.input(args.config) if args.config else None
    cfg = syngen.load_synth_config(config_path, seed=args.seed)
    ctx.seeds["seed"] = cfg.seed
    paths = syngen.generate(cfg, stage)
    print(f"合成データ: {len(paths)}ファイル (seed={cfg.seed})")


def cmd_report(ctx: RunContext, stage: Path):
    """既存の出力を集めてチェックサムを付ける（再計算はしない）"""
    found = 0
    for directory in ctx.args.inputs:
        for src_name, dst_name in REPORT_FILES.items():
            src = ctx.input(Path(directory) / src_name)
            if src.exists() and not (stage / dst_name).exists():
                shutil.copyfile(src, stage / dst_name)
                found += 1
    if found == 0:
        raise ValidationError("集約できる出力がありません（stats.csv, bba.csv, census.csv, metrics.json）")
    bundle = sorted(p for p in stage.iterdir() if p.is_file())
    write_json(digests(bundle), stage / "checksums.json")
    print(f"レポート: {found}ファイル")


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "census": cmd_census,
    "infopass": cmd_infopass,
    "trust": cmd_trust,
    "choice": cmd_choice,
    "syngen": cmd_syngen,
    "report": cmd_report,
}


# ============================================================
# 引数
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=str, default=argparse.SUPPRESS,
                        help="出力ディレクトリ（拡張子付きなら主出力のファイル名）")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="並列数（0 = 利用可能なコア数）")

    graph = argparse.ArgumentParser(add_help=False)
    graph.add_argument("--events", required=True, help="events.csv")
    graph.add_argument("--contacts", required=True, help="contacts.csv")
    graph.add_argument("--t-start", type=int, help="観測開始（UNIX秒）")
    graph.add_argument("--t-end", type=int, help="観測終了（UNIX秒）")

    parser = argparse.ArgumentParser(description="ソーシャルコマース分析ツール", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common, graph], help="取り込みと検証")
    sub.add_parser("stats", parents=[common, graph], help="レイヤー別の基本統計")
    sub.add_parser("census", parents=[common, graph], help="有向トライアド集計")

    ip = sub.add_parser("infopass", parents=[common, graph], help="情報伝播の計測")
    ip.add_argument("action", choices=["rate", "curve", "bba", "dyads", "contacts", "rewire", "randomize-sellers"])
    ip.add_argument("--variant", choices=list(infopass.VARIANTS))
    ip.add_argument("--axis", choices=list(infopass.AXES), default=infopass.MSG_STRENGTH)
    ip.add_argument("--delta-max-days", type=float)
    ip.add_argument("--window-delta-days", type=float)
    ip.add_argument("--min-support", type=int)
    ip.add_argument("--deltas", default="1,2,3,4,5")
    ip.add_argument("--which", choices=list(infopass.DYAD_REPORTS), default=infopass.TRADE_VS_MSG_VOLUME)
    ip.add_argument("--dyad-variant", choices=["message", "message_trade"], default="message")
    ip.add_argument("--seed", type=int)

    tr = sub.add_parser("trust", parents=[common], help="信頼の価格")
    tr.add_argument("--clusters", required=True, help="clusters.csv")
    tr.add_argument("--ratings", required=True, help="ratings.csv")
    tr.add_argument("--min-items", type=int)

    ch = sub.add_parser("choice", parents=[common, graph], help="購買先予測")
    ch.add_argument("--choice-clusters", required=True, help="choice_clusters.csv")
    ch.add_argument("--subset", default=choice.ALL_FEATURES)
    ch.add_argument("--per-category", action="store_true")
    ch.add_argument("--split-seed", type=int)
    ch.add_argument("--lambda", dest="lam", type=float)
    ch.add_argument("--epochs", type=int)
    ch.add_argument("--seed", type=int)

    sg = sub.add_parser("syngen", parents=[common], help="合成データ生成")
    sg.add_argument("--config", help="key=value 形式の設定ファイル")
    sg.add_argument("--seed", type=int)

    rp = sub.add_parser("report", parents=[common], help="出力の集約")
    rp.add_argument("--inputs", nargs="+", required=True, help="出力ディレクトリ")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """CLI本体。終了コードを返す"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv
    setup_logging()

    subcommand = args.command + (f" {args.action}" if args.command == "infopass" else "")
    ctx = RunContext(args, subcommand)
    try:
        with staged_output(ctx.out_dir) as stage:
            COMMANDS[args.command](ctx, stage)
            write_json(ctx.manifest(stage), stage / "manifest.json")
    except ValidationError as e:
        print(f"エラー: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
