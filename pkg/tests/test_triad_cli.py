"""
triad（コマンドライン）のテスト

合成データを一度だけ作り、各サブコマンドを run() で直接呼ぶ。
"""

import json

import pandas as pd
import pytest

from scripts.triad import run
from tests.conftest import T0, message, trade, write_csvs

SMALL_CONF = """\
n_buyers = 200
n_sellers = 20
n_trust_clusters = 80
n_choice_clusters = 30
choice_buyers_per_cluster = 5
window_days = 20
"""


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    conf = root / "small.conf"
    conf.write_text(SMALL_CONF, encoding="utf-8")
    out = root / "data"
    assert run(["syngen", "--config", str(conf), "--seed", "3", "--out", str(out)]) == 0
    return out


def graph_args(data_dir):
    return ["--events", str(data_dir / "events.csv"), "--contacts", str(data_dir / "contacts.csv")]


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


class TestSyngen:
    def test_files_and_manifest(self, data_dir):
        names = {p.name for p in data_dir.iterdir()}
        assert {"events.csv", "contacts.csv", "clusters.csv", "ratings.csv", "choice_clusters.csv",
                "truth.json", "manifest.json"} <= names
        manifest = read_manifest(data_dir)
        assert manifest["subcommand"] == "syngen"
        assert manifest["seeds"] == {"seed": 3}
        assert "small.conf" in manifest["inputs"]
        assert "events.csv" in manifest["outputs"]
        assert not any(name.startswith(".staging-") for name in names)

    def test_same_seed_same_bytes(self, data_dir, tmp_path):
        conf = tmp_path / "small.conf"
        conf.write_text(SMALL_CONF, encoding="utf-8")
        assert run(["syngen", "--config", str(conf), "--seed", "3", "--out", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "events.csv").read_bytes() == (data_dir / "events.csv").read_bytes()


class TestAnalyses:
    def test_ingest(self, data_dir, tmp_path):
        assert run(["ingest", *graph_args(data_dir), "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "ingest.json").read_text(encoding="utf-8"))
        id_map = pd.read_csv(tmp_path / "id_map.csv")
        assert summary["nodes"] == len(id_map)

    def test_rerun_gives_same_digests(self, data_dir, tmp_path):
        for name in ("first", "second"):
            assert run(["ingest", *graph_args(data_dir), "--out", str(tmp_path / name / "ingest")]) == 0
            assert run(["stats", *graph_args(data_dir), "--out", str(tmp_path / name / "stats")]) == 0
        for stage in ("ingest", "stats"):
            first = read_manifest(tmp_path / "first" / stage)
            second = read_manifest(tmp_path / "second" / stage)
            assert first["outputs"] == second["outputs"]
            assert first["inputs"] == second["inputs"]

    def test_stats(self, data_dir, tmp_path):
        assert run(["stats", *graph_args(data_dir), "--out", str(tmp_path)]) == 0
        stats = pd.read_csv(tmp_path / "stats.csv")
        assert stats["layer"].tolist() == ["trade", "message", "contact"]
        roles = json.loads((tmp_path / "roles.json").read_text(encoding="utf-8"))
        assert roles["sellers"] <= 20

    def test_census_with_file_name(self, data_dir, tmp_path):
        target = tmp_path / "census_run.csv"
        assert run(["census", *graph_args(data_dir), "--threads", "1", "--out", str(target)]) == 0
        frame = pd.read_csv(target)
        assert len(frame) == 16
        manifest = read_manifest(tmp_path)
        assert manifest["threads"] == 1
        assert "census_run.csv" in manifest["outputs"]

    def test_infopass_rate_and_curve(self, data_dir, tmp_path):
        assert run(["infopass", "rate", *graph_args(data_dir), "--variant", "FirstBuyReq",
                    "--out", str(tmp_path)]) == 0
        rate = json.loads((tmp_path / "ip_rate.json").read_text(encoding="utf-8"))
        assert rate["variant"] == "FirstBuyReq"
        assert rate["numerator"] <= rate["denominator"]

        assert run(["infopass", "curve", *graph_args(data_dir), "--axis", "TimeDiffDays", "--min-support", "1",
                    "--out", str(tmp_path)]) == 0
        curve = pd.read_csv(tmp_path / "curve_TimeDiffDays.csv")
        assert list(curve.columns) == ["bucket", "numerator", "denominator", "rate"]

    def test_infopass_bba(self, data_dir, tmp_path):
        assert run(["infopass", "bba", *graph_args(data_dir), "--deltas", "1,2", "--out", str(tmp_path)]) == 0
        assert pd.read_csv(tmp_path / "bba.csv")["delta_days"].tolist() == [1, 2]

    def test_infopass_rewire_writes_loadable_dataset(self, data_dir, tmp_path):
        out = tmp_path / "rewired"
        assert run(["infopass", "rewire", *graph_args(data_dir), "--seed", "5", "--out", str(out)]) == 0
        assert read_manifest(out)["seeds"] == {"seed": 5}
        assert run(["stats", "--events", str(out / "events.csv"), "--contacts", str(out / "contacts.csv"),
                    "--out", str(tmp_path / "stats")]) == 0

    def test_trust(self, data_dir, tmp_path):
        assert run(["trust", "--clusters", str(data_dir / "clusters.csv"), "--ratings", str(data_dir / "ratings.csv"),
                    "--min-items", "3", "--out", str(tmp_path)]) == 0
        fit = json.loads((tmp_path / "fit.json").read_text(encoding="utf-8"))
        assert {"a", "b", "c", "r_squared", "zero_crossing", "per_seller", "scale"} <= set(fit)
        assert (tmp_path / "deviations.csv").exists()

    def test_choice(self, data_dir, tmp_path):
        assert run(["choice", *graph_args(data_dir), "--choice-clusters", str(data_dir / "choice_clusters.csv"),
                    "--subset", "Meta + Msgs", "--epochs", "2", "--split-seed", "1", "--out", str(tmp_path)]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["subset"] == "Meta + Msgs"
        assert {"p_at_1", "mrr", "mean_rank", "per_k", "baselines"} <= set(metrics)
        assert read_manifest(tmp_path)["seeds"]["split_seed"] == 1
        features = pd.read_csv(tmp_path / "features.csv")
        assert "bs_message_volume" in features.columns

    def test_report_bundle(self, data_dir, tmp_path):
        results = tmp_path / "results"
        assert run(["stats", *graph_args(data_dir), "--out", str(results)]) == 0
        assert run(["census", *graph_args(data_dir), "--threads", "1", "--out", str(results)]) == 0
        bundle = tmp_path / "bundle"
        assert run(["report", "--inputs", str(results), "--out", str(bundle)]) == 0
        checksums = json.loads((bundle / "checksums.json").read_text(encoding="utf-8"))
        assert set(checksums) == {"table1_stats.csv", "table3_census.csv"}


class TestFailures:
    def test_bad_row_exits_1_without_outputs(self, tmp_path):
        events_path, contacts_path = write_csvs(tmp_path, [trade("a", "b", T0), trade("a", "c", T0 + 1, price=0.0)])
        out = tmp_path / "out"
        code = run(["stats", "--events", str(events_path), "--contacts", str(contacts_path), "--out", str(out)])
        assert code == 1
        assert list(out.iterdir()) == []

    def test_error_message_names_line(self, tmp_path, capsys):
        events_path, contacts_path = write_csvs(tmp_path, [message("a", "b", T0), trade("a", "c", T0 + 1, price=-1.0)])
        run(["ingest", "--events", str(events_path), "--contacts", str(contacts_path), "--out", str(tmp_path / "o")])
        assert f"{events_path}:3" in capsys.readouterr().err

    def test_half_window_is_validation_error(self, tmp_path):
        events_path, contacts_path = write_csvs(tmp_path, [message("a", "b", T0)])
        assert run(["ingest", "--events", str(events_path), "--contacts", str(contacts_path),
                    "--t-start", str(T0), "--out", str(tmp_path / "o")]) == 1

    def test_report_without_inputs(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run(["report", "--inputs", str(tmp_path / "empty"), "--out", str(tmp_path / "bundle")]) == 1
        assert list((tmp_path / "bundle").iterdir()) == []

    @pytest.mark.parametrize("argv", [
        [],
        ["explode"],
        ["stats", "--contacts", "c.csv"],
        ["infopass", "teleport", "--events", "e.csv", "--contacts", "c.csv"],
        ["census", "--events", "e.csv", "--contacts", "c.csv", "--threads", "many"],
    ])
    def test_usage_errors_exit_2(self, argv):
        assert run(argv) == 2
