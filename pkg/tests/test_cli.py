import csv
import hashlib

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from pvcluster import agglomerative, ingest, lda, synth
from pvcluster.agglomerative import ClusterAssignment
from pvcluster.cli import main


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def digest(directory):
    return {
        p.relative_to(directory).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.rglob("*")) if p.is_file()
    }


FAST = ["--kmeans_max_iter", 100, "--lda_max_iter", 40]


@pytest.fixture(scope="module")
def fleet(tmp_path_factory):
    out = tmp_path_factory.mktemp("fleet")
    assert run("synth", "--output_dir", out, "--seed", 5, "--U", 24, "--days", 40, "--groups", 3) == 0
    return out


@pytest.fixture(scope="module")
def embedded(fleet):
    assert run("embed", "--output_dir", fleet, "--seed", 5, "--K", 4, "--W", 30, *FAST) == 0
    return fleet


def test_synth_file_contract(fleet):
    assert {p.name for p in fleet.iterdir()} >= {"series.csv", "metadata.csv", "ground_truth.csv"}
    series = rows(fleet / "series.csv")
    assert len(series) == 40 * 96 and len(series[0]) == 1 + 24
    assert len(rows(fleet / "metadata.csv")) == 24
    assert len(rows(fleet / "ground_truth.csv")) == 24


def test_synth_default_row_counts(tmp_path):
    assert run("synth", "--output_dir", tmp_path, "--seed", 0) == 0
    assert len(rows(tmp_path / "series.csv")) == 120 * 96
    assert len(rows(tmp_path / "metadata.csv")) == 60


def test_synth_same_seed_same_hashes(tmp_path):
    for d in ("a", "b"):
        assert run("synth", "--output_dir", tmp_path / d, "--seed", 2, "--U", 6, "--days", 3) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


@pytest.mark.parametrize("args", [
    ["--outage_start", 5, "--outage_end", 2],
    ["--outage_start", 5],
    ["--U", "many"],
    ["--missing_day_rate", 1.5],
    ["--no_such_key", 1],
])
def test_synth_config_errors(tmp_path, args):
    assert run("synth", "--output_dir", tmp_path, "--seed", 1, *args) == 2


def test_seed_flag_required(tmp_path):
    assert run("synth", "--output_dir", tmp_path) == 2
    assert run("embed", "--output_dir", tmp_path) == 2
    assert run("grid", "--output_dir", tmp_path) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'output_dir = "{tmp_path / "o"}"\n[synth]\nU = 5\ndays = 2\ngroups = 2\n')
    assert run("synth", "--config", cfg, "--seed", 0, "--days", 3) == 0
    assert len(rows(tmp_path / "o" / "series.csv")) == 3 * 96
    bad = tmp_path / "bad.toml"
    bad.write_text("U = \n")
    assert run("synth", "--config", bad, "--seed", 0) == 2
    assert run("synth", "--config", tmp_path / "missing.toml", "--seed", 0) == 2


def test_embed_outputs(embedded):
    embs = lda.load_embeddings(embedded / "embeddings.csv")
    assert len(embs) == 24
    for e in embs:
        assert e.gamma.shape == (4,) and np.all(e.gamma > 0)
        assert abs(e.gamma.sum() - (e.n_u + 4 * 0.25)) < 1e-6
    assert not (embedded / "embed.incomplete").exists()
    for name in ("vocabulary.csv", "vocabulary.json", "documents.csv", "lda_model.csv", "profiles.csv"):
        assert (embedded / name).exists()


def test_embed_rerun_with_cached_vocabulary(embedded, caplog):
    before = (embedded / "embeddings.csv").read_bytes()
    vocab = (embedded / "vocabulary.csv").stat().st_mtime_ns
    assert run("embed", "--output_dir", embedded, "--seed", 5, "--K", 4, "--W", 30, *FAST) == 0
    assert (embedded / "vocabulary.csv").stat().st_mtime_ns == vocab
    assert (embedded / "embeddings.csv").read_bytes() == before


def test_embed_missing_data(tmp_path):
    assert run("embed", "--output_dir", tmp_path, "--seed", 0) == 2


def test_embed_bad_data_flags_partial_output(tmp_path):
    (tmp_path / "series.csv").write_text("timestamp,a\n2021-01-01T00:00,1.0\n2021-01-01T00:15,-3\n")
    (tmp_path / "metadata.csv").write_text("system_id,capacity_wp,tilt_deg,azimuth_deg\na,100,30,180\n")
    assert run("embed", "--output_dir", tmp_path, "--seed", 0) == 1
    assert (tmp_path / "embed.incomplete").exists()


def test_cluster_outputs(embedded):
    assert run("cluster", "--output_dir", embedded, "--C", 3) == 0
    assert len(rows(embedded / "assignment.csv")) == 24
    assert len(rows(embedded / "merge_trace.csv")) == 21
    assert sorted(p.name for p in (embedded / "summaries").iterdir()) == [f"cluster_{c}.csv" for c in range(3)]
    summary = rows(embedded / "summaries" / "cluster_0.csv")
    assert len(summary) == 40 * 96 and list(summary[0])[1] == "q0.05"
    scores = rows(embedded / "scores.csv")
    assert scores[0]["setting_id"].startswith("entity|C=3|K=4|sym_kl|average")
    assert scores[1]["setting_id"].startswith("angle_kmeans|C=3")
    assert float(scores[0]["S_sens"]) >= 0
    first = (embedded / "distance.csv").read_text().splitlines()[0]
    assert first == "# metric_tag=sym_kl"


def test_cluster_coupled_fleet_recovers_groups(embedded):
    assert run("cluster", "--output_dir", embedded, "--C", 3, "--metric", "bhattacharyya") == 0
    truth = synth.load_ground_truth(embedded / "ground_truth.csv")
    got = {r["system_id"]: int(r["cluster_label"]) for r in rows(embedded / "assignment.csv")}
    ids = sorted(truth)
    assert adjusted_rand_score([truth[s] for s in ids], [got[s] for s in ids]) == 1.0


def test_cluster_singletons_exit_with_filter_message(embedded, capsys):
    out = embedded
    assert run("cluster", "--output_dir", out, "--C", 24) == 1
    assert "fewer than two members" in capsys.readouterr().err
    assert float(rows(out / "scores.csv")[0]["S_disp"]) == 0.0


def test_cluster_errors(embedded, tmp_path):
    assert run("cluster", "--output_dir", embedded, "--C", 99) == 2
    assert run("cluster", "--output_dir", embedded, "--linkage", "ward") == 2
    assert run("cluster", "--output_dir", tmp_path) == 2


def test_grid_single_point(embedded, tmp_path):
    out = tmp_path / "g"
    args = ["--data", embedded / "series.csv", "--metadata", embedded / "metadata.csv", "--output_dir", out]
    point = ["--C_values", 3, "--K_values", 4, "--W_values", 30, "--metrics", "sym_kl", "--linkages", "average"]
    assert run("grid", *args, "--seed", 5, *point, *FAST) == 0
    ledger = rows(out / "grid_results.csv")
    assert len(ledger) == 1 and ledger[0]["valid"] == "1"
    assert [r["selected"] for r in rows(out / "selection.csv")] == ["1"]
    # rerunning with the same ledger appends nothing
    assert run("grid", *args, "--seed", 5, *point, *FAST) == 0
    assert len(rows(out / "grid_results.csv")) == 1


def test_grid_without_valid_settings(embedded, tmp_path):
    args = ["--data", embedded / "series.csv", "--metadata", embedded / "metadata.csv", "--output_dir", tmp_path]
    point = ["--C_values", 24, "--K_values", 4, "--W_values", 30, "--metrics", "sym_kl", "--linkages", "average"]
    assert run("grid", *args, "--seed", 5, *point, *FAST) == 1


@pytest.mark.slow
def test_grid_selects_near_group_count(tmp_path):
    assert run("synth", "--output_dir", tmp_path, "--seed", 3, "--U", 80, "--days", 60, "--groups", 8,
               "--angle_coupling", "decoupled") == 0
    assert run("grid", "--output_dir", tmp_path, "--seed", 3, "--C_values", "2,4,6,8,10,12,14",
               "--K_values", 12, "--W_values", 100, "--jobs", 2) == 0
    chosen = [int(r["C"]) for r in rows(tmp_path / "selection.csv") if r["selected"] == "1"]
    assert len(chosen) == 1 and abs(chosen[0] - 8) <= 2


# --- imputation on a hand-built fleet -------------------------------------------

@pytest.fixture
def tiny(tmp_path):
    """Three days.  Cluster 0 is pv0..pv3, where pv0 misses days 1 and 2 and
    all of its peers miss step 100.  Cluster 1 is two fully observed systems."""
    rng = np.random.default_rng(0)
    T = 3 * 96
    stamps = np.datetime64("2021-01-01T00:00") + np.arange(T) * np.timedelta64(15, "m")
    values = rng.uniform(0, 1000, size=(6, T))
    values[0, 96:] = np.nan
    values[1, 100] = values[2, 100] = values[3, 100] = np.nan
    ids = ("pv0", "pv1", "pv2", "pv3", "pv4", "pv5")
    table = ingest.RawSeriesTable(stamps, values, ids)
    caps = [1000.0, 2000.0, 1000.0, 500.0, 800.0, 900.0]
    meta = {s: ingest.SystemMetadata(s, c, 30.0, 180.0) for s, c in zip(ids, caps)}
    ingest.write_table(table, tmp_path / "series.csv")
    ingest.write_metadata(meta, tmp_path / "metadata.csv")
    labels = np.array([0, 0, 0, 0, 1, 1])
    agglomerative.save_assignment(ClusterAssignment(labels, 2, "average", (), ids), tmp_path / "assignment.csv")
    return tmp_path, values, np.array(caps)


def test_impute_fills_from_peer_median(tiny):
    out, values, caps = tiny
    assert run("impute", "--output_dir", out, "--system_id", "pv0") == 0
    got = rows(out / "imputed_pv0.csv")
    assert len(got) == 3 * 96
    norm = values / caps[:, None]
    for t in range(3 * 96):
        power, flag = got[t]["power"], got[t]["imputed"]
        if t < 96:
            assert float(power) == values[0, t] and flag == "0"
        elif t == 100:
            assert power == "" and flag == "0"
        else:
            expected = np.median(norm[1:4, t]) * caps[0]
            assert float(power) == pytest.approx(expected, rel=1e-12) and flag == "1"
    (report,) = rows(out / "impute_report_pv0.csv")
    assert report["missing_cells"] == str(2 * 96)
    assert report["imputed_cells"] == str(2 * 96 - 1)
    assert report["unfilled_cells"] == "1"


def test_impute_fully_observed_is_noop(tiny):
    out, values, _ = tiny
    assert run("impute", "--output_dir", out, "--system_id", "pv4") == 0
    got = rows(out / "imputed_pv4.csv")
    assert [float(r["power"]) for r in got] == values[4].tolist()
    assert all(r["imputed"] == "0" for r in got)
    source = rows(out / "series.csv")
    assert [r["timestamp"] for r in got] == [r["timestamp"] for r in source]
    assert [r["power"] for r in got] == [r["pv4"] for r in source]


def test_impute_errors(tiny):
    out, _, _ = tiny
    assert run("impute", "--output_dir", out) == 2
    assert run("impute", "--output_dir", out, "--system_id", "nope") == 1
    assert run("impute", "--output_dir", out, "--system_id", "pv0", "--impute_q", 1.5) == 2
