import csv
import json
import math
import warnings

import numpy as np
import pytest

from smc2nx import bench
from smc2nx.core import Variant
from smc2nx.errors import ConfigurationError


def write(path, text):
    path.write_text(text)
    return path


def test_minimal_config_gets_defaults(tmp_path):
    write(tmp_path / "x.csv", "0.1\n0.2\n")
    cfg, exp = bench.parse_config(write(tmp_path / "c.json", '{"model": "sv", "data": "x.csv"}'))
    assert (cfg.n_theta, cfg.n_x_init, cfg.variant, cfg.tau) == (500, 100, Variant.C, 1.0)
    assert exp.variants == ["c"] and exp.seeds == [0]
    assert exp.data == str(tmp_path / "x.csv")
    assert cfg.to_dict()["n_theta"] == 500


def test_tau_with_variant_a_warns(tmp_path):
    p = write(tmp_path / "c.json", '{"model": "sv", "data": "x.csv", "variant": "a", "tau": 1.4}')
    with pytest.warns(UserWarning, match="tau"):
        bench.parse_config(p)


def test_no_warning_without_tau(tmp_path):
    p = write(tmp_path / "c.json", '{"model": "sv", "data": "x.csv", "variant": "a"}')
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bench.parse_config(p)


def test_malformed_json_reports_line(tmp_path):
    p = write(tmp_path / "c.json", '{\n  "model": "sv",\n  "data": "x.csv",,\n}')
    with pytest.raises(ConfigurationError, match="line 3"):
        bench.parse_config(p)


@pytest.mark.parametrize("raw, where", [
    ({"model": "sv", "data": "x", "n_thetas": 5}, "n_thetas"),
    ({"model": {"name": "sv", "rho": 0.5}, "data": "x"}, "model.rho"),
    ({"model": "sv", "synthetic": {"T": 5, "theta": [0, 0.5, 0.1], "extra": 1}}, "synthetic.extra"),
    ({"model": "sv", "synthetic": {"theta": [0, 0.5, 0.1]}}, "synthetic.T"),
    ({"model": "sv", "data": "x", "variants": ["c", "z"]}, r"variants\[1\]"),
    ({"model": "hmm", "data": "x"}, "model.name"),
    ({"model": "sv"}, "data"),
    ({"model": "sv", "data": "x", "seeds": [-1]}, "seeds"),
    ({"model": "sv", "data": "x", "preset": "huge"}, "preset"),
])
def test_schema_errors_name_the_key(raw, where):
    with pytest.raises(ConfigurationError, match=where):
        bench.config_from_dict(raw)


def test_desk_preset():
    cfg, exp = bench.config_from_dict({"preset": "desk"})
    assert (cfg.n_theta, cfg.n_x_init) == (200, 100)
    assert exp.synthetic["T"] == 100 and exp.seeds == [0, 1, 2, 3, 4]
    assert exp.variants == ["a", "b", "c", "d"]


def test_tau_sweep_flag():
    _, exp = bench.config_from_dict({"model": "sv", "data": "x", "tau_sweep": True})
    assert exp.tau_sweep == [2.1, 1.7, 1.4, 1.1]


def test_log_returns_of_exponential_prices(tmp_path):
    p = write(tmp_path / "p.csv", f"{1.0!r}\n{math.e!r}\n{math.e ** 2!r}\n")
    assert bench.ingest_returns(p, "log_returns_100") == pytest.approx([100.0, 100.0], abs=1e-12)
    assert np.array_equal(bench.ingest_returns(p), [1.0, math.e, math.e ** 2])


def test_single_price_gives_empty_dataset(tmp_path):
    with pytest.raises(ConfigurationError, match="empty"):
        bench.ingest_returns(write(tmp_path / "p.csv", "5.0\n"), "log_returns_100")


def test_header_skipped_and_last_column_used(tmp_path):
    p = write(tmp_path / "p.csv", "date,price\n2001-01,10\n2001-02,11\n")
    assert np.array_equal(bench.ingest_returns(p), [10.0, 11.0])
    p = write(tmp_path / "q.csv", "price\n10\n11\n")
    assert np.array_equal(bench.ingest_returns(p), [10.0, 11.0])


def test_non_numeric_row_reports_row(tmp_path):
    p = write(tmp_path / "p.csv", "price\n10\nabc\n12\n")
    with pytest.raises(ConfigurationError, match="row 3"):
        bench.ingest_returns(p)


def test_empty_file(tmp_path):
    with pytest.raises(ConfigurationError, match="empty"):
        bench.ingest_returns(write(tmp_path / "p.csv", "price\n"))


def test_worker_env(monkeypatch):
    monkeypatch.setenv(bench.WORKERS_ENV, "3")
    assert bench.worker_count() == 3
    monkeypatch.setenv(bench.WORKERS_ENV, "x")
    with pytest.raises(ConfigurationError):
        bench.worker_count()


SMALL = {"model": "sv", "synthetic": {"T": 12, "theta": [-1.0, 0.9, 0.1], "seed": 1},
         "n_theta": 20, "n_x_init": 10, "variants": ["a", "c"], "seeds": [0, 1, 2]}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg, exp = bench.config_from_dict(dict(SMALL))
    manifest = bench.run_experiment(cfg, exp, out, workers=1)
    return out, manifest


def test_file_accounting(small_run):
    out, manifest = small_run
    assert len(list((out / "traces").glob("*.csv"))) == 6
    assert all((out / f).exists() for f in bench.FIGURE_FILES.values())
    assert manifest["failures"] == [] and len(manifest["runs"]) == 6


def test_every_file_has_schema(small_run):
    out, _ = small_run
    for p in out.rglob("*.csv"):
        assert p.read_text().startswith("# schema: smc2nx-")
    assert json.loads((out / "manifest.json").read_text())["schema"] == bench.MANIFEST_SCHEMA


def test_rerun_is_byte_identical(small_run, tmp_path):
    out, _ = small_run
    cfg, exp = bench.config_from_dict(dict(SMALL))
    bench.run_experiment(cfg, exp, tmp_path, workers=2)
    for p in out.rglob("*"):
        if p.is_file():
            assert (tmp_path / p.relative_to(out)).read_bytes() == p.read_bytes(), p


def test_fig3_recomputed_from_traces(small_run):
    """Independent recomputation with the csv module only."""
    out, _ = small_run
    traces = {}
    for p in sorted((out / "traces").glob("*.csv")):
        label = p.stem.rsplit("_seed", 1)[0]
        with open(p) as fh:
            rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
        traces.setdefault(label, []).append(rows)
    expected = {}
    for label, runs in traces.items():
        for k in range(len(runs[0])):
            le = [float(r[k]["log_evidence"]) for r in runs]
            el = [float(r[k]["elapsed_s"]) for r in runs]
            expected[(label, int(runs[0][k]["t"]))] = np.var(le, ddof=1) * np.mean(el)
    got = {(r["variant"], int(r["t"])): float(r["value"])
           for r in bench.read_table(out / bench.FIGURE_FILES["fig3"]) if r["metric"] == "var_x_cpu"}
    assert got.keys() == expected.keys()
    for key, v in expected.items():
        assert got[key] == pytest.approx(v, rel=1e-12, abs=1e-300)


def test_figure_rows_unique(small_run):
    out, _ = small_run
    for f in bench.FIGURE_FILES.values():
        rows = bench.read_table(out / f)
        keys = [(r["variant"], r["seed"], r["t"], r["metric"]) for r in rows]
        assert len(keys) == len(set(keys))


def test_fig5_matches_posterior_files(small_run):
    out, manifest = small_run
    rows = bench.read_table(out / bench.FIGURE_FILES["fig5"])
    run = manifest["runs"][0]
    post = bench.read_table(out / run["posterior"])
    mu = [float(r["value"]) for r in rows
          if r["variant"] == run["label"] and int(r["seed"]) == run["seed"] and r["metric"].startswith("mu[")]
    assert mu == [float(r["mu"]) for r in post]


def test_failed_run_is_recorded_and_others_continue(tmp_path, monkeypatch):
    from smc2nx import core
    real_run = core.run

    raw = dict(SMALL, variants=["c"])
    cfg, exp = bench.config_from_dict(raw)

    def flaky(cfg, model, data):
        if cfg.seed == 1:
            st = core.smc2_init(cfg, model)
            raise core.FatalDegeneracyError("boom", st)
        return real_run(cfg, model, data)

    monkeypatch.setattr(bench, "run", flaky)
    manifest = bench.run_experiment(cfg, exp, tmp_path, workers=1)
    assert [f["seed"] for f in manifest["failures"]] == [1]
    assert len(manifest["runs"]) == 3


# --- summary


def _fixture_tables(d, finals, accs, vxc):
    fig2 = [("c", s, t, "n_x", v) for s, series in enumerate(finals) for t, v in enumerate(series)]
    fig4 = [("c", s, t, "acceptance", v) for s, series in enumerate(accs) for t, v in enumerate(series)]
    fig3 = [("c", bench.ALL_SEEDS, t, "var_x_cpu", v) for t, v in enumerate(vxc)]
    bench.write_figure_csv(fig2, d / bench.FIGURE_FILES["fig2"], "fig2")
    bench.write_figure_csv(fig3, d / bench.FIGURE_FILES["fig3"], "fig3")
    bench.write_figure_csv(fig4, d / bench.FIGURE_FILES["fig4"], "fig4")


def test_summary_single_run_has_zero_iqr(tmp_path):
    _fixture_tables(tmp_path, [[10, 20]], [[0.3, 0.5]], [0.1])
    s = bench.summarize(tmp_path)["variants"]["c"]
    assert s["final_n_x"] == {"median": 20.0, "iqr": 0.0, "n": 1}
    assert s["acceptance"]["iqr"] == 0.0 and s["acceptance"]["median"] == pytest.approx(0.4)


def test_summary_constant_traces(tmp_path):
    _fixture_tables(tmp_path, [[50, 50]] * 4, [[0.25] * 3] * 4, [2.0] * 3)
    s = bench.summarize(tmp_path)["variants"]["c"]
    assert s["final_n_x"]["median"] == 50.0
    assert s["acceptance"]["median"] == 0.25
    assert s["var_x_cpu"] == {"median": 2.0, "iqr": 0.0, "n": 3}


def test_summary_hand_quantiles(tmp_path):
    # finals 3, 9, 1, 7, 5 -> sorted 1 3 5 7 9: median 5, q1 3, q3 7
    _fixture_tables(tmp_path, [[0, 3], [0, 9], [0, 1], [0, 7], [0, 5]],
                    [[0.1], [0.2], [0.3], [0.4], [0.5]], [1.0, 2.0, 4.0, 8.0])
    s = bench.summarize(tmp_path)["variants"]["c"]
    assert s["final_n_x"] == {"median": 5.0, "iqr": 4.0, "n": 5}
    assert s["acceptance"]["median"] == pytest.approx(0.3)
    assert s["acceptance"]["iqr"] == pytest.approx(0.2)
    # 1 2 4 8: q1 = 1.75, median 3, q3 = 5
    assert s["var_x_cpu"]["median"] == pytest.approx(3.0)
    assert s["var_x_cpu"]["iqr"] == pytest.approx(3.25)
    assert s["final_var_x_cpu"] == 8.0
    assert json.loads((tmp_path / "summary.json").read_text())["schema"] == bench.SUMMARY_SCHEMA


def test_demean_flag(tmp_path):
    write(tmp_path / "x.csv", "1.0\n2.0\n6.0\n")
    _, exp = bench.parse_config(write(tmp_path / "c.json", '{"model": "sv", "data": "x.csv", "demean": true}'))
    assert np.array_equal(bench.load_data(exp, None), [-2.0, -1.0, 3.0])
    with pytest.raises(ConfigurationError, match="demean"):
        bench.config_from_dict({"model": "sv", "data": "x", "demean": "yes"})
