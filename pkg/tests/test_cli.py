import csv
import json

import pytest

from clbacktest.cli import main, shipped_config
from clbacktest.experiment import (
    ConfigError,
    load_experiment,
    parse_experiment,
    parse_panjer_check,
)

SMALL = """
[experiment]
name = "small"
seed = 11
n_scenarios = {n}
n_replications = {reps}
levels = [0.1, 0.5, 0.9]
dump_deltas = true
dump_tables = 1

[[sweep]]
I = [4, 5]
pattern = {{kind = "linear"}}
count = {{dist = "poisson", lambda = 40}}
severity = [{{dist = "unit"}}, {{dist = "pareto", alpha = 3.5, r = 100}}]
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParsing:
    def test_unknown_key_is_error(self, tmp_path):
        path = write(tmp_path, SMALL.format(n=5, reps=2).replace("dump_tables = 1", "dump_tabels = 1"))
        with pytest.raises(ConfigError, match="dump_tabels"):
            load_experiment(path)

    def test_unknown_nested_key(self):
        doc = {"sweep": [{"I": 4, "pattern": {"kind": "linear", "slope": 2},
                          "count": {"dist": "poisson", "lambda": 3}, "severity": {"dist": "unit"}}]}
        with pytest.raises(ConfigError, match="slope"):
            parse_experiment(doc)

    def test_invalid_values(self):
        doc = {"sweep": [{"I": 4, "pattern": {"kind": "exponential", "decay": 2},
                          "count": {"dist": "poisson", "lambda": 3}, "severity": {"dist": "unit"}}]}
        with pytest.raises(ConfigError):
            parse_experiment(doc)

    def test_cross_product(self, tmp_path):
        spec = load_experiment(write(tmp_path, SMALL.format(n=5, reps=2)))
        assert len(spec.configs) == 4
        assert [c.scenario.I for c in spec.configs] == [4, 4, 5, 5]

    def test_matched_exponential(self):
        doc = {"sweep": [{"I": 4, "pattern": {"kind": "linear"}, "count": {"dist": "poisson", "lambda": 3},
                          "severity": {"dist": "exponential", "match_pareto_alpha": 4.0, "r": 1000}}]}
        sev = parse_experiment(doc).configs[0].scenario.severity
        assert sev.mu == pytest.approx(0.002)

    def test_seed_override(self, tmp_path):
        spec = load_experiment(write(tmp_path, SMALL.format(n=5, reps=2)), seed=99)
        assert spec.seed == 99 and all(c.scenario.seed == 99 for c in spec.configs)
        assert spec.raw["experiment"]["seed"] == 99

    def test_panjer_params(self):
        p = parse_panjer_check({"panjer": {"lambda": 12, "h": 5, "severity": {"dist": "pareto", "alpha": 4, "r": 1000}}})
        assert p.lam == 12 and p.n_batches == 10 and p.n_samples == 1000
        with pytest.raises(ConfigError):
            parse_panjer_check({"panjer": {"lambda": 12, "h": 5, "severity": {"dist": "unit"}, "bins": 3}})

    @pytest.mark.parametrize("name", ["fig2", "fig3", "fig5", "fig6", "fig7", "table2"])
    def test_shipped_configs_parse(self, name):
        spec = load_experiment(shipped_config(name))
        assert spec.configs and spec.name == name


class TestRun:
    def test_empty_sweep(self, tmp_path):
        path = write(tmp_path, '[experiment]\nname = "empty"\n')
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["configs"] == [] and manifest["n_configs"] == 0
        assert read_csv(out / "percentiles.csv") == []

    def test_single_config_one_delta(self, tmp_path):
        text = """
[experiment]
n_scenarios = 1
n_replications = 1
dump_deltas = true
[[sweep]]
I = 5
pattern = {kind = "linear"}
count = {dist = "poisson", lambda = 100}
severity = {dist = "unit"}
"""
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, text)), "--out", str(out)]) == 0
        rows = read_csv(out / "deltas.csv")
        assert len(rows) == 1 and float(rows[0]["delta"]) == float(rows[0]["delta"])
        bias = read_csv(out / "bias.csv")
        assert bias[0]["delta_stdev"] == "nan"
        assert float(bias[0]["delta_mean"]) == float(rows[0]["delta"])

    def test_outputs_and_manifest(self, tmp_path):
        path = write(tmp_path, SMALL.format(n=20, reps=3))
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out)]) == 0
        pct = read_csv(out / "percentiles.csv")
        assert len(pct) == 4 * 3
        assert list(pct[0]) == ["config_id", "level", "q_mean", "q_stdev"]
        bias = read_csv(out / "bias.csv")
        assert list(bias[0]) == ["config_id", "delta_mean", "delta_stdev", "Delta_metric", "resample_total"]
        manifest = json.loads((out / "manifest.json").read_text())
        spec = load_experiment(path)
        for row, entry, cfg in zip(bias, manifest["configs"], spec.configs):
            assert float(row["Delta_metric"]) == entry["Delta_metric"] == cfg.delta_metric
            assert entry["config_hash"] == cfg.config_hash
        assert manifest["seed"] == 11 and "code_version" in manifest and "created" in manifest
        assert len(read_csv(out / "deltas.csv")) == 4 * 3 * 20
        assert len(list((out / "tables").glob("*.csv"))) == 4 * 2

    def test_rerun_and_manifest_replay_are_identical(self, tmp_path):
        path = write(tmp_path, SMALL.format(n=30, reps=2))
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["run", str(path), "--out", str(a), "--seed", "5"]) == 0
        assert main(["run", str(path), "--out", str(b), "--seed", "5", "--jobs", "2"]) == 0
        assert main(["run", str(a / "manifest.json"), "--out", str(c)]) == 0
        for name in ("percentiles.csv", "bias.csv", "deltas.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()

    def test_exhausted_config_reported(self, tmp_path, capsys):
        text = """
[experiment]
n_scenarios = 5
n_replications = 1
max_resamples_per_scenario = 2
[[sweep]]
I = [4, 6]
pattern = {kind = "linear"}
count = [{dist = "poisson", lambda = 50}, {dist = "poisson", lambda = 0.01}]
severity = {dist = "unit"}
"""
        code = main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")])
        assert code != 0
        assert "c001" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path):
        assert main(["run", str(write(tmp_path, "[experiment]\nfoo = 1\n"))]) == 2
        assert main(["run", str(tmp_path / "missing.toml")]) == 2


class TestPanjerCommand:
    def test_unit_lattice_reduces_to_poisson(self, tmp_path):
        text = """
[panjer]
lambda = 12
h = 1
severity = {dist = "exponential", mu = 1e6, r = 1}
n_batches = 4
n_samples = 1000
"""
        out = tmp_path / "pc"
        assert main(["panjer-check", str(write(tmp_path, text)), "--out", str(out)]) == 0
        report = json.loads((out / "panjer_report.json").read_text())
        assert report["max_deviation"] <= 1.63 / 1000**0.5
        rows = read_csv(out / "panjer_grid.csv")
        assert list(rows[0])[:3] == ["x", "g", "cdf"]
        assert "ecdf_lo" in rows[0] and "ecdf_hi" in rows[0]
