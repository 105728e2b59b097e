import json

import pytest

from apcd.cli import build_sweep_config, config_digest, load_config, main
from apcd.errors import ConfigError


@pytest.fixture
def tiny_config(tmp_path):
    doc = {
        "benchmark": {"horizon": 0.05},
        "sweep": {"M": 6, "pool": 4, "n_grid": [1, 2], "f_bar": 0.5},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def dataset(tmp_path, tiny_config):
    out = tmp_path / "ds"
    rc = main(["gen", "--config", str(tiny_config), "--out", str(out), "--seed", "1"])
    assert rc == 0
    return out


class TestConfigLoading:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_malformed_json_has_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"benchmark": {,}}')
        with pytest.raises(ConfigError, match="line 1, column"):
            load_config(p)

    def test_unknown_section(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"benchmrk": {}}')
        with pytest.raises(ConfigError, match="unknown config section"):
            load_config(p)

    def test_unknown_field(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"benchmark": {"horzon": 1.0}}')
        with pytest.raises(ConfigError, match="unknown benchmark field"):
            build_sweep_config(load_config(p), False)

    def test_flags_override_config(self, tiny_config):
        cfg = build_sweep_config(load_config(tiny_config), False, seed=9)
        assert cfg.seed == 9 and cfg.M == 6
        assert cfg.benchmark.horizon == 0.05

    def test_digest_is_order_independent(self):
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})


class TestGen:
    def test_writes_dataset_and_manifest(self, dataset):
        assert (dataset / "model.json").exists()
        assert (dataset / "cost.json").exists()
        assert (dataset / "run_0_states.csv").exists()
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["seed"] == 1
        assert len(manifest["config_digest"]) == 64

    def test_same_seed_same_digest(self, tmp_path, tiny_config):
        digests = []
        for name in ("d1", "d2"):
            out = tmp_path / name
            assert main(
                ["gen", "--config", str(tiny_config), "--out", str(out), "--seed", "3"]
            ) == 0
            digests.append(
                json.loads((out / "manifest.json").read_text())["config_digest"]
            )
        assert digests[0] == digests[1]

    def test_bad_config_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        rc = main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 1


class TestExtractEvaluate:
    @pytest.mark.parametrize("method", ["vanilla", "natural"])
    def test_happy_path(self, dataset, tmp_path, method):
        pol = tmp_path / f"{method}.json"
        rc = main(
            ["extract", str(dataset), "--method", method, "--n", "2", "--out", str(pol)]
        )
        assert rc == 0
        assert json.loads(pol.read_text())["kind"] == (
            "mixture" if method == "vanilla" else "linear"
        )
        out = tmp_path / "eval.json"
        rc = main(["evaluate", str(dataset), str(pol), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["objective"] > 0 and doc["runs"] == 6

    def test_n_zero_rejected(self, dataset, tmp_path):
        rc = main(
            ["extract", str(dataset), "--method", "vanilla", "--n", "0",
             "--out", str(tmp_path / "p.json")]
        )
        assert rc == 1

    def test_n_exceeding_pool_rejected(self, dataset, tmp_path):
        rc = main(
            ["extract", str(dataset), "--method", "natural", "--n", "4",
             "--pool", "2", "--out", str(tmp_path / "p.json")]
        )
        assert rc == 1

    def test_invalid_method_rejected(self, dataset, tmp_path):
        rc = main(
            ["extract", str(dataset), "--method", "bogus", "--n", "1",
             "--out", str(tmp_path / "p.json")]
        )
        assert rc != 0


class TestSweepAndPlot:
    def test_sweep_then_plot(self, tmp_path, tiny_config):
        out = tmp_path / "sweep"
        rc = main(
            ["sweep", "--config", str(tiny_config), "--out", str(out),
             "--seed", "2", "--jobs", "1"]
        )
        assert rc == 0
        assert (out / "results.csv").exists()
        assert (out / "summary.csv").exists()
        assert not (out / "results.partial.csv").exists()
        plots = tmp_path / "plots"
        rc = main(["plot-data", str(out / "results.csv"), "--out", str(plots)])
        assert rc == 0
        assert any(p.suffix == ".csv" for p in plots.iterdir())

    def test_repeat_byte_identical(self, tmp_path, tiny_config):
        blobs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            assert main(
                ["sweep", "--config", str(tiny_config), "--out", str(out),
                 "--seed", "5", "--jobs", "1"]
            ) == 0
            blobs.append((out / "results.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestOracleCheck:
    def test_small_run_passes(self):
        rc = main(["oracle-check", "--trials", "5", "--steps", "4", "--seed", "0"])
        assert rc == 0
