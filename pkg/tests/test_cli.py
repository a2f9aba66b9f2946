import json

import numpy as np
import pytest

from lggp import cli
from lggp.cli import ConfigError

FAST = ["-s", "n_samples=20", "-s", "n_warmup=20", "-s", "max_tree_depth=5",
        "-s", "J=200", "-s", "T=2", "-s", "n_predict=20", "-s", "target_accept=0.8"]


@pytest.fixture(autouse=True)
def _no_env_output(monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)


@pytest.fixture()
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "-o", str(out), "-s", "K=12", "-s", "seed=3"]) == 0
    return out / "dataset.csv"


class TestConfig:
    def test_parse_text(self):
        raw = cli.parse_config_text("# comment\nK = 8  # trailing\n\nseed=2\n")
        assert raw == {"K": "8", "seed": "2"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":2:"):
            cli.parse_config_text("K=1\nbogus\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys: frobnicate"):
            cli.resolve_config({"frobnicate": "1"})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value for J"):
            cli.resolve_config({"J": "lots"})

    def test_defaults(self):
        c = cli.resolve_config({})
        assert c["J"] == 10_000 and c["T"] == 5 and c["kappas"] == (0.0, 0.5, 1.0)
        assert c["n_samples"] is None and c["mass_matrix"] == "diagonal"

    def test_prior_override(self):
        c = cli.resolve_config({"preset": "argentopyrite", "gamma_mu_alpha": "7.5"})
        spec = cli.prior_spec(c)
        assert spec.alpha.gamma_mu == 7.5
        assert spec.beta.bound == 0.025

    def test_missing_dataset_for_fit(self, tmp_path):
        with pytest.raises(ConfigError, match="no such file"):
            cli.resolve_config({"dataset": str(tmp_path / "nope.csv")}, "fit-pl")

    @pytest.mark.parametrize("name", ["synthetic", "youngs_modulus", "argentopyrite"])
    def test_shipped_configs_parse(self, name):
        from pathlib import Path

        path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.cfg"
        c = cli.resolve_config(cli.read_config_file(path))
        assert c["preset"] == name


class TestDataFiles:
    def test_load_dataset(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x_1,y\n0.0,1.5\n0.5,2.0\n1.0,0.25\n")
        ds = cli.load_dataset(p)
        assert ds.K == 3 and ds.y[2] == 0.25

    def test_nonpositive_y_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x_1,y\n0.0,1.5\n0.5,0.0\n")
        with pytest.raises(ConfigError, match=r"d\.csv:3"):
            cli.load_dataset(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n0,1\n")
        with pytest.raises(ConfigError, match="header"):
            cli.load_dataset(p)

    def test_non_numeric_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x_1,y\n0,1\n0.5,abc\n")
        with pytest.raises(ConfigError, match=":3"):
            cli.load_dataset(p)

    def test_spectrum_scaling(self):
        ds = cli.preprocess_spectrum([100.0, 300.0, 500.0], [2.0, 4.0, 1.0])
        np.testing.assert_allclose(ds.grid[:, 0], [0.0, 0.5, 1.0])
        np.testing.assert_allclose(ds.y, [5.0, 10.0, 2.5])

    def test_spectrum_cutoff_inclusive(self):
        ds = cli.preprocess_spectrum([100.0, 300.0, 600.0, 700.0], [2.0, 4.0, 1.0, 9.0], cutoff=600)
        assert ds.K == 3 and ds.y.max() == 10.0

    def test_dataset_round_trip(self, tmp_path, small_dataset):
        cli.write_dataset(small_dataset, tmp_path / "d.csv")
        back = cli.load_dataset(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.y, small_dataset.y)
        np.testing.assert_array_equal(back.grid, small_dataset.grid)


class TestMain:
    def test_simulate(self, simulated):
        rows = simulated.read_text().splitlines()
        assert rows[0] == "x_1,y" and len(rows) == 13
        assert (simulated.parent / "truth.csv").exists()

    def test_simulate_default_size(self, tmp_path):
        assert cli.main(["simulate", "-o", str(tmp_path)]) == 0
        assert len((tmp_path / "dataset.csv").read_text().splitlines()) == 129

    def test_fit_pl_outputs(self, simulated, tmp_path):
        out = tmp_path / "fit"
        rc = cli.main(["fit-pl", "-s", f"dataset={simulated}", "-o", str(out), "-s", "trace=true"] + FAST)
        assert rc == 0
        names = {p.name for p in out.iterdir()}
        assert {"summary.json", "latent_alpha.csv", "latent_beta.csv", "predictive_y.csv",
                "hyper_chains.csv", "posterior.npz", "pl_trace.csv"} <= names
        assert not [n for n in names if n.startswith(".lggp-")]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mode"] == "pl-approx"
        w = summary["wall_time"]
        parts = sum(w[k] for k in ("pl", "warmup", "sampling", "prediction", "overhead"))
        assert parts == pytest.approx(w["total"], rel=0.05)
        header = (out / "latent_alpha.csv").read_text().splitlines()[0]
        assert header == "location,mean,q05,q50,q95"

    def test_rerun_from_summary_is_identical(self, simulated, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["fit-hmc-short", "-s", f"dataset={simulated}", "-o", str(a)] + FAST) == 0
        assert cli.main(["fit-hmc-short", "-c", str(a / "summary.json"), "-o", str(b)]) == 0
        for name in ("latent_alpha.csv", "latent_beta.csv", "predictive_y.csv", "hyper_chains.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_predict(self, simulated, tmp_path):
        fit = tmp_path / "fit"
        assert cli.main(["fit-hmc-short", "-s", f"dataset={simulated}", "-o", str(fit)] + FAST) == 0
        grid = tmp_path / "grid.csv"
        grid.write_text("x_1\n0.1\n0.2\n1.5\n")
        out = tmp_path / "pred"
        rc = cli.main(["predict", "-s", f"posterior={fit / 'posterior.npz'}",
                       "-s", f"test_grid={grid}", "-s", "n_predict=15", "-o", str(out)])
        assert rc == 0
        assert len((out / "predictive_y.csv").read_text().splitlines()) == 4

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
        assert cli.main(["simulate", "-s", "K=4"]) == 0
        assert (tmp_path / "env" / "dataset.csv").exists()

    def test_exit_codes(self, tmp_path, capsys):
        assert cli.main(["bogus"]) == 2
        assert cli.main(["simulate", "-s", "nope=1", "-o", str(tmp_path)]) == 2
        assert cli.main(["fit-pl", "-s", f"dataset={tmp_path / 'missing.csv'}"]) == 2
        assert cli.main(["fit-pl", "-s", "K"]) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_data_exit_code(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x_1,y\n0.0,-1\n")
        assert cli.main(["fit-pl", "-s", f"dataset={p}", "-o", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o" / "summary.json").exists()

    def test_bad_schedule(self, simulated, tmp_path):
        rc = cli.main(["fit-pl-tempered", "-s", f"dataset={simulated}", "-s", "kappas=0,0.5",
                       "-s", "temper_warmups=1,1", "-o", str(tmp_path)] + FAST)
        assert rc == 2
