import json

import pytest

from cnls_kam.cli.config import RunConfig, apply_overrides, parse_config, parse_monomial, parse_sites, parse_track
from cnls_kam.cli.main import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, dispatch, main
from cnls_kam.cli.reports import read_csv
from cnls_kam.errors import ConfigError


@pytest.fixture
def pair_config(tmp_path):
    path = tmp_path / "pair.env"
    path.write_text("d=1\nsites=1,0;-1,0\nradius=4\n")
    return path


def load_report(path):
    data = json.loads(path.read_text())
    return data["manifest_id"], data["report"]


class TestParseConfig:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0\n")
        config = parse_config(path)
        assert config.b == 1
        assert config.tau == 5.0
        assert config.sites == [(1, 0)]
        assert config.N == 64 and config.radius == 5

    def test_default_scenario(self):
        config = parse_config(None)
        assert config.d == 2 and config.b == 2
        assert config.tau == 7.0

    def test_comments_and_matrices(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("# two components\nd=2\nsites=1,0;-1,0\nxi=1e-3,6e-4;8e-4,1.2e-3\n"
                        "G=1*s1*s2^2;1*s1^2*s2\ntrack=1:0,1;2:3,0\n")
        config = parse_config(path)
        assert config.xi == [[1e-3, 6e-4], [8e-4, 1.2e-3]]
        assert config.G[0][0].powers == [1, 2]
        assert config.track == [(1, (0, 1)), (2, (3, 0))]

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("d=1\nfoo=3\nsites=1,0\n")
        with pytest.raises(ConfigError) as exc_info:
            parse_config(path)
        assert exc_info.value.key == "foo"
        assert exc_info.value.line == 2

    def test_b_mismatch(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("d=1\nb=3\nsites=1,0\n")
        with pytest.raises(ConfigError) as exc_info:
            parse_config(path)
        assert exc_info.value.key == "b"

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0\nN=many\n")
        with pytest.raises(ConfigError) as exc_info:
            parse_config(path)
        assert exc_info.value.key == "N"
        assert exc_info.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.env")

    def test_xi_outside_ansatz_domain(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0\nxi=0.5\n")
        with pytest.raises(ConfigError) as exc_info:
            parse_config(path).to_sim_config()
        assert exc_info.value.key == "xi"

    def test_overrides_win(self):
        config = apply_overrides(parse_config(None), {"radius": 3, "seed": None, "tau": 9.0})
        assert config.radius == 3 and config.seed == 0
        assert config.tau == 9.0


class TestParsers:
    def test_monomial(self):
        term = parse_monomial("2*s1^2*s2", 2)
        assert term.coeff == 2.0 and term.powers == [2, 1]

    def test_monomial_variable_out_of_range(self):
        with pytest.raises(ValueError):
            parse_monomial("s3", 2)

    def test_track_needs_component(self):
        with pytest.raises(ValueError):
            parse_track("0,1")

    def test_schema_example_validates(self):
        example = RunConfig.model_config["json_schema_extra"]["example"]
        assert RunConfig(**example).resolved().tau == 5.0


class TestDispatch:
    def test_lattice_passes(self, pair_config, tmp_path):
        code, files = dispatch("lattice", parse_config(pair_config), tmp_path, "mid")
        assert code == EXIT_PASS
        assert [f.name for f in files] == ["lattice_report.json", "lattice_atlas.csv"]

    def test_normalform_on_inadmissible_set(self, tmp_path):
        path = tmp_path / "triple.env"
        path.write_text("d=1\nsites=0,0;1,0;2,0\nradius=3\n")
        code, files = dispatch("normalform", parse_config(path), tmp_path, "mid")
        assert code == EXIT_ERROR
        assert files == []

    def test_lattice_on_inadmissible_set(self, tmp_path):
        path = tmp_path / "triple.env"
        path.write_text("d=1\nsites=0,0;1,0;2,0\n")
        code, _ = dispatch("lattice", parse_config(path), tmp_path, "mid")
        assert code == EXIT_FAIL


class TestMain:
    def test_lattice(self, pair_config, tmp_path, no_ledger):
        out = tmp_path / "out"
        assert main(["lattice", "--config", str(pair_config), "--out-dir", str(out)]) == EXIT_PASS
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["exit_code"] == EXIT_PASS
        assert manifest["subcommand"] == "lattice"
        mid, report = load_report(out / "lattice_report.json")
        assert mid == manifest["manifest_id"]
        assert report["admissible"]
        rows = read_csv(out / "lattice_atlas.csv")
        second = [r for r in rows if r["tag"] == "second_type"]
        assert {(r["n1"], r["n2"]) for r in second} == {("0", "1"), ("0", "-1")}
        assert set(rows[0]) == {"n1", "n2", "tag", "block_dim", "partner", "i", "j"}

    def test_inadmissible_set_fails(self, tmp_path, no_ledger):
        path = tmp_path / "triple.env"
        path.write_text("d=1\nsites=0,0;1,0;2,0\n")
        out = tmp_path / "out"
        assert main(["lattice", "--config", str(path), "--out-dir", str(out)]) == EXIT_FAIL
        assert not (out / "lattice_atlas.csv").exists()

    def test_outputs_are_deterministic(self, pair_config, tmp_path, no_ledger):
        first, second = tmp_path / "a", tmp_path / "b"
        main(["lattice", "--config", str(pair_config), "--out-dir", str(first)])
        main(["lattice", "--config", str(pair_config), "--out-dir", str(second)])
        for name in ("lattice_report.json", "lattice_atlas.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_normalform(self, pair_config, tmp_path, no_ledger):
        out = tmp_path / "out"
        assert main(["normalform", "--config", str(pair_config), "--out-dir", str(out), "--radius", "3"]) == EXIT_PASS
        _, report = load_report(out / "normalform_report.json")
        rows = read_csv(out / "F_terms.csv")
        assert len(rows) == report["F_stats"]["term_count"]
        assert all(int(r["denominator"]) != 0 for r in rows)

    def test_melnikov_without_scan(self, pair_config, tmp_path, no_ledger):
        out = tmp_path / "out"
        code = main(["melnikov", "--config", str(pair_config), "--out-dir", str(out),
                     "--radius", "3", "--kmax", "3", "--samples", "0"])
        assert code in (0, 1)
        _, report = load_report(out / "melnikov_report.json")
        assert report["scan"] is None
        assert not (out / "measure_scan.csv").exists()

    def test_melnikov_scan(self, pair_config, tmp_path, no_ledger):
        out = tmp_path / "out"
        main(["melnikov", "--config", str(pair_config), "--out-dir", str(out), "--radius", "3",
              "--kmax", "3", "--samples", "50", "--gamma-list", "1e-2,1e-3", "--threads", "2"])
        rows = read_csv(out / "measure_scan.csv")
        assert [float(r["gamma"]) for r in rows] == [1e-2, 1e-3]

    def test_config_error_exit_code(self, tmp_path, no_ledger):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0\nxi=0.5\n")
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--out-dir", str(out)]) == EXIT_ERROR
        assert json.loads((out / "manifest.json").read_text())["exit_code"] == EXIT_ERROR
        assert not (out / "trace.csv").exists()

    def test_unknown_key_exit_code(self, tmp_path, no_ledger):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0\nfoo=1\n")
        assert main(["lattice", "--config", str(path), "--out-dir", str(tmp_path / "out")]) == EXIT_ERROR

    def test_out_dir_from_environment(self, pair_config, tmp_path, monkeypatch, no_ledger):
        monkeypatch.setenv("CNLS_OUT_DIR", str(tmp_path / "env_out"))
        assert main(["lattice", "--config", str(pair_config)]) == EXIT_PASS
        assert (tmp_path / "env_out" / "manifest.json").exists()

    def test_simulate_short_run(self, tmp_path, no_ledger):
        path = tmp_path / "run.env"
        path.write_text("d=1\nsites=1,0;-1,0\nxi=8e-4,6e-4\nN=16\ndt=1e-3\nT=1.0\nstride=50\n")
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--out-dir", str(out)]) in (0, 1)
        rows = read_csv(out / "trace.csv")
        assert len(rows) == 21
        assert "re_q1(1,0)" in rows[0] and "mass_1" in rows[0]
        _, verdict = load_report(out / "qp_verdict.json")
        assert max(verdict["mass_drift"]) < 1e-10

    @pytest.mark.slow
    def test_verify_default_scenario(self, tmp_path, no_ledger):
        out = tmp_path / "out"
        assert main(["verify", "--out-dir", str(out)]) == EXIT_PASS
        _, verdict = load_report(out / "qp_verdict.json")
        assert verdict["residual"]["ok"]


class TestSitesOption:
    def test_sites_override_the_file(self, pair_config, tmp_path, no_ledger):
        out = tmp_path / "out"
        assert main(["lattice", "--config", str(pair_config), "--sites", "1,0", "--out-dir", str(out)]) == EXIT_PASS
        config = json.loads((out / "manifest.json").read_text())["config"]
        assert config["sites"] == [[1, 0]]
        assert config["b"] == 1 and config["tau"] == 5.0
        assert config["radius"] == 4

    def test_new_site_count_rederives_b_and_tau(self):
        config = apply_overrides(parse_config(None), {"sites": parse_sites("1,0; 0,1; -1,0")})
        assert config.b == 3 and config.tau == 9.0
        assert config.xi == [] and config.box_point is None

    def test_explicit_tau_survives(self):
        config = apply_overrides(parse_config(None), {"sites": [(1, 0)], "tau": 4.0})
        assert config.b == 1 and config.tau == 4.0

    def test_same_site_count_keeps_xi(self):
        base = parse_config(None)
        config = apply_overrides(base, {"sites": [(2, 0), (-2, 0)]})
        assert config.xi == base.xi

    def test_malformed_sites_rejected(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["lattice", "--sites", "1;2"])
        assert exc_info.value.code == 2

    def test_dealias_on_by_default(self):
        assert parse_config(None).dealias
        assert parse_config(None).to_sim_config().dealias
