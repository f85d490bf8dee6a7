import csv
import math
import os

import numpy as np
import pytest

from dmimocal.cli import main as cli_main
from dmimocal.config import SystemConfig
from dmimocal.errors import DmimocalError, InvalidConfigError
from dmimocal.experiments import (GridPoint, ResultTable, Scenario, aggregate,
                                  default_scenario, load_config, run_scenario,
                                  write_outputs)


def tiny_scenario(**kw):
    kw.setdefault("name", "custom")
    kw.setdefault("sweep", (GridPoint(2, -80.0, 0, F=1),))
    kw.setdefault("baselines", ())
    kw.setdefault("estimators", ("kalman",))
    kw.setdefault("beamformers", ("conj",))
    return Scenario(**kw)


def tiny_cfg(**kw):
    kw.setdefault("N", 16)
    kw.setdefault("trials", 2)
    kw.setdefault("frames_per_trial", 12)
    kw.setdefault("master_seed", 99)
    return SystemConfig(**kw)


class TestLoadConfig:
    def test_missing_file_raises(self):
        with pytest.raises(InvalidConfigError, match="not found"):
            load_config("/nonexistent/path.toml")

    def test_empty_file_gives_table_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        cfg, scenario = load_config(str(path))
        assert (cfg.tau_c, cfg.K, cfg.tau_g, cfg.tau_p, cfg.tau_d) == \
            (100, 10, 3, 10, 42)
        assert cfg.rho_UE == pytest.approx(100.0 * 10 ** 9.4, rel=1e-12)
        assert cfg.rho_AP == pytest.approx(200.0 * 10 ** 9.4, rel=1e-12)
        assert scenario.name == "cdf_two_ap"

    def test_none_path_gives_defaults(self):
        cfg, _ = load_config(None)
        assert cfg.L == 2 and cfg.N == 64

    def test_slot_identity_violation_reported(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[system]\ntau_d = 43\n")
        with pytest.raises(InvalidConfigError, match="slot split"):
            load_config(str(path))

    def test_power_conversion_from_mw(self, tmp_path):
        path = tmp_path / "p.toml"
        path.write_text("[system]\nrho_ap_mw = 200.0\nnoise_dbm = -94.0\n")
        cfg, _ = load_config(str(path))
        assert cfg.rho_AP == pytest.approx(10 ** ((23.010299956639813 + 94) / 10),
                                           rel=1e-12)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "u.toml"
        path.write_text("[system]\nbogus = 1\n")
        with pytest.raises(InvalidConfigError, match="bogus"):
            load_config(str(path))

    def test_parse_error_reported(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[system\n")
        with pytest.raises(InvalidConfigError, match="parse"):
            load_config(str(path))

    def test_scenario_grids(self, tmp_path):
        path = tmp_path / "s.toml"
        path.write_text(
            "[scenario]\nname = \"custom\"\nl_grid = [2, 4]\n"
            "s_pn_grid = [-100.0, -80.0]\nestimators = [\"kalman\"]\n"
            "beamformers = [\"zf\"]\nbaselines = []\n")
        _, scenario = load_config(str(path))
        assert len(scenario.sweep) == 4
        assert scenario.beamformers == ("zf",)

    def test_default_scenarios_exist(self):
        cfg = SystemConfig()
        for name in ("cdf_two_ap", "se_vs_frame_length", "se_vs_pn_level",
                     "se_vs_num_aps"):
            s = default_scenario(name, cfg)
            assert s.sweep
        with pytest.raises(InvalidConfigError):
            default_scenario("nope", cfg)


class TestRunScenario:
    def test_deterministic_rows(self):
        cfg = tiny_cfg()
        scenario = tiny_scenario()
        t1 = run_scenario(cfg, scenario)
        t2 = run_scenario(cfg, scenario)
        assert t1.rows == t2.rows
        assert t1.summary == t2.summary

    def test_row_schema(self):
        table = run_scenario(tiny_cfg(trials=1), tiny_scenario())
        assert len(table.rows) == 10            # one trial x K UEs
        row = table.rows[0]
        assert row[:4] == ("custom", 2, -80.0, 0)
        assert row[6:9] == ("calibrated", "kalman", "conj")
        assert row[9] > 0

    def test_grid_point_independence(self):
        cfg = tiny_cfg(trials=1)
        one = run_scenario(cfg, tiny_scenario())
        two = run_scenario(cfg, tiny_scenario(
            sweep=(GridPoint(2, -80.0, 0, F=1), GridPoint(2, -100.0, 0, F=1))))
        shared = [r for r in two.rows if r[2] == -80.0]
        assert shared == one.rows

    def test_coupled_seeds_share_world(self):
        # Same L and trial, different spectrum level: SE differs but the
        # underlying placement draw is the same seed stream (checked through
        # determinism of the difference).
        cfg = tiny_cfg(trials=1)
        table = run_scenario(cfg, tiny_scenario(
            sweep=(GridPoint(2, -80.0, 0, F=1), GridPoint(2, -120.0, 0, F=1))))
        lo = [r[9] for r in table.rows if r[2] == -120.0]
        hi = [r[9] for r in table.rows if r[2] == -80.0]
        assert np.mean(lo) >= np.mean(hi)

    def test_baselines_emitted(self):
        scenario = tiny_scenario(baselines=("no_phase_noise", "single_ap"),
                                 beamformers=("conj", "zf"))
        table = run_scenario(tiny_cfg(trials=1), scenario)
        variants = {r[6] for r in table.rows}
        assert variants == {"calibrated", "no_phase_noise", "single_ap"}


class TestAggregate:
    def make_table(self, values):
        rows = [("custom", 2, -80.0, 0, t, 1, "calibrated", "kalman", "conj", v)
                for t, v in enumerate(values)]
        return ResultTable(tuple("c" * 10), rows, [])

    def test_single_value(self):
        out = aggregate(self.make_table([2.5]), "mean")
        stats = {r[7]: r[8] for r in out}
        assert stats["mean"] == 2.5 and stats["se_mean"] == 0.0 and stats["n"] == 1

    def test_hand_mean_and_se(self):
        out = aggregate(self.make_table([1.0, 2.0, 3.0]), "mean")
        stats = {r[7]: r[8] for r in out}
        assert stats["mean"] == pytest.approx(2.0)
        assert stats["se_mean"] == pytest.approx(1.0 / math.sqrt(3.0))

    def test_cdf_non_decreasing_covers_range(self):
        vals = list(np.random.default_rng(0).uniform(0, 4, 50))
        out = aggregate(self.make_table(vals), "cdf")
        qs = [r[8] for r in out]
        assert len(qs) == 100
        assert all(b >= a for a, b in zip(qs, qs[1:]))
        assert qs[0] >= min(vals) and qs[-1] <= max(vals)

    def test_empty_table_raises(self):
        with pytest.raises(DmimocalError):
            aggregate(ResultTable((), [], []), "mean")

    def test_unknown_mode(self):
        with pytest.raises(InvalidConfigError):
            aggregate(self.make_table([1.0]), "median")


class TestCsvOutputs:
    def test_files_written_and_stable(self, tmp_path):
        cfg = tiny_cfg(trials=1)
        table = run_scenario(cfg, tiny_scenario())
        res1, summ1 = write_outputs(table, str(tmp_path / "a"), "custom")
        res2, summ2 = write_outputs(table, str(tmp_path / "b"), "custom")
        assert open(res1, "rb").read() == open(res2, "rb").read()
        assert open(summ1, "rb").read() == open(summ2, "rb").read()
        with open(res1) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(("scenario", "L", "s_pn_dbchz", "unbroken",
                                "trial", "ue", "variant", "estimator",
                                "beamformer", "se"))
        assert len(rows) == 1 + len(table.rows)


class TestCli:
    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[system]\ntau_d = 43\n")
        assert cli_main(["--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_tiny_run_exit_zero(self, tmp_path):
        conf = tmp_path / "ok.toml"
        conf.write_text(
            "[system]\nN = 16\ntrials = 1\nframes_per_trial = 12\nF = 1\n"
            "[scenario]\nname = \"custom\"\nl_grid = [2]\n"
            "estimators = [\"kalman\"]\nbeamformers = [\"conj\"]\nbaselines = []\n")
        out = tmp_path / "results"
        code = cli_main(["--config", str(conf), "--seed", "5", "--out", str(out)])
        assert code == 0
        assert os.path.exists(out / "custom_results.csv")
        assert os.path.exists(out / "custom_summary.csv")

    def test_beamformer_and_estimator_flags(self, tmp_path):
        conf = tmp_path / "ok.toml"
        conf.write_text(
            "[system]\nN = 16\ntrials = 1\nframes_per_trial = 12\nF = 1\n"
            "[scenario]\nname = \"custom\"\nl_grid = [2]\nbaselines = []\n")
        out = tmp_path / "r2"
        code = cli_main(["--config", str(conf), "--out", str(out),
                         "--estimator", "direct", "--beamformer", "zf"])
        assert code == 0
        with open(out / "custom_results.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        assert {r[7] for r in rows} == {"direct"}
        assert {r[8] for r in rows} == {"zf"}
