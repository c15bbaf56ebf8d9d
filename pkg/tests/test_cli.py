import json
import subprocess
import sys
import time

import numpy as np
import pytest

from jitter_transfer.cli import ConfigError, RunConfig, hardware_report, main
from jitter_transfer.measurement import MeasurementRecord, read_records_csv
from jitter_transfer.recovery import VolatilitySolution

from reference_values import PERIODS, SIGMA_T0


def osc(period, acc):
    return {"period_s": period, "volatility": {"value": acc, "units": "accumulated", "reference_period_s": 1e-3},
            "duty_cycle": 0.5}


def base_config(n_bits=20_000):
    return {"oscillators": [osc(t, s) for t, s in zip(PERIODS, SIGMA_T0)],
            "pairs": [[0, 1], [0, 2], [1, 2]], "n_bits": n_bits, "mode": "exact_ig"}


@pytest.fixture
def config_file(tmp_path):
    def write(cfg=None, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(base_config() if cfg is None else cfg))
        return str(path)
    return write


class TestRunConfig:
    def test_parse(self):
        cfg = RunConfig.from_dict(base_config())
        assert len(cfg.oscillators) == 3
        assert cfg.oscillators[1].accumulated(1e-3).value == pytest.approx(2e-3)

    def test_round_trip(self):
        cfg = RunConfig.from_dict({**base_config(), "seed": 5})
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_rate_units(self):
        d = base_config()
        d["oscillators"][0] = {"frequency_hz": 1000.0, "volatility": {"value": 0.0316, "units": "s^-1/2"}}
        assert RunConfig.from_dict(d).oscillators[0].volatility == 0.0316

    @pytest.mark.parametrize("mutate,field", [
        (lambda d: d["oscillators"][1]["volatility"].pop("units"), "oscillators[1].volatility.units"),
        (lambda d: d["oscillators"][0]["volatility"].update(units="ms"), "oscillators[0].volatility.units"),
        (lambda d: d["oscillators"][0].update(frequency_hz=1e3), "oscillators[0]"),
        (lambda d: d["oscillators"][2].pop("period_s"), "oscillators[2]"),
        (lambda d: d["oscillators"][0]["volatility"].pop("reference_period_s"),
         "oscillators[0].volatility.reference_period_s"),
        (lambda d: d.update(n_bits=0), "n_bits"),
        (lambda d: d.update(mode="fast"), "mode"),
        (lambda d: d.update(pairs=[[0, 1], [0, 1]]), "pairs"),
        (lambda d: d.update(pairs=[[0, "1"]]), "pairs[0]"),
        (lambda d: d["oscillators"][0].update(duty_cycle=1.5), "oscillators[0]"),
    ])
    def test_errors_name_the_field(self, mutate, field):
        d = base_config()
        mutate(d)
        with pytest.raises(ConfigError) as exc:
            RunConfig.from_dict(d)
        assert exc.value.field == field


class TestSimulate:
    def test_writes_streams(self, tmp_path, config_file):
        out = tmp_path / "run"
        assert main(["simulate", "--config", config_file(), "--seed", "3", "--out", str(out), "--csv"]) == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert [s["pair"] for s in meta["streams"]] == [[0, 1], [0, 2], [1, 2]]
        assert (out / "pair_0_1.bin").stat().st_size == 20_000 // 8
        assert (out / "pair_0_1.csv").read_text().startswith("index,bit\n")
        assert RunConfig.from_dict(meta["config"]).seed == 3

    def test_byte_identical(self, tmp_path, config_file):
        cfg = config_file()
        for d in ("a", "b"):
            main(["simulate", "--config", cfg, "--seed", "11", "--out", str(tmp_path / d)])
        for name in ("pair_0_1.bin", "pair_0_2.bin", "pair_1_2.bin", "metadata.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_required(self, config_file):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--config", config_file()])
        assert exc.value.code == 2

    def test_missing_units(self, tmp_path, config_file, capsys):
        d = base_config()
        del d["oscillators"][1]["volatility"]["units"]
        assert main(["simulate", "--config", config_file(d), "--seed", "1", "--out", str(tmp_path / "r")]) == 2
        assert "oscillators[1].volatility.units" in capsys.readouterr().err

    def test_bad_json(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text("{nope")
        assert main(["simulate", "--config", str(tmp_path / "bad.json"), "--seed", "1"]) == 2

    def test_performance(self, tmp_path, config_file):
        start = time.perf_counter()
        main(["simulate", "--config", config_file(base_config(1_000_000)), "--seed", "1",
              "--out", str(tmp_path / "big")])
        assert time.perf_counter() - start < 60


class TestMeasure:
    def test_reference_pipeline(self, tmp_path, config_file):
        run = tmp_path / "run"
        main(["simulate", "--config", config_file(base_config(1_000_000)), "--seed", "21", "--out", str(run),
              "--record-phases"])
        assert main(["measure", "--run", str(run), "--out", str(tmp_path / "m.json"),
                     "--csv", str(tmp_path / "m.csv")]) == 0
        recs = [MeasurementRecord.from_dict(d) for d in json.loads((tmp_path / "m.json").read_text())["records"]]
        # measured values reported for the three pairs
        for r, target in zip(recs, (2.39e-3, 3.37e-3, 3.19e-3)):
            assert r.sigma_prime == pytest.approx(target, rel=0.05)
        assert [r.pair for r in read_records_csv(tmp_path / "m.csv")] == [(0, 1), (0, 2), (1, 2)]

        assert main(["measure", "--run", str(run), "--method", "phase-oracle", "--out", str(tmp_path / "o.json")]) == 0
        oracle = [MeasurementRecord.from_dict(d) for d in json.loads((tmp_path / "o.json").read_text())["records"]]
        for a, b in zip(recs, oracle):
            assert abs(a.sigma_prime - b.sigma_prime) <= 1.96 * (a.std_error + b.std_error)

    def test_empty_bit_file(self, tmp_path, config_file):
        run = tmp_path / "run"
        main(["simulate", "--config", config_file(), "--seed", "1", "--out", str(run)])
        (run / "pair_0_2.bin").write_bytes(b"")
        assert main(["measure", "--run", str(run)]) == 2

    def test_oracle_needs_phases(self, tmp_path, config_file):
        run = tmp_path / "run"
        main(["simulate", "--config", config_file(), "--seed", "1", "--out", str(run)])
        assert main(["measure", "--run", str(run), "--method", "phase-oracle"]) == 2

    def test_estimation_failure_exit_code(self, tmp_path, config_file):
        d = base_config()
        for o in d["oscillators"]:
            o["volatility"]["value"] = 0.3
        assert main(["measure", "--config", config_file(d), "--seed", "2"]) == 3

    def test_config_mode_needs_seed(self, config_file):
        assert main(["measure", "--config", config_file()]) == 2


class TestRecover:
    def write_expected(self, tmp_path, values=(2.43e-3, 3.36e-3, 3.17e-3)):
        path = tmp_path / "rec.csv"
        rows = ["i,j,ratio,sigma_prime,T_ref,n_bits,method"]
        for (i, j), v in zip(((0, 1), (0, 2), (1, 2)), values):
            rows.append(f"{i},{j},{PERIODS[i] / PERIODS[j]},{v},{PERIODS[i]},0,expected")
        path.write_text("\n".join(rows) + "\n")
        return str(path)

    def test_expected_values(self, tmp_path):
        out = tmp_path / "sol.json"
        assert main(["recover", "--records", self.write_expected(tmp_path), "--out", str(out),
                     "--periods", *map(str, PERIODS)]) == 0
        sol = VolatilitySolution.from_dict(json.loads(out.read_text()))
        np.testing.assert_allclose(sol.sigma_accumulated, SIGMA_T0, rtol=0.02)

    def test_negative_variance_is_not_an_error(self, tmp_path):
        out = tmp_path / "sol.json"
        path = self.write_expected(tmp_path, (6e-3, 1e-3, 1e-3))
        assert main(["recover", "--records", path, "--out", str(out)]) == 0
        assert json.loads(out.read_text())["flags"] == ["negative_variance"]

    def test_method_comparison(self, tmp_path, capsys):
        assert main(["recover", "--records", self.write_expected(tmp_path), "--method", "1", "--compare"]) == 0
        text = capsys.readouterr().out
        assert "method=method1" in text and "method=method2_3osc" in text and "relative difference" in text

    def test_missing_pair(self, tmp_path):
        path = tmp_path / "rec.csv"
        path.write_text("i,j,ratio,sigma_prime,T_ref,n_bits,method\n0,1,1.38,0.0024,0.001,0,expected\n")
        assert main(["recover", "--records", str(path)]) == 2

    def test_empty_records(self, tmp_path):
        (tmp_path / "r.json").write_text("[]")
        assert main(["recover", "--records", str(tmp_path / "r.json")]) == 2

    def test_expected_command_feeds_recover(self, tmp_path, config_file, capsys):
        assert main(["expected", "--config", config_file(), "--out", str(tmp_path / "e.json")]) == 0
        assert main(["recover", "--records", str(tmp_path / "e.json"), "--out", str(tmp_path / "s.json")]) == 0
        sol = json.loads((tmp_path / "s.json").read_text())
        np.testing.assert_allclose(np.sqrt(sol["sigma_sq_T0"]), SIGMA_T0, rtol=1e-9)


class TestDiagnose:
    def test_outputs(self, tmp_path, capsys):
        assert main(["diagnose", "--out-dir", str(tmp_path), "--levels", "0.001", "0.01", "0.1"]) == 0
        assert (tmp_path / "discrepancy.csv").read_text().startswith("jitter,discrepancy\n")
        assert (tmp_path / "density.csv").read_text().startswith("phase,pdfexact,pdfapprox\n")
        out = capsys.readouterr().out
        slope = float(out.split("log-log slope:")[1])
        assert slope == pytest.approx(1.0, abs=0.2)
        first = float(out.splitlines()[1].split(",")[1])
        assert first < 1e-2

    def test_bad_level(self, tmp_path):
        assert main(["diagnose", "--out-dir", str(tmp_path), "--levels", "0.7"]) == 2


class TestHardwareReport:
    def test_runs_and_reports(self, capsys):
        res = hardware_report()
        assert set(res) == {"experiment_1", "experiment_2"}
        for v in res.values():
            assert all(np.isfinite(v["method1"]))
        assert "not expected to match" in capsys.readouterr().out

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "jitter_transfer", "hardware-report"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "experiment_1" in proc.stdout
