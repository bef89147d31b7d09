import json
import math
import re
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from lgm_emg.analysis import ParameterTable
from lgm_emg.cli import main
from lgm_emg.empirical import bin_model
from lgm_emg.metrics import area_difference, kl_divergence
from lgm_emg.models import LgmParams
from lgm_emg.recording import load_recording
from lgm_emg.report import REPORT_SCHEMA

SHORT = ["--rest-s", "3", "--action-s", "2", "--release-s", "1"]
ERROR_LINE = re.compile(r"^lgm-emg: error code=(\d) type=(\w+)", re.M)


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trials(tmp_path_factory):
    out = tmp_path_factory.mktemp("trials")
    assert main(["synth", "--out-dir", str(out), "--n-trials", "3", "--seed", "4", *SHORT]) == 0
    return out


class TestSynth:
    def test_default_profile_length(self, tmp_path, capsys):
        code, _, _ = _run(["synth", "export", "--out-dir", tmp_path], capsys)
        assert code == 0
        (path,) = sorted(tmp_path.glob("*.csv"))
        series, _ = load_recording(path)
        assert len(series) == 36000

    def test_nine_trials_distinct_seeds(self, tmp_path, capsys):
        code, _, _ = _run(["synth", "--out-dir", tmp_path, "--n-trials", 9, *SHORT], capsys)
        assert code == 0
        paths = sorted(tmp_path.glob("*.csv"))
        assert len(paths) == 9
        seeds = {load_recording(p)[0].annotations["seed"] for p in paths}
        assert len(seeds) == 9
        manifest = json.loads((tmp_path / "synth_manifest.json").read_text())
        assert sorted(manifest["outputs"]) == sorted(p.name for p in paths)

    def test_round_trip_matches_generator(self, tmp_path, capsys):
        from lgm_emg.recording import TrialMetadata
        from lgm_emg.synth import TrialProfile, derived_seed, make_trial

        _run(["synth", "--out-dir", tmp_path, "--seed", 2, *SHORT], capsys)
        (path,) = sorted(tmp_path.glob("*.csv"))
        meta = TrialMetadata(1, "novice", 0.0, "isotonic", "BB", 1)
        expect = make_trial(
            TrialProfile(3, 2, 1, 0.01, LgmParams(0.7, 0.0, 0.05, 0.0, 0.15), 2000.0, derived_seed(2, meta)), meta
        )
        assert np.array_equal(load_recording(path)[0].samples, expect.samples)

    def test_grid(self, tmp_path, capsys):
        code, _, _ = _run(
            ["synth", "--grid", "--out-dir", tmp_path, "--weights", "0,5", "--activities", "isometric", *SHORT], capsys
        )
        assert code == 0
        assert len(list(tmp_path.glob("*.csv"))) == 3 * 2 * 2


class TestFit:
    def test_all_families(self, trials, tmp_path, capsys):
        code, _, _ = _run(["fit", trials / "s01_novice_isotonic_BB_w0_t1.csv", "--out-dir", tmp_path, "--families", "lgm,sg,sl,sm"], capsys)
        assert code == 0
        payload = json.loads((tmp_path / "fits" / "s01_novice_isotonic_BB_w0_t1.json").read_text())
        assert sorted(payload["fits"]) == ["LGM", "SG", "SL", "SM"]
        assert all(math.isfinite(f["loglik"]) for f in payload["fits"].values())
        assert payload["segment"]["method"] == "detector"
        table = ParameterTable.from_csv((tmp_path / "params.csv").read_text())
        assert len(table) == 4

    def test_zero_mean(self, trials, tmp_path, capsys):
        code, _, _ = _run(["fit", trials, "--out-dir", tmp_path, "--zero-mean"], capsys)
        assert code == 0
        for path in (tmp_path / "fits").glob("*.json"):
            for fit in json.loads(path.read_text())["fits"].values():
                for key in ("mu", "mu1", "mu2"):
                    if key in fit["params"]:
                        assert fit["params"][key] == 0.0

    def test_rerun_byte_identical(self, trials, tmp_path, capsys):
        outputs = []
        for name in ("a", "b"):
            _run(["fit", trials, "--out-dir", tmp_path / name, "--families", "lgm,sg", "--seed", 5], capsys)
            files = sorted(p for p in (tmp_path / name).rglob("*") if p.is_file())
            outputs.append({p.relative_to(tmp_path / name).as_posix(): p.read_bytes() for p in files})
        assert outputs[0] == outputs[1]
        assert "fit_manifest.json" in outputs[0]

    def test_manual_segmentation(self, trials, tmp_path, capsys):
        code, _, _ = _run(
            ["fit", trials, "--out-dir", tmp_path, "--families", "sg", "--manual-start-s", 3, "--manual-end-s", 5], capsys
        )
        assert code == 0
        payload = json.loads(next((tmp_path / "fits").glob("*.json")).read_text())
        assert payload["segment"] == {"start_index": 6000, "end_index": 10000, "start_s": 3.0, "end_s": 5.0, "method": "manual"}

    def test_all_inputs_fail(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("rate=1000\n1\nNaN\n")
        code, _, err = _run(["fit", bad, "--out-dir", tmp_path / "o"], capsys)
        assert code == 3
        assert ERROR_LINE.search(err).groups() == ("3", "DataError")

    def test_partial_failure_still_succeeds(self, trials, tmp_path, capsys):
        bad = tmp_path / "in" / "zero.csv"
        bad.parent.mkdir()
        bad.write_text("rate=1000\n" + "0\n" * 5000)
        good = trials / "s01_novice_isotonic_BB_w0_t1.csv"
        code, _, err = _run(["fit", bad, good, "--out-dir", tmp_path / "o", "--families", "sg"], capsys)
        assert code == 0
        assert "NoActivityError" in err

    def test_unknown_family(self, trials, tmp_path, capsys):
        code, _, err = _run(["fit", trials, "--out-dir", tmp_path, "--families", "gmm"], capsys)
        assert code == 2
        assert ERROR_LINE.search(err).group(2) == "ConfigError"

    def test_usage_error_is_config_code(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["fit"])
        assert info.value.code == 2
        assert ERROR_LINE.search(capsys.readouterr().err)


class TestCompare:
    def test_report_validates_and_orders(self, trials, tmp_path, capsys):
        code, _, _ = _run(["compare", trials, "--out-dir", tmp_path, "--seed", 1], capsys)
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        jsonschema.validate(report, REPORT_SCHEMA)
        overall = report["averages"]["overall"]
        assert overall["LGM"]["kld"] < min(overall[f]["kld"] for f in ("SG", "SL", "SM"))
        assert report["bins"] == 100
        assert report["zero_mean"] is False
        assert set(report["lrt_summary"]) == {"LGM_vs_SG", "LGM_vs_SL"}

    def test_reuses_fits(self, trials, tmp_path, capsys):
        _run(["fit", trials, "--out-dir", tmp_path / "f", "--families", "lgm,sg"], capsys)
        code, _, _ = _run(["compare", trials, "--out-dir", tmp_path / "c", "--fits-dir", tmp_path / "f" / "fits", "--families", "lgm,sg"], capsys)
        assert code == 0
        report = json.loads((tmp_path / "c" / "report.json").read_text())
        fits = json.loads(next((tmp_path / "f" / "fits").glob("*.json")).read_text())
        first = report["trials"][0]
        assert first["models"]["LGM"]["loglik"] == fits["fits"]["LGM"]["loglik"]

    def test_bad_bins(self, trials, tmp_path, capsys):
        code, _, err = _run(["compare", trials, "--out-dir", tmp_path, "--bins", 0], capsys)
        assert code == 2
        assert ERROR_LINE.search(err).group(1) == "2"

    def test_model_against_itself(self):
        edges = np.linspace(-1, 1, 51)
        m = bin_model(LgmParams(0.6, 0, 0.2, 0, 0.5), edges)
        assert kl_divergence(m, m) == 0.0
        assert area_difference(m, m) == 0.0


class TestAnalyze:
    def test_empty_table(self, tmp_path, capsys):
        table = tmp_path / "params.csv"
        table.write_text(ParameterTable().to_csv())
        code, _, err = _run(["analyze", "--table", table, "--out-dir", tmp_path / "o"], capsys)
        assert code == 3
        assert ERROR_LINE.search(err).group(2) == "EmptyResultError"

    def test_missing_table(self, tmp_path, capsys):
        code, _, _ = _run(["analyze", "--table", tmp_path / "nope.csv", "--out-dir", tmp_path], capsys)
        assert code != 0

    def test_unpaired_warning_rows(self, trials, tmp_path, capsys):
        _run(["fit", trials, "--out-dir", tmp_path, "--families", "lgm"], capsys)
        code, _, err = _run(["analyze", "--table", tmp_path / "params.csv", "--out-dir", tmp_path / "a"], capsys)
        assert code == 0
        assert "warning: unpaired trial" in err
        analysis = json.loads((tmp_path / "a" / "analysis.json").read_text())
        assert len(analysis["unpaired"]) == 3
        assert (tmp_path / "a" / "trends" / "sigma_L.csv").exists()


class TestRepro:
    ARGS = ["--weights", "0,10", "--activities", "isotonic", "--seed", 2, *SHORT]

    def test_rerun_from_manifest_is_identical(self, tmp_path, capsys):
        assert _run(["repro", "--out-dir", tmp_path / "a", *self.ARGS], capsys)[0] == 0
        code, _, _ = _run(["repro", "--out-dir", tmp_path / "b", "--manifest", tmp_path / "a" / "manifest.json"], capsys)
        assert code == 0

        def snapshot(root):
            return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

        a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
        assert a == b
        manifest = json.loads(a["manifest.json"])
        assert set(manifest["outputs"]) <= set(a)
        assert "report.json" in manifest["outputs"]
        assert "trends/gamma_L.csv" in manifest["outputs"]

    def test_not_a_repro_manifest(self, tmp_path, capsys):
        bogus = tmp_path / "m.json"
        bogus.write_text(json.dumps({"command": "fit"}))
        code, _, _ = _run(["repro", "--out-dir", tmp_path / "o", "--manifest", bogus], capsys)
        assert code == 2


def test_schema_command(capsys):
    code, out, _ = _run(["schema"], capsys)
    assert code == 0
    assert json.loads(out) == json.loads(json.dumps(REPORT_SCHEMA))


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lgm_emg", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().startswith("lgm-emg ")
