from __future__ import annotations

import csv
import json

from slelab.cli import EXIT_CONFIG, EXIT_FAILURE_BUDGET, EXIT_OK, main


def _summary(out):
    with open(out / "summary.csv", newline="") as fh:
        header, row = list(csv.reader(fh))
    return dict(zip(header, row))


def test_unknown_flag_and_bad_choice_exit_with_config_code(tmp_path):
    assert main(["hookup", "--bogus", "1", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert main(["hookup", "--backend", "lattice", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main(["perc", "--workers", "0", "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_unknown_key_in_config_file_is_rejected(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 10\nnot_a_parameter = 3\n")
    assert main(["hookup", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_calibration_with_too_few_pilot_samples_fails(tmp_path):
    assert main(["calibrate", "--n", "16", "--n-pilot", "4", "--out", str(tmp_path / "o")]) == EXIT_FAILURE_BUDGET


def test_hookup_run_writes_summary_with_interval(tmp_path):
    out = tmp_path / "hk"
    code = main(["hookup", "--kappa-prime", "6", "--c", "1", "--n", "20", "--backend", "perc",
                 "--lattice-n", "16", "--out", str(out)])
    assert code == EXIT_OK
    row = _summary(out)
    lo, p, hi = float(row["ci_low"]), float(row["p_hat"]), float(row["ci_high"])
    assert 0.0 <= lo <= p <= hi <= 1.0
    assert int(row["n_resolved"]) + int(row["n_unresolved"]) == 20
    lines = (out / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 20
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "hookup"
    assert manifest["parameters"]["kappa_prime"] == 6


def test_perc_crossing_is_near_one_half(tmp_path):
    out = tmp_path / "pc"
    assert main(["perc", "crossing", "--n", "32", "--samples", "4000", "--out", str(out)]) == EXIT_OK
    row = _summary(out)
    p, se = float(row["p_hat"]), float(row["se"])
    assert abs(p - 0.5) < 4 * se + 0.01


def test_rerun_from_manifest_is_byte_identical_across_worker_counts(tmp_path):
    first = tmp_path / "first"
    assert main(["perc", "crossing", "--n", "16", "--samples", "600", "--block", "100", "--seed", "11",
                 "--workers", "1", "--out", str(first)]) == EXIT_OK
    second = tmp_path / "second"
    assert main(["perc", "--config", str(first / "manifest.json"), "--workers", "2",
                 "--out", str(second)]) == EXIT_OK
    for name in ("samples.jsonl", "summary.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert json.loads((second / "manifest.json").read_text())["master_seed"] == 11
