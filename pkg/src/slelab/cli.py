"""Command-line experiment runner.

Every subcommand turns its resolved parameters into a list of independent jobs.
Job ``i`` draws all its randomness from ``derive_seed(master_seed, i)``, so the
output does not depend on the number of workers.  Results are written by the
parent process only, in job order:

* ``manifest.json``: master seed, resolved parameters, calibrated constants,
  tool version and timestamp;
* ``samples.jsonl``: one record per job;
* ``summary.csv``: one header row and one row of aggregate statistics.

Exit status is 0 on success, 2 on a configuration error and 3 when more than 1%
of the jobs failed numerically.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import ConfigurationError, NumericError, ParameterError, SlelabError, TopologyError
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE_BUDGET = 3
FAILURE_BUDGET = 0.01


# ---------------------------------------------------------------------------
# job functions (module level so worker processes can import them)


def _trace_job(params: dict, index: int, seed: int) -> dict:
    from .driving import sample_brownian_driving
    from .loewner import extract_trace

    path = sample_brownian_driving(params["kappa"], params["T"], params["dt"], seed)
    tr = extract_trace(path.to_chain(), int(params["stride"]))
    tip = complex(tr.points[-1])
    return {"index": index, "tip": [tip.real, tip.imag], "n_points": int(len(tr.points)),
            "capacity": float(tr.times[-1])}


def _hookup_job(params: dict, index: int, seed: int) -> dict:
    if params["backend"] == "perc":
        from .percolation import percolation_hookup_backend

        est = percolation_hookup_backend(params["c"], int(params["lattice_n"]), 1, seed, cross_check_every=0)
        event = "E1" if est.p_hat == 1.0 else "E2"
    else:
        from .ensembles import estimate_fkappa

        est = estimate_fkappa(params["kappa_prime"], params["c"], 1, seed=seed,
                              step_fraction=params["step_fraction"])
        event = est.samples[0].event
    return {"index": index, "event": event}


def _perc_job(params: dict, index: int, seed: int) -> dict:
    if params["mode"] == "crossing":
        from .percolation import crossing_probability

        est = crossing_probability(int(params["n"]), n_samples=int(params["block"]), seed=seed)
        return {"index": index, "open_lr": int(est.open_lr), "n_samples": int(est.n_samples)}
    from .percolation import compare_switch, default_regions, find_intertwined_pairs, switch_pair
    from .pivotal import LatticeState

    st = LatticeState.sample(int(params["n"]), seed)
    A, B = default_regions(int(params["n"]))
    pairs = find_intertwined_pairs(st.path, A, B, st.config.colours())
    if not pairs:
        return {"index": index, "pairs": 0, "outside_perimeters_equal": None, "order_changed": None,
                "involution": None}
    new, path = switch_pair(st.config, pairs[0])
    rep = compare_switch(st.path, path, pairs[0].sites)
    back, _ = switch_pair(new, pairs[0])
    return {"index": index, "pairs": len(pairs), "outside_perimeters_equal": bool(rep.outside_perimeters_equal),
            "order_changed": bool(rep.order_changed), "involution": bool(back.same_as(st.config))}


def _scale_params(params: dict):
    from .pivotal import ScaleParameters

    return ScaleParameters(N=int(params["N"]), delta0=float(params["delta0"]), beta0=float(params["beta0"]))


def _pivotal_job(params: dict, index: int, seed: int) -> dict:
    from .pivotal import LatticeState, run_chain

    st = LatticeState.sample(int(params["n"]), seed)
    lc0, il0 = st.loop_count(), st.interface_length()
    end, recs = run_chain(st, int(params["steps"]), int(params["k"]), _scale_params(params), seed)
    return {"index": index, "loop_count_0": lc0, "interface_length_0": il0, "loop_count": end.loop_count(),
            "interface_length": end.interface_length(), "passed": sum(r.passed for r in recs),
            "flipped": sum(r.flipped for r in recs)}


def _tworegion_job(params: dict, index: int, seed: int) -> dict:
    from .pivotal import LatticeState, default_two_regions, two_region_step

    st = LatticeState.sample(int(params["n"]), seed)
    B1, B2 = default_two_regions(st)
    _, rep = two_region_step(st, B1, B2, int(params["k"]), _scale_params(params), seed)
    return {"index": index, "status": rep.status, "pivotals": [len(rep.pivotals[0]), len(rep.pivotals[1])],
            "outside_perimeters_equal": rep.outside_perimeters_equal, "order_changed": rep.order_changed}


def _initial_bichordal_sets(ell: float):
    from .bichordal import CompactSet

    a = CompactSet("left", (np.array([0.2j, 0.3 + 0.5j, 0.8j]) * ell,), ell)
    b = CompactSet("left", (np.array([0.1j, 0.15 + 0.3j, 0.1 + 0.9j, 0.95j]) * ell,), ell)
    return a, b


def _bichordal_job(params: dict, index: int, seed: int) -> dict:
    from .bichordal import coupling_trial

    K1, K1t = _initial_bichordal_sets(float(params["ell"]))
    pairs = ((params["rho1"], params["rho2"]), (params["rho1p"], params["rho2p"]))
    res = coupling_trial(K1, K1t, params["kappa"], pairs, int(params["max_steps"]), seed, 0, params["dt"],
                         int(params["level"]), stop_at_coalescence=bool(params["stop_at_coalescence"]))
    return {"trial": index, "index": index, "coalesced": res.coalesced, "step": res.step,
            "both_in_Dplus_first": res.both_in_Dplus_first}


def _calibrate_job(params: dict, index: int, seed: int) -> dict:
    from .pivotal import calibrate

    cal = calibrate(int(params["n"]), int(params["n_pilot"]), seed, int(params["N"]))
    return {"index": index, **cal.to_dict()}


# ---------------------------------------------------------------------------
# reducers


def _mean_tip(records: list[dict]) -> dict:
    tips = np.array([complex(*r["tip"]) for r in records]) if records else np.zeros(0, dtype=complex)
    return {"n": len(records), "mean_abs_tip": float(np.mean(np.abs(tips))) if records else float("nan")}


def _hookup_summary(records: list[dict]) -> dict:
    from .percolation import wilson_interval

    ones = sum(r["event"] == "E1" for r in records)
    resolved = sum(r["event"] in ("E1", "E2") for r in records)
    lo, hi = wilson_interval(ones, resolved)
    return {"p_hat": ones / resolved if resolved else float("nan"), "ci_low": lo, "ci_high": hi,
            "n_resolved": resolved, "n_unresolved": len(records) - resolved}


def _perc_summary(records: list[dict]) -> dict:
    if records and "open_lr" in records[0]:
        k = sum(r["open_lr"] for r in records)
        n = sum(r["n_samples"] for r in records)
        p = k / n if n else float("nan")
        return {"p_hat": p, "se": float(np.sqrt(p * (1 - p) / n)) if n else float("nan"), "n_samples": n}
    with_pairs = [r for r in records if r["pairs"]]
    return {"configs": len(records), "with_pairs": len(with_pairs),
            "perimeters_equal": sum(bool(r["outside_perimeters_equal"]) for r in with_pairs),
            "order_changed": sum(bool(r["order_changed"]) for r in with_pairs),
            "involution": sum(bool(r["involution"]) for r in with_pairs)}


def _pivotal_summary(records: list[dict]) -> dict:
    from scipy.stats import ks_2samp

    out = {"chains": len(records), "passed": sum(r["passed"] for r in records),
           "flipped": sum(r["flipped"] for r in records)}
    for key in ("loop_count", "interface_length"):
        a = [r[f"{key}_0"] for r in records]
        b = [r[key] for r in records]
        out[f"ks_p_{key}"] = float(ks_2samp(a, b).pvalue) if len(records) > 1 else float("nan")
    return out


def _tworegion_summary(records: list[dict]) -> dict:
    out: dict = {"n": len(records)}
    for r in records:
        out[r["status"]] = out.get(r["status"], 0) + 1
    out["both_regions_pivotal"] = sum(min(r["pivotals"]) >= 1 for r in records)
    return out


def _bichordal_summary(records: list[dict]) -> dict:
    n = len(records)
    return {"trials": n, "coalescence_frequency": sum(r["coalesced"] for r in records) / n if n else float("nan"),
            "both_in_Dplus_frequency": sum(r["both_in_Dplus_first"] is not None for r in records) / n
            if n else float("nan")}


def _calibrate_summary(records: list[dict]) -> dict:
    return dict(records[0]) if records else {}


# ---------------------------------------------------------------------------
# subcommand table


@dataclass(frozen=True)
class Subcommand:
    name: str
    defaults: dict
    job: Callable
    summary: Callable
    record_keys: tuple
    n_jobs: Callable[[dict], int]
    help: str = ""


SUBCOMMANDS = {
    "trace": Subcommand("trace", {"kappa": 2.0, "T": 1.0, "dt": 1e-3, "n": 10, "stride": 10}, _trace_job,
                        _mean_tip, ("index", "tip", "n_points", "capacity"), lambda p: int(p["n"]),
                        "sample SLE traces"),
    "hookup": Subcommand("hookup", {"kappa_prime": 6.0, "c": 1.0, "n": 1000, "backend": "sle", "lattice_n": 64,
                                    "step_fraction": 2e-3}, _hookup_job, _hookup_summary, ("index", "event"),
                         lambda p: int(p["n"]), "estimate the one-loop pairing probability"),
    "perc": Subcommand("perc", {"mode": "crossing", "n": 64, "samples": 10000, "block": 1000}, _perc_job,
                       _perc_summary, ("index",),
                       lambda p: int(np.ceil(int(p["samples"]) / int(p["block"]))) if p["mode"] == "crossing"
                       else int(p["samples"]), "percolation crossing or pair-switch experiments"),
    "pivotal": Subcommand("pivotal", {"n": 64, "k": 1, "steps": 10, "chains": 100, "N": 10, "delta0": 0.5,
                                      "beta0": 0.5}, _pivotal_job, _pivotal_summary,
                          ("index", "loop_count", "interface_length", "passed", "flipped"),
                          lambda p: int(p["chains"]), "pivotal resampling chains"),
    "tworegion": Subcommand("tworegion", {"n": 64, "k": 1, "samples": 200, "N": 10, "delta0": 0.5,
                                          "beta0": 0.5}, _tworegion_job, _tworegion_summary,
                            ("index", "status", "pivotals"), lambda p: int(p["samples"]),
                            "two-region switches"),
    "bichordal": Subcommand("bichordal", {"kappa": 3.0, "rho1": 0.0, "rho2": 0.0, "rho1p": 0.0, "rho2p": 0.0,
                                          "max_steps": 20, "trials": 200, "level": 2, "dt": 1e-3, "ell": 1.0,
                                          "stop_at_coalescence": True}, _bichordal_job, _bichordal_summary,
                            ("trial", "coalesced", "step", "both_in_Dplus_first"), lambda p: int(p["trials"]),
                            "bi-chordal coupling trials"),
    "calibrate": Subcommand("calibrate", {"n": 64, "n_pilot": 1000, "N": 10}, _calibrate_job, _calibrate_summary,
                            ("index", "delta0", "beta0", "b"), lambda p: 1, "calibrate the pivotal constants"),
}

_CHOICES = {("hookup", "backend"): ("sle", "perc"), ("perc", "mode"): ("crossing", "switch")}


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def read_config(path: str | Path) -> tuple[dict, int | None]:
    """Parameters (and the master seed, if present) from a key-value file or a run manifest."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        if "parameters" in doc:
            return dict(doc["parameters"]), doc.get("master_seed")
        return dict(doc), doc.pop("seed", None)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as err:
        raise ConfigurationError(f"cannot parse {path}: {err}") from None
    values = {k: _parse_value(v) for k, v in parser["run"].items()}
    seed = values.pop("seed", None)
    return values, seed


def resolve_params(sub: Subcommand, file_values: dict, cli_values: dict) -> dict:
    params = dict(sub.defaults)
    for source in (file_values, cli_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in sub.defaults:
                raise ConfigurationError(f"unknown parameter {key!r} for {sub.name}")
            default = sub.defaults[key]
            try:
                if isinstance(default, bool):
                    value = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    value = int(value)
                elif isinstance(default, float):
                    value = float(value)
                else:
                    value = str(value)
            except (TypeError, ValueError):
                raise ConfigurationError(f"bad value {value!r} for {key}") from None
            params[key] = value
    for (name, key), choices in _CHOICES.items():
        if name == sub.name and params[key] not in choices:
            raise ConfigurationError(f"{key} must be one of {choices}")
    if sub.n_jobs(params) < 1:
        raise ConfigurationError("the run has no samples")
    return params


def validate_record(sub: Subcommand, record: dict) -> None:
    """Every record is a JSON object carrying the subcommand's declared keys."""
    missing = [k for k in sub.record_keys if k not in record]
    if missing and not record.get("failed"):
        raise ConfigurationError(f"record {record.get('index')} lacks {missing}")
    json.dumps(record)


# ---------------------------------------------------------------------------
# execution


def _run_one(args: tuple) -> dict:
    name, params, index, master_seed = args
    sub = SUBCOMMANDS[name]
    seed = derive_seed(master_seed, index)
    try:
        return sub.job(params, index, seed)
    except (NumericError, TopologyError) as err:
        return {"index": index, "failed": True, "error": f"{type(err).__name__}: {err}"}


def run_jobs(name: str, params: dict, master_seed: int, workers: int) -> list[dict]:
    sub = SUBCOMMANDS[name]
    jobs = [(name, params, i, master_seed) for i in range(sub.n_jobs(params))]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _jsonable(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not serialisable: {type(x)}")


def write_outputs(out_dir: Path, name: str, params: dict, master_seed: int, records: list[dict],
                  summary: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    calibrated = None
    if name == "calibrate" and records and not records[0].get("failed"):
        calibrated = {k: records[0][k] for k in ("N", "delta0", "beta0", "b")}
    elif "delta0" in params:
        calibrated = {"N": params["N"], "delta0": params["delta0"], "beta0": params["beta0"],
                      "b": 2.0 ** (-params["N"] * params["beta0"])}
    manifest = {"subcommand": name, "master_seed": int(master_seed), "parameters": params,
                "calibrated_constants": calibrated, "tool_version": __version__,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    with open(out_dir / "samples.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, default=_jsonable) + "\n")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(summary.keys())
        w.writerow(keys)
        w.writerow([summary[k] for k in keys])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slelab", description="Desk-scale SLE and percolation experiments.")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, sub in SUBCOMMANDS.items():
        p = subs.add_parser(name, help=sub.help)
        p.add_argument("--config", help="key = value file or a previous manifest.json")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes (default $SLELAB_WORKERS or 1)")
        for key, default in sub.defaults.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=f"param_{key}", default=None, help=f"default {default}")
        if name == "perc":
            p.add_argument("mode_positional", nargs="?", choices=("crossing", "switch"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    sub = SUBCOMMANDS[args.subcommand]
    try:
        file_values, file_seed = read_config(args.config) if args.config else ({}, None)
        cli_values = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_")}
        if getattr(args, "mode_positional", None):
            cli_values["mode"] = args.mode_positional
        params = resolve_params(sub, file_values, cli_values)
        workers = args.workers if args.workers is not None else int(os.environ.get("SLELAB_WORKERS", "1"))
        if workers < 1:
            raise ConfigurationError("workers must be >= 1")
    except (ConfigurationError, OSError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    master_seed = args.seed if args.seed is not None else int(file_seed or 0)
    try:
        records = run_jobs(sub.name, params, master_seed, workers)
    except (ParameterError, ConfigurationError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SlelabError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_FAILURE_BUDGET
    for r in records:
        validate_record(sub, r)
    good = [r for r in records if not r.get("failed")]
    failures = len(records) - len(good)
    summary = sub.summary(good)
    summary["failures"] = failures
    write_outputs(Path(args.out), sub.name, params, master_seed, records, summary)
    if failures > FAILURE_BUDGET * len(records):
        print(f"{failures} of {len(records)} jobs failed", file=sys.stderr)
        return EXIT_FAILURE_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
