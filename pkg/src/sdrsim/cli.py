"""Command line entry point: ``sdrsim <subcommand> [--config FILE]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Data
files are deterministic for a given config and seed; wall-clock times go
to ``timestamps.json`` so ``manifest.json`` is reproducible as well.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import photocurrent as pc
from .config import NS, Config, ConfigError, dump, from_dict, parse_config
from .hamiltonians import instantaneous_spectrum, mhz
from .propagator import OFF, SelfCheckError, SteadyStateError, StepControlError
from .readout import (
    ReadoutError,
    classify_readout,
    flash_decay,
    photon_budget,
    prepare,
    readout_fidelity,
    trial_rng,
)
from .sequences import PulseSegment, PulseSequence, echo_scan, phase_reversal, rabi_scan, run_sequence
from .spin import SpinAlgebraError

OUTPUT_ENV = "SDRSIM_OUTPUT_DIR"
SUBCOMMANDS = ("rabi", "echo-scan", "transient", "levels", "readout", "fidelity", "selfcheck")
NUMERICAL_ERRORS = (StepControlError, SelfCheckError, SteadyStateError, ReadoutError, SpinAlgebraError,
                    np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


class NumericalFailure(RuntimeError):
    pass


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Outputs:
    """Tracks files written in one run so a failure can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        self.created_root = not root.exists()

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


# -- experiments --------------------------------------------------------------

def _pulse_rates(cfg: Config):
    return OFF if cfg.run["coherent_pulses"] else cfg.rates()


def run_rabi(cfg: Config, out: Outputs, seed: int) -> None:
    r = cfg.run["rabi"]
    grid = np.arange(1, int(round(r["stop_ns"] / r["step_ns"])) + 1) * r["step_ns"] * NS
    grid = np.concatenate([[0.0], grid])
    scan = rabi_scan(grid, cfg.pair(), _pulse_rates(cfg), cfg.broadening(), cfg.drive(),
                     rho0=cfg.run["initial_state"], init_rates=cfg.rates(), probe_rates=cfg.rates())
    scan.write_csv(out.path("rabi.csv"))


def run_echo(cfg: Config, out: Outputs, seed: int) -> None:
    e = cfg.run["echo"]
    n = int(round((e["stop_total_ns"] - e["tau_180_ns"]) / e["step_ns"]))
    grid = np.arange(n + 1) * e["step_ns"] * NS
    scan = echo_scan(e["tau_180_ns"] * NS, grid, cfg.pair(), _pulse_rates(cfg), cfg.broadening(), cfg.drive(),
                     rho0=cfg.run["initial_state"], init_rates=cfg.rates(), probe_rates=cfg.rates())
    scan.write_csv(out.path("echo.csv"))


def run_transient(cfg: Config, out: Outputs, seed: int) -> None:
    t = cfg.run["transient"]
    drive = cfg.drive()
    total, tau = t["total_ns"] * NS, t["tau_180_ns"] * NS
    runs = {
        "unchanged": PulseSequence((PulseSegment(total, drive.rabi_omega1, drive.phase_deg),)),
        "reversed": phase_reversal(tau, total - tau, drive.rabi_omega1, drive.phase_deg),
    }
    model, det = cfg.transient(), cfg.detector()
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = []
    for name, seq in runs.items():
        traj = run_sequence(cfg.run["initial_state"], seq, cfg.pair(), _pulse_rates(cfg), cfg.broadening(),
                            init_rates=cfg.rates(), probe_rates=cfg.rates())
        o = traj.observables
        dn_s, dn_t = pc.population_changes(o["pop_S"], o["pop_T+"] + o["pop_T0"] + o["pop_T-"])
        trace = pc.observed_transient(dn_s, dn_t, model, det, t["horizon_ns"] * NS, t["n_points"])
        trace.write_csv(out.path(f"transient_{name}.csv"))
        sample = pc.sample_jittered(trace, t["sample_ns"] * NS, det, rng)
        rows.append((name, dn_s, dn_t, (sample - model.baseline) * 1e12))
    write_rows(out.path("transient_summary.csv"), ["run", "dn_singlet", "dn_triplet", "delta_current_pA"], rows)


def run_levels(cfg: Config, out: Outputs, seed: int) -> None:
    lv = cfg.run["levels"]
    grid = np.linspace(0.0, mhz(lv["j_stop_mhz"]), lv["n_points"])
    diagram = instantaneous_spectrum(cfg.readout().spins, grid)
    diagram.write_csv(out.path("levels.csv"))


def run_readout(cfg: Config, out: Outputs, seed: int) -> None:
    p = cfg.readout()
    bit = cfg.run["readout"]["bit"]
    prep = prepare(p, bit)
    rng = trial_rng(seed, bit, 0)
    charged = bool(rng.random() < prep.p_charged)
    n = photon_budget(p.flash)
    trace = flash_decay(charged, n, p.classifier, cfg.run["readout"]["horizon_ns"] * NS, p.decay_mode, rng)
    result = classify_readout(trace, p.classifier)
    sw = prep.sweep
    diag = {
        "nuclear_bit": bit,
        "final_singlet_content": sw.final_singlet_content,
        "min_gap_rad_s": sw.min_gap if np.isfinite(sw.min_gap) else None,
        "j_cross_rad_s": sw.j_cross if np.isfinite(sw.j_cross) else None,
        "sweep_rate_rad_s2": sw.sweep_rate if np.isfinite(sw.sweep_rate) else None,
        "landau_zener_diabatic": sw.landau_zener if np.isfinite(sw.landau_zener) else None,
        "diabatic_survival": sw.diabatic_survival,
        "sweep_steps": sw.n_steps,
        "p_charged": prep.p_charged,
        "charged": charged,
        "n_pairs": n,
        "threshold": p.classifier.threshold,
        "bit": result,
    }
    with open(out.path("readout.json"), "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_rows(out.path("readout_trace.csv"), ["time_ns", "conductivity_rel"],
               zip((trace.times / NS).tolist(), trace.level.tolist()))


def run_fidelity(cfg: Config, out: Outputs, seed: int) -> None:
    f = cfg.run["fidelity"]
    rows = []
    for slope in f["tau_slope_ns"]:
        p = cfg.readout(slope)
        preps = {bit: prepare(p, bit) for bit in ("up", "down")}
        for n in f["n_pairs"]:
            r = readout_fidelity(p, f["n_trials"], seed, n_pairs=n, preps=preps)
            rows.append((float(slope), n, f["n_trials"], r.p_charged_up, r.p_charged_down,
                         r.p_read1_given_up, r.p_read1_given_down, r.contrast, r.fidelity))
    write_rows(out.path("fidelity.csv"),
               ["tau_slope_ns", "n_pairs", "n_trials", "p_charged_up", "p_charged_down",
                "p_read1_given_up", "p_read1_given_down", "contrast", "fidelity"], rows)


def run_selfcheck(cfg: Config, out: Outputs, seed: int) -> None:
    from .selfcheck import run_all

    results = run_all()
    write_rows(out.path("selfcheck.csv"), ["suite", "passed", "worst", "tolerance"],
               [(r.name, int(r.passed), float(r.worst), float(r.tolerance)) for r in results])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  worst={r.worst:.3e}  tol={r.tolerance:.1e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalFailure(f"invariant suites failed: {', '.join(failed)}")


RUNNERS = {
    "rabi": run_rabi,
    "echo-scan": run_echo,
    "transient": run_transient,
    "levels": run_levels,
    "readout": run_readout,
    "fidelity": run_fidelity,
    "selfcheck": run_selfcheck,
}


# -- plumbing -----------------------------------------------------------------

def _versions() -> dict:
    try:
        own = metadata.version("sdrsim")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"sdrsim": own, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_manifest(out: Outputs, cfg: Config, command: str, seed: int, started: float) -> None:
    data_files = {p.name: _sha256(p.read_bytes()) for p in out.files}
    manifest = {
        "command": command,
        "seed": seed,
        "inputs_sha256": _sha256(dump(cfg).encode()),
        "config": cfg.values,
        "versions": _versions(),
        "files": data_files,
    }
    with open(out.path("manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    stamps = {"started_unix": started, "finished_unix": time.time()}
    with open(out.path("timestamps.json"), "w") as fh:
        json.dump(stamps, fh, indent=2)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdrsim", description="Spin-dependent recombination simulator")
    ap.add_argument("command", nargs="?", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults are used for absent fields)")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and run.output_dir)")
    ap.add_argument("--print-config", action="store_true", help="print the validated config and exit")
    return ap


def load_config(args) -> Config:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    else:
        cfg = from_dict({})
    if args.seed is not None:
        values = json.loads(json.dumps(cfg.values))
        values["run"]["seed"] = args.seed
        cfg = from_dict(values)
    return cfg


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(dump(cfg))
        return 0
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("sdrsim: error: a subcommand is required", file=sys.stderr)
        return 2

    root = Path(args.out or os.environ.get(OUTPUT_ENV) or cfg.run["output_dir"])
    out = Outputs(root)
    seed = cfg.run["seed"]
    started = time.time()
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            RUNNERS[args.command](cfg, out, seed)
        _write_manifest(out, cfg, args.command, seed, started)
    except ConfigError as exc:
        out.discard()
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, *NUMERICAL_ERRORS) as exc:
        out.discard()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BaseException:
        out.discard()
        raise
    print(f"wrote {len(out.files)} files to {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
