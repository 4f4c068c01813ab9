"""JSON run configuration.

Frequencies are given in MHz (converted to rad/s), times in ns (converted
to s).  Every field is optional; absent fields take the defaults below and
``dump`` writes the complete, validated document back out.
"""

from __future__ import annotations

import copy
import json
import math
import operator
from dataclasses import dataclass

from .ensemble import BroadeningSpec
from .hamiltonians import DriveParams, ExchangeRamp, PairParams, ReadoutSpinParams, mhz
from .photocurrent import DetectorModel, TransientModel
from .propagator import KsmRates
from .readout import ClassifierParams, FlashParams, ReadoutParams

NS = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    default: object
    kind: str = "float"  # float, int, str, bool, float-or-null, float-list, int-list
    ge: float | None = None
    gt: float | None = None
    le: float | None = None
    lt: float | None = None
    choices: tuple = ()


def _f(default, **kw):
    return Field(default, "float", **kw)


SCHEMA: dict = {
    "pair": {
        "detuning_a_mhz": _f(300.0),
        "detuning_b_mhz": _f(0.0),
        "exchange_J_mhz": _f(0.0, ge=0),
    },
    "drive": {
        "rabi_mhz": _f(10.0, ge=0),
        "phase_deg": _f(0.0),
    },
    "rates": {
        "r_S": _f(1e7, ge=0),
        "r_T": _f(1e3, ge=0),
        "d": _f(1e4, ge=0),
        "G": _f(1e4, ge=0),
        "dephasing": _f(0.0, ge=0),
    },
    "broadening": {
        "sigma_detuning_a_mhz": _f(0.0, ge=0),
        "sigma_detuning_b_mhz": _f(3.0, ge=0),
        "sigma_rabi_rel": _f(0.2, ge=0),
        "n_nodes": Field(21, "int", ge=1),
        "scheme": Field("gauss-hermite", "str", choices=("gauss-hermite", "monte-carlo")),
        "seed": Field(0, "int", ge=0, lt=2**64),
    },
    "transient": {
        "coeff_singlet": _f(1e-10),
        "coeff_triplet": _f(1e-10),
        "tau_singlet_relax_ns": _f(10_000.0, gt=0),
        "tau_triplet_relax_ns": _f(39_700.0, gt=0),
        "baseline": _f(1e-6),
    },
    "detector": {
        "rise_time_ns": _f(1000.0, ge=0),
        "sample_jitter_ns": _f(0.0, ge=0),
    },
    "readout": {
        "omega_P_mhz": _f(9700.0, gt=0),
        "omega_db_mhz": _f(9730.0, gt=0),
        "omega_n_mhz": _f(60.0, ge=0),
        "hyperfine_A_mhz": _f(117.53, ge=0),
        "j_max_mhz": _f(20000.0, ge=0),
        "tau_slope_ns": _f(5000.0, gt=0),
        "ramp_shape": Field("raised-cosine", "str", choices=("raised-cosine", "linear")),
        "hold_ns": _f(1000.0, ge=0),
        "r_S": _f(5e6, ge=0),
        "r_T": _f(0.0, ge=0),
        "dephasing": _f(0.0, ge=0),
        "tau_life_ns": _f(1000.0, gt=0),
        "temperature_k": _f(0.02, gt=0),
        "decay_mode": Field("stochastic", "str", choices=("stochastic", "deterministic")),
        "flash": {
            "photon_energy_ev": _f(2.0, gt=0),
            "power_w": _f(3.2e-9, ge=0),
            "duration_ns": _f(1.0, ge=0),
            "quantum_efficiency": _f(1.0, ge=0, le=1),
        },
        "classifier": {
            "k_slow": _f(1e4, ge=0),
            "k_trap": _f(2e6, gt=0),
            "tau_decay_ns": _f(2000.0, gt=0),
            "threshold": Field(None, "float-or-null", gt=0, lt=1),
        },
    },
    "run": {
        "seed": Field(0, "int", ge=0, lt=2**64),
        "output_dir": Field("sdrsim-out", "str"),
        "initial_state": Field("steady", "str", choices=("steady", "tminus")),
        "coherent_pulses": Field(True, "bool"),
        "rabi": {
            "stop_ns": _f(400.0, gt=0),
            "step_ns": _f(2.0, gt=0),
        },
        "echo": {
            "tau_180_ns": _f(100.0, gt=0),
            "stop_total_ns": _f(300.0, gt=0),
            "step_ns": _f(1.0, gt=0),
        },
        "transient": {
            "tau_180_ns": _f(100.0, gt=0),
            "total_ns": _f(200.0, gt=0),
            "horizon_ns": _f(60_000.0, gt=0),
            "n_points": Field(2001, "int", ge=2),
            "sample_ns": _f(19_500.0, ge=0),
        },
        "levels": {
            "j_stop_mhz": _f(1000.0, gt=0),
            "n_points": Field(401, "int", ge=2),
        },
        "readout": {
            "bit": Field("up", "str", choices=("up", "down")),
            "horizon_ns": _f(4000.0, gt=0),
        },
        "fidelity": {
            "n_trials": Field(10_000, "int", ge=1),
            "n_pairs": Field([5, 10, 20, 50], "int-list", ge=0),
            "tau_slope_ns": Field([5000.0], "float-list", gt=0),
        },
    },
}

MAX_GRID = 1_000_000


_BOUNDS = (("ge", "≥", operator.ge), ("gt", ">", operator.gt), ("le", "≤", operator.le), ("lt", "<", operator.lt))


def _check_number(path: str, name: str, v, f: Field):
    for attr, sym, op in _BOUNDS:
        bound = getattr(f, attr)
        if bound is not None and not op(v, bound):
            raise ConfigError(f"{path}: value {v!r} violates {name} {sym} {bound:g}")


def _scalar(path: str, name: str, v, kind: str, f: Field):
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{path}: must be finite")
    elif kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{path}: expected an integer, got {v!r}")
    _check_number(path, name, v, f)
    return v


def _coerce(path: str, name: str, v, f: Field):
    if f.kind in ("float", "int"):
        return _scalar(path, name, v, f.kind, f)
    if f.kind == "float-or-null":
        return None if v is None else _scalar(path, name, v, "float", f)
    if f.kind == "bool":
        if not isinstance(v, bool):
            raise ConfigError(f"{path}: expected true or false, got {v!r}")
        return v
    if f.kind == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{path}: expected a string, got {v!r}")
        if f.choices and v not in f.choices:
            raise ConfigError(f"{path}: {v!r} not one of {', '.join(f.choices)}")
        return v
    if f.kind in ("float-list", "int-list"):
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{path}: expected a non-empty list")
        kind = f.kind.split("-")[0]
        return [_scalar(f"{path}[{i}]", name, x, kind, f) for i, x in enumerate(v)]
    raise AssertionError(f.kind)


def _fill(schema: dict, doc, prefix: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        where = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(f"unknown key {where}")
    out = {}
    for key, spec in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(spec, dict):
            out[key] = _fill(spec, doc.get(key, {}), path)
        else:
            out[key] = _coerce(path, key, doc[key], spec) if key in doc else copy.deepcopy(spec.default)
    return out


def _built(path: str, factory, *args, **kw):
    try:
        return factory(*args, **kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class Config:
    """Validated configuration; ``values`` holds config units."""

    values: dict

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values

    def __hash__(self):
        return hash(dump(self))

    # -- model objects in SI / rad/s --

    def pair(self) -> PairParams:
        v = self.values["pair"]
        return _built("pair", PairParams, mhz(v["detuning_a_mhz"]), mhz(v["detuning_b_mhz"]), mhz(v["exchange_J_mhz"]))

    def drive(self) -> DriveParams:
        v = self.values["drive"]
        return _built("drive", DriveParams, mhz(v["rabi_mhz"]), v["phase_deg"])

    def rates(self) -> KsmRates:
        v = self.values["rates"]
        return _built("rates", KsmRates, v["r_S"], v["r_T"], v["d"], v["G"], v["dephasing"])

    def broadening(self) -> BroadeningSpec:
        v = self.values["broadening"]
        return _built("broadening", BroadeningSpec, mhz(v["sigma_detuning_a_mhz"]), mhz(v["sigma_detuning_b_mhz"]),
                      v["sigma_rabi_rel"], v["n_nodes"], v["scheme"], v["seed"])

    def transient(self) -> TransientModel:
        v = self.values["transient"]
        return _built("transient", TransientModel, v["coeff_singlet"], v["coeff_triplet"],
                      v["tau_singlet_relax_ns"] * NS, v["tau_triplet_relax_ns"] * NS, v["baseline"])

    def detector(self) -> DetectorModel:
        v = self.values["detector"]
        return _built("detector", DetectorModel, v["rise_time_ns"] * NS, v["sample_jitter_ns"] * NS)

    def readout(self, tau_slope_ns: float | None = None) -> ReadoutParams:
        v = self.values["readout"]
        fl, cl = v["flash"], v["classifier"]
        spins = _built("readout", ReadoutSpinParams, mhz(v["omega_P_mhz"]), mhz(v["omega_db_mhz"]),
                       mhz(v["omega_n_mhz"]), mhz(v["hyperfine_A_mhz"]))
        slope = v["tau_slope_ns"] if tau_slope_ns is None else tau_slope_ns
        ramp = _built("readout", ExchangeRamp, mhz(v["j_max_mhz"]), slope * NS, v["ramp_shape"], v["hold_ns"] * NS)
        rates = _built("readout", KsmRates, v["r_S"], v["r_T"], 0.0, 0.0, v["dephasing"])
        flash = _built("readout.flash", FlashParams, fl["photon_energy_ev"], fl["power_w"], fl["duration_ns"] * NS,
                       fl["quantum_efficiency"])
        clf = _built("readout.classifier", ClassifierParams, cl["k_slow"], cl["k_trap"], cl["tau_decay_ns"] * NS,
                     cl["threshold"])
        return _built("readout", ReadoutParams, spins, ramp, rates, v["tau_life_ns"] * NS, v["temperature_k"],
                      flash, clf, v["decay_mode"])

    @property
    def run(self) -> dict:
        return self.values["run"]


def _grid_count(path: str, stop: float, step: float, start: float = 0.0) -> None:
    if stop <= start:
        raise ConfigError(f"{path}: stop must exceed start ({start:g} ns)")
    if (stop - start) / step > MAX_GRID:
        raise ConfigError(f"{path}: grid exceeds {MAX_GRID} points")


def _cross_checks(cfg: Config) -> None:
    cfg.pair(), cfg.drive(), cfg.rates(), cfg.broadening(), cfg.transient(), cfg.detector(), cfg.readout()
    run = cfg.run
    _grid_count("run.rabi", run["rabi"]["stop_ns"], run["rabi"]["step_ns"])
    e = run["echo"]
    _grid_count("run.echo", e["stop_total_ns"], e["step_ns"], e["tau_180_ns"])
    t = run["transient"]
    if t["total_ns"] < t["tau_180_ns"]:
        raise ConfigError("run.transient.total_ns: must be ≥ tau_180_ns")
    if t["sample_ns"] > t["horizon_ns"]:
        raise ConfigError("run.transient.sample_ns: must be ≤ horizon_ns")
    for k, slope in enumerate(run["fidelity"]["tau_slope_ns"]):
        cfg.readout(slope)
    if run["readout"]["horizon_ns"] * NS < cfg.readout().classifier.tau_decay:
        raise ConfigError("run.readout.horizon_ns: must be ≥ readout.classifier.tau_decay_ns")


def from_dict(doc) -> Config:
    cfg = Config(_fill(SCHEMA, doc, ""))
    _cross_checks(cfg)
    return cfg


def parse_config(text: str) -> Config:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    return from_dict(doc)


def dump(cfg: Config) -> str:
    """Complete config as JSON; floats keep their exact round-trip repr."""
    return json.dumps(cfg.values, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def default_config() -> Config:
    return from_dict({})
