"""Static inhomogeneous broadening of detunings and Rabi frequencies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .hamiltonians import mhz

MAX_MEMBERS = 1_000_000
PRUNE_WEIGHT = 1e-12


@dataclass(frozen=True)
class BroadeningSpec:
    sigma_detuning_a: float = 0.0
    sigma_detuning_b: float = mhz(3.0)
    sigma_rabi_rel: float = 0.2
    n_nodes: int = 21
    scheme: str = "gauss-hermite"
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_detuning_a", "sigma_detuning_b", "sigma_rabi_rel"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValueError("n_nodes must be a positive integer")
        if self.scheme not in ("gauss-hermite", "monte-carlo"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


NONE = BroadeningSpec(0.0, 0.0, 0.0, 1)


@dataclass(frozen=True)
class EnsembleMember:
    detuning_a: float
    detuning_b: float
    rabi_scale: float
    weight: float


def _gauss_nodes(n: int):
    x, w = hermegauss(n)
    w = w / w.sum()
    return x, w


def build_ensemble(spec: BroadeningSpec) -> list[EnsembleMember]:
    """Quadrature (or seeded Monte Carlo) members of the broadening distribution.

    Only dimensions with a non-zero width are expanded, so an unbroadened
    spec always yields one member of weight 1.
    """
    sigmas = (spec.sigma_detuning_a, spec.sigma_detuning_b, spec.sigma_rabi_rel)
    active = [k for k, s in enumerate(sigmas) if s > 0]
    n = int(spec.n_nodes)
    if not active or n == 1:
        return [EnsembleMember(0.0, 0.0, 1.0, 1.0)]

    if spec.scheme == "monte-carlo":
        if n > MAX_MEMBERS:
            raise ValueError(f"ensemble of {n} members exceeds {MAX_MEMBERS}")
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        draws = rng.standard_normal((n, 3))
        w = 1.0 / n
        return [
            EnsembleMember(
                float(sigmas[0] * z[0]),
                float(sigmas[1] * z[1]),
                float(1.0 + sigmas[2] * z[2]),
                w,
            )
            for z in draws
        ]

    if n ** len(active) > MAX_MEMBERS:
        raise ValueError(f"tensor grid of {n}^{len(active)} members exceeds {MAX_MEMBERS}")
    x, w = _gauss_nodes(n)
    grids = np.meshgrid(*([x] * len(active)), indexing="ij")
    wgrids = np.meshgrid(*([w] * len(active)), indexing="ij")
    coords = np.zeros((3, grids[0].size))
    for dim_i, k in enumerate(active):
        coords[k] = grids[dim_i].ravel()
    weights = np.prod([g.ravel() for g in wgrids], axis=0)
    keep = weights > PRUNE_WEIGHT
    coords, weights = coords[:, keep], weights[keep]
    weights = weights / weights.sum()
    return [
        EnsembleMember(
            float(sigmas[0] * coords[0, i]),
            float(sigmas[1] * coords[1, i]),
            float(1.0 + sigmas[2] * coords[2, i]),
            float(weights[i]),
        )
        for i in range(len(weights))
    ]


def member_arrays(members):
    """(detuning_a, detuning_b, rabi_scale, weight) as arrays."""
    arr = np.array([(m.detuning_a, m.detuning_b, m.rabi_scale, m.weight) for m in members], dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def ensemble_average(members, series) -> np.ndarray:
    """Weighted sum of per-member series, accumulated in member order.

    ``series`` is either a callable evaluated per member or a sequence of
    arrays aligned with ``members``.
    """
    members = list(members)
    if callable(series):
        series = [series(m) for m in members]
    series = [np.asarray(s) for s in series]
    if len(series) != len(members):
        raise ValueError("one series per member required")
    shape = series[0].shape
    for s in series:
        if s.shape != shape:
            raise ValueError(f"grid mismatch: {s.shape} vs {shape}")
    acc = np.zeros(shape, dtype=np.result_type(*series, float))
    for m, s in zip(members, series):
        acc = acc + m.weight * s
    return acc


def write_members_csv(members, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detuning_a", "detuning_b", "rabi_scale", "weight"])
        for m in members:
            w.writerow([f"{v:.17g}" for v in (m.detuning_a, m.detuning_b, m.rabi_scale, m.weight)])
