"""Run configuration, ensembles and their CSV reports."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

from scipy.stats import spearmanr

from .generators import SnowflakeSpec, perturbed_graph_balls, plane_lattice_balls, snowflake_balls
from .jones import flatness
from .measure import measure_from_balls
from .reifenberg import (InvariantViolation, ScaleLadder, key_estimates_report, run_construction,
                         verify_bound)

FAMILIES = ("veryflat", "flat", "graph", "lattice")


@dataclass
class RunConfig:
    """Parameters shared by ``cover``, ``verify`` and ``ensemble``."""

    q: float = 2.0
    rho: float = 0.25
    tau: float | None = None
    scale: int = 5
    generations: list = field(default_factory=lambda: [4, 5, 6, 7])
    amplitudes: list = field(default_factory=lambda: [0.1, 0.2, 0.3])
    frequency: int = 3
    mesh_edge: float | None = None
    mode: str = "sup"
    M0: float | None = None
    construct: bool = False
    seed: int = 0
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.q >= 2:
            raise ValueError("q must be >= 2")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.scale < 1:
            raise ValueError("scale index must be >= 1")
        if any(g < 0 for g in self.generations):
            raise ValueError("generations must be non-negative")
        if self.mesh_edge is not None and not self.mesh_edge > 0:
            raise ValueError("mesh edge must be positive")
        if self.mode not in ("sup", "avg"):
            raise ValueError("mode must be 'sup' or 'avg'")
        if self.M0 is not None and not self.M0 > 0:
            raise ValueError("M0 must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


ROW_FIELDS = ["spec_id", "family", "param", "generations", "q", "atoms", "mu_B1", "J_sup", "J_avg",
              "ratio_sup", "ratio_avg", "excess_mass", "area_TA", "max_comparison", "M",
              "claim1_pass", "comparison_pass", "failure"]


def spec_id(family: str, param: float, gens: int, q: float) -> str:
    return f"{family}_p{param:g}_g{gens:02d}_q{q:g}"


def family_measure(family: str, param: float, gens: int, cfg: RunConfig):
    if family == "veryflat":
        bc = snowflake_balls(SnowflakeSpec.harmonic(param, gens), cfg.scale, cfg.rho)
        k = 1
    elif family == "flat":
        bc = snowflake_balls(SnowflakeSpec.constant(param, gens), cfg.scale, cfg.rho)
        k = 1
    elif family == "graph":
        bc = perturbed_graph_balls(param, cfg.frequency, cfg.scale, cfg.rho)
        k = 1
    elif family == "lattice":
        k = max(1, int(param))
        bc = plane_lattice_balls(k, k + 1, cfg.scale, cfg.rho)
    else:
        raise ValueError(f"unknown family {family!r}")
    return measure_from_balls(bc, k, description=spec_id(family, param, gens, cfg.q))


def run_single(family: str, param: float, gens: int, cfg: RunConfig) -> dict:
    """One ensemble row; invariant failures are captured in ``failure``."""
    row = {"spec_id": spec_id(family, param, gens, cfg.q), "family": family, "param": param,
           "generations": gens, "q": cfg.q}
    mu = family_measure(family, param, gens, cfg)
    row["atoms"] = len(mu)
    ladder = ScaleLadder.for_measure(mu, cfg.rho, cfg.tau)
    try:
        rep = flatness(mu, cfg.q, cfg.rho, finest=ladder.A)
        vs = verify_bound(mu, cfg.q, ladder, "sup", report=rep)
        va = verify_bound(mu, cfg.q, ladder, "avg", report=rep)
        row.update(mu_B1=vs.mu_B1, J_sup=rep.J_sup, J_avg=rep.J_avg, ratio_sup=vs.ratio,
                   ratio_avg=va.ratio, claim1_pass=vs.claim1_pass)
        if cfg.construct:
            run = run_construction(mu, ladder, cfg.q, M0=cfg.M0, J=rep.J_sup, max_edge=cfg.mesh_edge)
            ker = key_estimates_report(run.hierarchy, run.surfaces, mu, beta_sums=False)
            row.update(excess_mass=run.hierarchy.excess_mass_total, area_TA=ker["area_TA"],
                       max_comparison=ker["comparison_worst"], M=run.M,
                       comparison_pass=ker["comparison_pass"])
        row["failure"] = ""
    except InvariantViolation as exc:
        row["failure"] = exc.identifier
    return row


def worker_count(jobs: int) -> int:
    env = os.environ.get("REIFENBERG_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, jobs))


def run_ensemble(family: str, params, gens, cfg: RunConfig, qs=None) -> list:
    """Rows for the grid ``params x gens x qs``, sorted by spec id."""
    qs = [cfg.q] if qs is None else list(qs)
    jobs = []
    for q in qs:
        c = RunConfig.from_dict(dict(cfg.to_dict(), q=q))
        jobs += [(family, p, g, c) for p in params for g in gens]
    with ThreadPoolExecutor(max_workers=worker_count(len(jobs))) as pool:
        rows = list(pool.map(lambda j: run_single(*j), jobs))
    return sorted(rows, key=lambda r: r["spec_id"])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_report_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in ROW_FIELDS])


def read_report_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties (nan if constant)."""
    return float(spearmanr(x, y).statistic)
