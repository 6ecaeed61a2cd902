"""Manifest-driven experiment runner and command line front end.

A run manifest is a single JSON document:

    {
      "format_version": 1,
      "experiment": "demo",
      "seed": 7,
      "output_dir": "artifacts/demo",
      "jobs": [
        {"id": "tail-small", "module": "walks", "operation": "tail",
         "replicas": 20000, "params": {"n": 1000, "b": 3.141592653589793}}
      ],
      "claims": [
        {"id": "tail-positive", "anchor": "decay exponent is positive",
         "kind": "trend", "jobs": ["tail-small"], "field": "ldp_value",
         "direction": "nondecreasing", "floor": 0.0}
      ]
    }

Unknown keys anywhere in the document are errors, so manifests double as
regression fixtures.  Every job's parameters are validated against the
operation's preconditions before any job runs.  Each job writes
``<output_dir>/<job id>.csv``; claim verdicts land in ``report.csv``.

Seed discipline: the manifest's one root seed feeds job k through stream
child k (a job-level ``seed`` key overrides its stream), and replica r
inside job k draws from child (k, r).  Appending a job therefore never
perturbs the randomness of the jobs before it.

CSV dialect: comma separated, ``.`` decimal point, LF line endings, one
mandatory header row, floats printed with 17 significant digits so a
re-run byte-reproduces every artifact.

Claims come in two kinds.  A ``band`` claim passes iff
``|measured - target| <= tolerance`` for one job's summary field.  A
``trend`` claim collects one field across several jobs in order and
checks a direction (``increasing``/``decreasing`` strict,
``nondecreasing``/``nonincreasing`` weak), with optional strict
``floor``/``ceiling`` bounds on every value and an optional ``min_gap``
between neighbours.

Exit codes: 0 all claims pass, 1 a job or claim failed, 2 usage or
manifest errors.  The ``RANGELDP_WORKERS`` environment variable bounds
the job worker pool.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import (
    hitting_target_free,
    phi_eps,
    rw_torus_kernel_table,
    torus_gauss_kernel,
)
from .ratefn import chi_profile, rate_I, rate_curve
from .rng import RngStream
from .skeleton import (
    bridge_hit_prob,
    bridge_range_mgf,
    hole_cut_envelope,
    hole_cut_range,
    skeleton_of,
)
from .steps import make_step_distribution
from .torus import TorusConfig, wrap
from .walks import (
    estimate_hitting,
    estimate_mean_range,
    estimate_moment,
    estimate_tail,
    exact_range_distribution,
    exp_functional,
)

__all__ = [
    "ManifestError",
    "JobError",
    "MissingArtifacts",
    "RunManifest",
    "JobSpec",
    "ClaimSpec",
    "ReportRow",
    "load_manifest",
    "run_manifest",
    "read_report",
    "main",
]

FORMAT_VERSION = 1
WORKERS_ENV = "RANGELDP_WORKERS"
DEFAULT_LAW = "default-aperiodic"
REPORT_NAME = "report.csv"
REPORT_HEADER = ("claim", "anchor", "kind", "measured", "target",
                 "tolerance", "verdict")
_DIRECTIONS = ("increasing", "decreasing", "nondecreasing", "nonincreasing")


class ManifestError(ValueError):
    """Manifest failed schema or precondition checks; `where` names the spot."""

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class JobError(RuntimeError):
    """A validated job raised while running."""

    def __init__(self, job_id: str, cause: BaseException):
        self.job_id = job_id
        super().__init__(f"job {job_id!r} failed: {cause}")
        self.__cause__ = cause


class MissingArtifacts(FileNotFoundError):
    """Report input absent or unreadable."""


# ---------------------------------------------------------------------------
# value checking helpers


def _as_int(value, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("expected an integer")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError("expected an integer")
        value = int(value)
    if lo is not None and value < lo:
        raise ValueError(f"must be >= {lo}")
    if hi is not None and value > hi:
        raise ValueError(f"must be <= {hi}")
    return value


def _as_num(value, lo=None, lo_open=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("expected a number")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    if lo is not None and value < lo:
        raise ValueError(f"must be >= {lo}")
    if lo_open is not None and value <= lo_open:
        raise ValueError(f"must be > {lo_open}")
    if hi is not None and value > hi:
        raise ValueError(f"must be <= {hi}")
    return value


def _law_of(params: dict):
    return make_step_distribution(params.get("law", DEFAULT_LAW))


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# operation registry

# Each operation validates its params (raising ValueError on the offending
# field) and runs to a (header, rows, summary) triple; `summary` holds the
# scalar fields claims may reference.


@dataclass(frozen=True)
class _Op:
    keys: frozenset[str]
    replicas: str  # "required" or "forbidden"
    min_replicas: int
    fields: tuple[str, ...]
    validate: callable
    run: callable


_OPS: dict[tuple[str, str], _Op] = {}


def _register(module, operation, keys, replicas, min_replicas, fields,
              validate, run):
    _OPS[(module, operation)] = _Op(frozenset(keys), replicas, min_replicas,
                                    tuple(fields), validate, run)


def _v_mean_range(p):
    _as_int(p["n"], lo=3)
    _law_of(p)


def _r_mean_range(p, replicas, rng):
    dist = _law_of(p)
    n = _as_int(p["n"])
    mean, stderr = estimate_mean_range(dist, n, replicas, rng)
    ratio = mean * math.log(n) / (2 * math.pi * n)
    return (("n", "replicas", "mean", "stderr", "ratio"),
            [(n, replicas, mean, stderr, ratio)],
            {"mean": mean, "stderr": stderr, "ratio": ratio})


def _v_tail(p):
    _as_int(p["n"], lo=3)
    _as_num(p["b"], lo_open=0.0)
    _law_of(p)


def _r_tail(p, replicas, rng):
    est = estimate_tail(_law_of(p), _as_int(p["n"]), float(p["b"]),
                        replicas, rng)
    return (("n", "b", "replicas", "hits", "p_hat", "ci_lo", "ci_hi",
             "ldp_value", "zero_hits"),
            [(est.n, est.b, est.replicas, est.hits, est.p_hat, est.ci95[0],
              est.ci95[1], est.ldp_value, int(est.zero_hits))],
            {"p_hat": est.p_hat, "ldp_value": est.ldp_value,
             "hits": float(est.hits)})


def _v_hitting(p):
    n = _as_int(p["n"], lo=3)
    s = _as_num(p["s"], lo_open=0.0)
    ax = _as_int(p["ax"])
    ay = _as_int(p["ay"])
    if ax == 0 and ay == 0:
        raise ValueError("target site (ax, ay) must not be the origin")
    if s * n / math.log(n) < 1.0:
        raise ValueError("horizon s*T is shorter than one step")
    _law_of(p)


def _r_hitting(p, replicas, rng):
    n = _as_int(p["n"])
    s = float(p["s"])
    ax, ay = _as_int(p["ax"]), _as_int(p["ay"])
    est = estimate_hitting(_law_of(p), (ax, ay), s, n, replicas, rng)
    h = math.sqrt(math.log(n) / n)
    target = hitting_target_free((ax * h, ay * h), s)
    ratio = est.value / target
    return (("n", "s", "ax", "ay", "replicas", "hits", "value", "ci_lo",
             "ci_hi", "target", "ratio"),
            [(n, s, ax, ay, replicas, est.hits, est.value, est.ci95[0],
              est.ci95[1], target, ratio)],
            {"value": est.value, "target": target, "ratio": ratio})


def _v_moment(p):
    _as_int(p["n"], lo=3)
    _as_num(p["k"], lo_open=0.0, hi=1.0)
    _law_of(p)


def _r_moment(p, replicas, rng):
    n = _as_int(p["n"])
    k = float(p["k"])
    est = estimate_moment(_law_of(p), n, k, replicas, rng)
    normalized = est.estimate / (n / math.log(n)) ** k
    return (("n", "k", "replicas", "estimate", "stderr", "normalized"),
            [(n, k, replicas, est.estimate, est.stderr, normalized)],
            {"estimate": est.estimate, "stderr": est.stderr,
             "normalized": normalized})


def _v_exp_functional(p):
    _as_int(p["n"], lo=3)
    _as_num(p["c"], lo=0.0)
    _law_of(p)


def _r_exp_functional(p, replicas, rng):
    n = _as_int(p["n"])
    c = float(p["c"])
    value = exp_functional(_law_of(p), n, c, replicas, rng)
    return (("n", "c", "replicas", "value"), [(n, c, replicas, value)],
            {"value": value})


def _v_exact_range(p):
    _as_int(p["n"], lo=1, hi=8)
    _law_of(p)


def _r_exact_range(p, replicas, rng):
    n = _as_int(p["n"])
    table = exact_range_distribution(_law_of(p), n)
    rows = [(r, float(table[r])) for r in range(1, n + 2)]
    mean = float(np.arange(len(table)) @ table)
    return (("r", "probability"), rows, {"mean": mean})


def _v_chi(p):
    _as_num(p["u"], lo_open=0.0)


def _r_chi(p, replicas, rng):
    u = float(p["u"])
    val, prof = chi_profile(u)
    summary = {
        "chi": val,
        "area": prof.area,
        "u_chi": u * val,
        "gap_scaled": val / (1.0 - u) if u < 1.0 else math.nan,
        "feasible": 1.0 if prof.area <= u + 1e-6 else 0.0,
    }
    return (("u", "chi", "area", "mass", "r_max"),
            [(u, val, prof.area, prof.mass, prof.r_max)], summary)


def _v_rate_point(p):
    _as_num(p["b"], lo_open=0.0)


def _r_rate_point(p, replicas, rng):
    b = float(p["b"])
    value = rate_I(b)
    return (("b", "rate"), [(b, value)], {"rate": value})


def _v_rate_curve(p):
    points = _as_int(p["points"], lo=2)
    b_min = _as_num(p.get("b_min", 0.5), lo_open=0.0)
    b_max = _as_num(p.get("b_max", 8.0), lo_open=0.0)
    if b_max <= b_min:
        raise ValueError("b_max must exceed b_min")
    del points


def _r_rate_curve(p, replicas, rng):
    points = _as_int(p["points"])
    b_min = float(p.get("b_min", 0.5))
    b_max = float(p.get("b_max", 8.0))
    curve = rate_curve(np.linspace(b_min, b_max, points))
    return (("b", "rate"), curve.csv_rows(),
            {"max_rate": float(curve.I[0]), "tail_rate": float(curve.I[-1])})


def _v_scales(p):
    n = _as_int(p["walk_length"], lo=3)
    side = _as_num(p["torus_side"], lo_open=0.0)
    TorusConfig.from_walk_length(side, n)  # raises BadScales when too coarse


def _v_kernel_table(p):
    _v_scales(p)
    _as_int(p["steps"], lo=0)
    _law_of(p)


def _r_kernel_table(p, replicas, rng):
    cfg = TorusConfig.from_walk_length(float(p["torus_side"]),
                                       _as_int(p["walk_length"]))
    table = rw_torus_kernel_table(_as_int(p["steps"]), _law_of(p), cfg)
    rows = [(x, y, float(table[x, y]))
            for x in range(cfg.L) for y in range(cfg.L)]
    return (("x", "y", "probability"), rows,
            {"total_mass_error": abs(float(table.sum()) - 1.0),
             "max_prob": float(table.max())})


def _v_identities(p):
    _v_scales(p)
    _as_int(p["steps"], lo=1)
    _as_num(p["time"], lo_open=0.0)
    _law_of(p)


def _r_identities(p, replicas, rng):
    dist = _law_of(p)
    cfg = TorusConfig.from_walk_length(float(p["torus_side"]),
                                       _as_int(p["walk_length"]))
    k = _as_int(p["steps"])
    t = float(p["time"])
    tab = rw_torus_kernel_table(k, dist, cfg)
    row_sum = abs(float(tab.sum()) - 1.0)
    twice = rw_torus_kernel_table(2 * k, dist, cfg)
    conv = np.fft.ifft2(np.fft.fft2(tab) ** 2).real
    chapman = float(np.max(np.abs(conv - twice)))
    axis = wrap(np.arange(cfg.L, dtype=np.float64) * cfg.h, cfg)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    density = torus_gauss_kernel(t, pts, cfg)
    gauss = abs(float(density.sum()) * cfg.h**2 - 1.0)
    ys = np.array([[0.3, 0.1], [0.55, -0.3], [-0.4, 0.45]])
    zs = np.array([[-0.2, 0.25], [0.1, 0.4], [0.3, -0.35]])
    sym = float(np.max(np.abs(phi_eps(ys, zs, 1.0, cfg)
                              - phi_eps(zs, ys, 1.0, cfg))))
    names = ("row_sum", "chapman_kolmogorov", "gauss_normalization",
             "phi_symmetry")
    vals = (row_sum, chapman, gauss, sym)
    return (("identity", "max_error"), list(zip(names, vals)),
            dict(zip(names, vals)))


def _v_hole_cut(p):
    n = _as_int(p["n"], lo=3)
    side = _as_num(p["torus_side"], lo_open=0.0)
    eps = _as_num(p["eps"], lo_open=0.0)
    cfg = TorusConfig.from_walk_length(side, n)
    if eps > cfg.require_tau():
        raise ValueError("eps exceeds tau, no blocks would remain")
    _law_of(p)


def _r_hole_cut(p, replicas, rng):
    n = _as_int(p["n"])
    eps = float(p["eps"])
    law = _law_of(p)
    cfg = TorusConfig.from_walk_length(float(p["torus_side"]), n)
    env = hole_cut_envelope(cfg, eps)
    deficits = np.empty(replicas)
    for r in range(replicas):
        _, traj = skeleton_of(law, cfg, eps, rng.child(r))
        deficits[r] = hole_cut_range(traj, eps, cfg).deficit
    mean = float(deficits.mean())
    se = float(deficits.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 \
        else 0.0
    return (("n", "eps", "replicas", "deficit", "deficit_se", "max_deficit",
             "envelope"),
            [(n, eps, replicas, mean, se, float(deficits.max()), env)],
            {"deficit": mean, "envelope": env,
             "within_envelope": 1.0 if deficits.max() <= env else 0.0})


def _v_bridge_hit(p):
    _v_scales(p)
    _as_num(p["eps"], lo_open=0.0)
    for key in ("yx", "yy", "zx", "zy"):
        _as_int(p[key])
    if p["yx"] == 0 and p["yy"] == 0:
        raise ValueError("bridge start must avoid the origin")
    if p["zx"] == 0 and p["zy"] == 0:
        raise ValueError("bridge end must avoid the origin")
    _law_of(p)


def _r_bridge_hit(p, replicas, rng):
    cfg = TorusConfig.from_walk_length(float(p["torus_side"]),
                                       _as_int(p["walk_length"]))
    eps = float(p["eps"])
    y = (_as_int(p["yx"]), _as_int(p["yy"]))
    z = (_as_int(p["zx"]), _as_int(p["zy"]))
    est = bridge_hit_prob(_law_of(p), cfg, eps, y, z, replicas, rng)
    return (("eps", "replicas", "yx", "yy", "zx", "zy", "estimate",
             "ci_lo", "ci_hi"),
            [(eps, replicas, y[0], y[1], z[0], z[1], est.estimate,
              est.ci95[0], est.ci95[1])],
            {"estimate": est.estimate})


def _v_bridge_mgf(p):
    _v_scales(p)
    _as_num(p["eps"], lo_open=0.0)
    _as_num(p["theta"], lo_open=0.0, hi=2.0)
    _as_num(p["xx"])
    _as_num(p["xy"])
    _law_of(p)


def _r_bridge_mgf(p, replicas, rng):
    cfg = TorusConfig.from_walk_length(float(p["torus_side"]),
                                       _as_int(p["walk_length"]))
    est = bridge_range_mgf(_law_of(p), cfg, float(p["eps"]),
                           (float(p["xx"]), float(p["xy"])),
                           float(p["theta"]), replicas, rng)
    return (("walk_length", "eps", "theta", "replicas", "estimate", "stderr"),
            [(_as_int(p["walk_length"]), est.eps, est.theta, est.replicas,
              est.estimate, est.stderr)],
            {"estimate": est.estimate, "stderr": est.stderr})


_register("walks", "mean-range", {"n", "law"}, "required", 2,
          ("mean", "stderr", "ratio"), _v_mean_range, _r_mean_range)
_register("walks", "tail", {"n", "b", "law"}, "required", 1,
          ("p_hat", "ldp_value", "hits"), _v_tail, _r_tail)
_register("walks", "hitting", {"n", "s", "ax", "ay", "law"}, "required", 1,
          ("value", "target", "ratio"), _v_hitting, _r_hitting)
_register("walks", "moment", {"n", "k", "law"}, "required", 2,
          ("estimate", "stderr", "normalized"), _v_moment, _r_moment)
_register("walks", "exp-functional", {"n", "c", "law"}, "required", 1,
          ("value",), _v_exp_functional, _r_exp_functional)
_register("walks", "exact-range", {"n", "law"}, "forbidden", 0,
          ("mean",), _v_exact_range, _r_exact_range)
_register("ratefn", "chi", {"u"}, "forbidden", 0,
          ("chi", "area", "u_chi", "gap_scaled", "feasible"), _v_chi, _r_chi)
_register("ratefn", "rate-point", {"b"}, "forbidden", 0,
          ("rate",), _v_rate_point, _r_rate_point)
_register("ratefn", "rate-curve", {"points", "b_min", "b_max"}, "forbidden",
          0, ("max_rate", "tail_rate"), _v_rate_curve, _r_rate_curve)
_register("kernels", "kernel-table", {"steps", "torus_side", "walk_length",
                                      "law"}, "forbidden", 0,
          ("total_mass_error", "max_prob"), _v_kernel_table, _r_kernel_table)
_register("kernels", "identities", {"steps", "time", "torus_side",
                                    "walk_length", "law"}, "forbidden", 0,
          ("row_sum", "chapman_kolmogorov", "gauss_normalization",
           "phi_symmetry"), _v_identities, _r_identities)
_register("skeleton", "hole-cut", {"n", "torus_side", "eps", "law"},
          "required", 1, ("deficit", "envelope", "within_envelope"),
          _v_hole_cut, _r_hole_cut)
_register("skeleton", "bridge-hit", {"torus_side", "walk_length", "eps",
                                     "yx", "yy", "zx", "zy", "law"},
          "required", 1, ("estimate",), _v_bridge_hit, _r_bridge_hit)
_register("skeleton", "bridge-mgf", {"torus_side", "walk_length", "eps",
                                     "theta", "xx", "xy", "law"},
          "required", 2, ("estimate", "stderr"), _v_bridge_mgf, _r_bridge_mgf)


# ---------------------------------------------------------------------------
# manifest model


@dataclass(frozen=True)
class JobSpec:
    id: str
    module: str
    operation: str
    params: dict
    seed: int | None
    replicas: int | None
    index: int


@dataclass(frozen=True)
class ClaimSpec:
    id: str
    anchor: str
    kind: str
    jobs: tuple[str, ...]
    field: str
    target: float = math.nan
    tolerance: float = math.nan
    direction: str = ""
    floor: float | None = None
    ceiling: float | None = None
    min_gap: float | None = None


@dataclass(frozen=True)
class RunManifest:
    experiment: str
    seed: int
    output_dir: str
    jobs: tuple[JobSpec, ...]
    claims: tuple[ClaimSpec, ...]


@dataclass(frozen=True)
class ReportRow:
    claim: str
    anchor: str
    kind: str
    measured: str
    target: str
    tolerance: str
    verdict: str

    def csv_row(self) -> tuple:
        return (self.claim, self.anchor, self.kind, self.measured,
                self.target, self.tolerance, self.verdict)


def _require_keys(mapping, allowed, required, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ManifestError(f"unknown key {unknown[0]!r}", where)
    for key in sorted(required):
        if key not in mapping:
            raise ManifestError(f"missing key {key!r}", where)


def _ident(value, where) -> str:
    if not isinstance(value, str) or not value:
        raise ManifestError("must be a non-empty string", where)
    ok = set("abcdefghijklmnopqrstuvwxyz"
             "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")
    if not set(value) <= ok:
        raise ManifestError("only letters, digits, '.', '_', '-' allowed",
                            where)
    return value


def _parse_job(raw, index) -> JobSpec:
    where = f"jobs[{index}]"
    if not isinstance(raw, dict):
        raise ManifestError("job must be an object", where)
    _require_keys(raw, {"id", "module", "operation", "params", "seed",
                        "replicas"}, {"id", "module", "operation"}, where)
    job_id = _ident(raw["id"], f"{where}.id")
    if job_id == "report":
        raise ManifestError("job id 'report' collides with report.csv",
                            f"{where}.id")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ManifestError("params must be an object", f"{where}.params")
    seed = raw.get("seed")
    if seed is not None:
        try:
            seed = _as_int(seed, lo=0)
        except ValueError as exc:
            raise ManifestError(str(exc), f"{where}.seed") from exc
    replicas = raw.get("replicas")
    if replicas is not None:
        try:
            replicas = _as_int(replicas, lo=1)
        except ValueError as exc:
            raise ManifestError(str(exc), f"{where}.replicas") from exc
    module, operation = raw["module"], raw["operation"]
    if (module, operation) not in _OPS:
        raise ManifestError(
            f"unknown operation {module!r}/{operation!r}", where)
    return JobSpec(job_id, module, operation, params, seed, replicas, index)


def _validate_job(job: JobSpec) -> None:
    op = _OPS[(job.module, job.operation)]
    where = f"jobs[{job.index}]"
    if op.replicas == "required":
        if job.replicas is None:
            raise ManifestError("operation needs a replicas count", where)
        if job.replicas < op.min_replicas:
            raise ManifestError(f"needs replicas >= {op.min_replicas}", where)
    elif job.replicas is not None:
        raise ManifestError("operation takes no replicas", where)
    unknown = sorted(set(job.params) - op.keys)
    if unknown:
        raise ManifestError(f"unknown key {unknown[0]!r}", f"{where}.params")
    try:
        op.validate(job.params)
    except KeyError as exc:
        raise ManifestError(f"missing key {exc.args[0]!r}",
                            f"{where}.params") from exc
    except Exception as exc:
        raise ManifestError(str(exc), f"{where}.params") from exc


def _parse_claim(raw, index, jobs_by_id) -> ClaimSpec:
    where = f"claims[{index}]"
    if not isinstance(raw, dict):
        raise ManifestError("claim must be an object", where)
    kind = raw.get("kind")
    if kind == "band":
        _require_keys(raw, {"id", "anchor", "kind", "job", "field", "target",
                            "tolerance"},
                      {"id", "anchor", "kind", "job", "field", "target",
                       "tolerance"}, where)
        job_ids = (raw["job"],)
    elif kind == "trend":
        _require_keys(raw, {"id", "anchor", "kind", "jobs", "field",
                            "direction", "floor", "ceiling", "min_gap"},
                      {"id", "anchor", "kind", "jobs", "field", "direction"},
                      where)
        if not isinstance(raw["jobs"], list) or not raw["jobs"]:
            raise ManifestError("jobs must be a non-empty list",
                                f"{where}.jobs")
        job_ids = tuple(raw["jobs"])
    else:
        raise ManifestError("kind must be 'band' or 'trend'", f"{where}.kind")
    claim_id = _ident(raw["id"], f"{where}.id")
    anchor = raw.get("anchor")
    if not isinstance(anchor, str) or not anchor:
        raise ManifestError("anchor must be a non-empty string",
                            f"{where}.anchor")
    field_name = raw["field"]
    for pos, job_id in enumerate(job_ids):
        if job_id not in jobs_by_id:
            raise ManifestError(f"references unknown job {job_id!r}", where)
        op = _OPS[(jobs_by_id[job_id].module, jobs_by_id[job_id].operation)]
        if field_name not in op.fields:
            raise ManifestError(
                f"job {job_id!r} has no field {field_name!r} "
                f"(has {', '.join(op.fields)})", where)
        del pos
    try:
        if kind == "band":
            return ClaimSpec(claim_id, anchor, kind, job_ids, field_name,
                             target=_as_num(raw["target"]),
                             tolerance=_as_num(raw["tolerance"], lo=0.0))
        direction = raw["direction"]
        if direction not in _DIRECTIONS:
            raise ValueError(f"direction must be one of {_DIRECTIONS}")
        floor = raw.get("floor")
        ceiling = raw.get("ceiling")
        min_gap = raw.get("min_gap")
        return ClaimSpec(
            claim_id, anchor, kind, job_ids, field_name, direction=direction,
            floor=None if floor is None else _as_num(floor),
            ceiling=None if ceiling is None else _as_num(ceiling),
            min_gap=None if min_gap is None else _as_num(min_gap, lo=0.0))
    except ManifestError:
        raise
    except ValueError as exc:
        raise ManifestError(str(exc), where) from exc


def load_manifest(path: str | Path) -> RunManifest:
    """Parse and fully validate a manifest; raises ManifestError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(str(exc), str(path)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON: {exc.msg}",
                            f"{path}:{exc.lineno}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object", str(path))
    _require_keys(doc, {"format_version", "experiment", "seed", "output_dir",
                        "jobs", "claims"},
                  {"format_version", "experiment", "seed", "output_dir",
                   "jobs"}, str(path))
    if doc["format_version"] != FORMAT_VERSION:
        raise ManifestError(
            f"format_version {doc['format_version']!r} unsupported "
            f"(this build reads {FORMAT_VERSION})", "format_version")
    experiment = _ident(doc["experiment"], "experiment")
    try:
        seed = _as_int(doc["seed"], lo=0)
    except ValueError as exc:
        raise ManifestError(str(exc), "seed") from exc
    if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
        raise ManifestError("must be a non-empty string", "output_dir")
    if not isinstance(doc["jobs"], list):
        raise ManifestError("jobs must be a list", "jobs")
    jobs = tuple(_parse_job(raw, k) for k, raw in enumerate(doc["jobs"]))
    seen: dict[str, int] = {}
    for job in jobs:
        if job.id in seen:
            raise ManifestError(
                f"duplicate job id {job.id!r} (also jobs[{seen[job.id]}])",
                f"jobs[{job.index}].id")
        seen[job.id] = job.index
    for job in jobs:
        _validate_job(job)
    jobs_by_id = {job.id: job for job in jobs}
    raw_claims = doc.get("claims", [])
    if not isinstance(raw_claims, list):
        raise ManifestError("claims must be a list", "claims")
    claims = tuple(_parse_claim(raw, k, jobs_by_id)
                   for k, raw in enumerate(raw_claims))
    claim_ids = [c.id for c in claims]
    for cid in claim_ids:
        if claim_ids.count(cid) > 1:
            raise ManifestError(f"duplicate claim id {cid!r}", "claims")
    return RunManifest(experiment, seed, doc["output_dir"], jobs, claims)


# ---------------------------------------------------------------------------
# execution


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(cell) for cell in row) + "\n")
    os.replace(tmp, path)


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return max(1, min(n_jobs, os.cpu_count() or 1))
    try:
        workers = int(raw)
        if workers < 1:
            raise ValueError
    except ValueError:
        raise ManifestError(f"{WORKERS_ENV} must be a positive integer",
                            WORKERS_ENV) from None
    return workers


def _run_job(job: JobSpec, root: RngStream, out_dir: Path) -> dict:
    op = _OPS[(job.module, job.operation)]
    rng = RngStream(job.seed) if job.seed is not None else root.child(job.index)
    try:
        header, rows, summary = op.run(job.params, job.replicas, rng)
        _write_csv(out_dir / f"{job.id}.csv", header, rows)
    except Exception as exc:
        raise JobError(job.id, exc) from exc
    return summary


def _monotone_ok(values, direction, min_gap) -> bool:
    diffs = np.diff(values)
    if direction in ("increasing", "nondecreasing"):
        diffs = -diffs
    strict = direction in ("increasing", "decreasing")
    if np.any(diffs > 0.0) or (strict and np.any(diffs == 0.0)):
        return False
    if min_gap is not None and np.any(-diffs < min_gap):
        return False
    return True


def _evaluate_claim(claim: ClaimSpec, summaries: dict) -> ReportRow:
    values = []
    for job_id in claim.jobs:
        summary = summaries.get(job_id)
        values.append(math.nan if summary is None else summary[claim.field])
    if claim.kind == "band":
        measured = values[0]
        ok = (math.isfinite(measured)
              and abs(measured - claim.target) <= claim.tolerance)
        return ReportRow(claim.id, claim.anchor, "band", _fmt(measured),
                         _fmt(claim.target), _fmt(claim.tolerance),
                         "pass" if ok else "fail")
    arr = np.asarray(values, dtype=float)
    ok = bool(np.all(np.isfinite(arr))) and _monotone_ok(
        arr, claim.direction, claim.min_gap)
    if ok and claim.floor is not None and not np.all(arr > claim.floor):
        ok = False
    if ok and claim.ceiling is not None and not np.all(arr < claim.ceiling):
        ok = False
    spec = claim.direction
    if claim.floor is not None:
        spec += f" floor {_fmt(claim.floor)}"
    if claim.ceiling is not None:
        spec += f" ceiling {_fmt(claim.ceiling)}"
    if claim.min_gap is not None:
        spec += f" min_gap {_fmt(claim.min_gap)}"
    return ReportRow(claim.id, claim.anchor, "trend",
                     ";".join(_fmt(v) for v in values), spec, "",
                     "pass" if ok else "fail")


def run_manifest(manifest: RunManifest, output_dir: str | Path | None = None,
                 log=None) -> tuple[list[ReportRow], list[JobError]]:
    """Execute all jobs, write per-job CSVs and report.csv, return verdicts."""
    log = log or (lambda line: None)
    out = Path(output_dir) if output_dir is not None else Path(
        manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "experiment.txt"
    if marker.exists():
        prior = marker.read_text().strip()
        if prior != manifest.experiment:
            raise ManifestError(
                f"output dir already holds experiment {prior!r}",
                str(marker))
    marker.write_text(manifest.experiment + "\n")
    root = RngStream(manifest.seed)
    summaries: dict[str, dict] = {}
    errors: list[JobError] = []
    if manifest.jobs:
        with ThreadPoolExecutor(_worker_count(len(manifest.jobs))) as pool:
            futures = [(job, pool.submit(_run_job, job, root, out))
                       for job in manifest.jobs]
            for job, future in futures:
                try:
                    summaries[job.id] = future.result()
                    log(f"job {job.id}: ok")
                except JobError as exc:
                    errors.append(exc)
                    log(f"job {job.id}: FAILED ({exc.__cause__})")
    report = [_evaluate_claim(claim, summaries) for claim in manifest.claims]
    _write_csv(out / REPORT_NAME, REPORT_HEADER,
               [row.csv_row() for row in report])
    return report, errors


def read_report(directory: str | Path) -> list[ReportRow]:
    """Load report.csv rows back; raises MissingArtifacts on any defect."""
    path = Path(directory) / REPORT_NAME
    if not path.exists():
        raise MissingArtifacts(f"{path} not found")
    rows = []
    with open(path, newline="") as handle:
        lines = handle.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != REPORT_HEADER:
        raise MissingArtifacts(f"{path} corrupted: bad header")
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(REPORT_HEADER) or cells[-1] not in ("pass",
                                                                 "fail"):
            raise MissingArtifacts(f"{path} corrupted at line {lineno}")
        rows.append(ReportRow(*cells))
    return rows


# ---------------------------------------------------------------------------
# command line front end


def _bundled_manifest(name: str) -> Path | None:
    stem = name.replace("-", "_")
    if not stem.endswith(".json"):
        stem += ".json"
    ref = importlib.resources.files("rangeldp") / "manifests" / stem
    return Path(str(ref)) if ref.is_file() else None


def _cmd_run(args) -> int:
    path = Path(args.manifest)
    if not path.exists():
        bundled = _bundled_manifest(args.manifest)
        if bundled is not None:
            path = bundled
    try:
        manifest = load_manifest(path)
        report, errors = run_manifest(manifest, args.output_dir, log=print)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    for row in report:
        print(f"claim {row.claim}: {row.verdict}")
    failed = [row for row in report if row.verdict != "pass"]
    return 1 if errors or failed else 0


def _cmd_report(args) -> int:
    try:
        rows = read_report(args.dir)
    except MissingArtifacts as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    width = max((len(row.claim) for row in rows), default=5)
    failed = False
    for row in rows:
        print(f"{row.claim:<{width}}  {row.verdict:<4}  {row.anchor}")
        if row.verdict != "pass":
            failed = True
            print(f"{'':<{width}}        measured {row.measured} vs "
                  f"{row.target} tol {row.tolerance}")
    print(f"{sum(r.verdict == 'pass' for r in rows)}/{len(rows)} claims pass")
    return 1 if failed else 0


def _print_summary(op_key: tuple[str, str], params: dict,
                   replicas: int | None, seed: int) -> int:
    op = _OPS[op_key]
    try:
        op.validate(params)
        if op.replicas == "required" and (replicas is None
                                          or replicas < op.min_replicas):
            raise ValueError(f"needs --replicas >= {op.min_replicas}")
        _, rows, summary = op.run(params, replicas, RngStream(seed))
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    del rows
    for key, value in summary.items():
        print(f"{key} = {_fmt(value)}")
    return 0


def _cmd_chi(args) -> int:
    return _print_summary(("ratefn", "chi"), {"u": args.u}, None, 0)


def _cmd_rate_curve(args) -> int:
    params = {"points": args.points, "b_min": args.b_min, "b_max": args.b_max}
    op = _OPS[("ratefn", "rate-curve")]
    try:
        op.validate(params)
        header, rows, _ = op.run(params, None, RngStream(0))
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        _write_csv(Path(args.out), header, rows)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(_fmt(cell) for cell in row))
    return 0


def _cmd_mean_range(args) -> int:
    return _print_summary(("walks", "mean-range"),
                          {"n": args.n, "law": args.law}, args.replicas,
                          args.seed)


def _cmd_tail(args) -> int:
    return _print_summary(("walks", "tail"),
                          {"n": args.n, "b": args.b, "law": args.law},
                          args.replicas, args.seed)


def _cmd_hitting(args) -> int:
    return _print_summary(("walks", "hitting"),
                          {"n": args.n, "s": args.s, "ax": args.ax,
                           "ay": args.ay, "law": args.law},
                          args.replicas, args.seed)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangeldp",
        description="Range statistics of planar random walks: estimators, "
                    "rate-function solver, manifest runner.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="execute a JSON run manifest")
    p.add_argument("manifest", help="manifest path or bundled name "
                                    "(e.g. paper-suite)")
    p.add_argument("--output-dir", default=None,
                   help="override the manifest's output_dir")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="summarize a run's report.csv")
    p.add_argument("dir", help="artifact directory of a previous run")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("chi", help="constrained profile energy at budget u")
    p.add_argument("--u", type=float, required=True)
    p.set_defaults(fn=_cmd_chi)

    p = sub.add_parser("rate-curve", help="decay exponents on a grid of b")
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--b-min", type=float, default=0.5)
    p.add_argument("--b-max", type=float, default=8.0)
    p.add_argument("--out", default=None, help="CSV file (default: stdout)")
    p.set_defaults(fn=_cmd_rate_curve)

    p = sub.add_parser("mean-range", help="Monte Carlo mean of the range")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicas", type=int, required=True)
    p.add_argument("--law", default=DEFAULT_LAW)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(fn=_cmd_mean_range)

    p = sub.add_parser("tail", help="P(range <= b*n/log n) by Monte Carlo")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--replicas", type=int, required=True)
    p.add_argument("--law", default=DEFAULT_LAW)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(fn=_cmd_tail)

    p = sub.add_parser("hitting", help="scaled site-hitting probability")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--ax", type=int, required=True)
    p.add_argument("--ay", type=int, required=True)
    p.add_argument("--replicas", type=int, default=10000)
    p.add_argument("--law", default=DEFAULT_LAW)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(fn=_cmd_hitting)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
