"""Command-line front end: experiment configs, NDJSON event logs and manifests.

Usage::

    configlab --config experiment.yaml --out results/

Every record in ``events.ndjson`` carries the config hash and seed; wall
clock timings go to ``timings.ndjson`` so that re-running a saved config
reproduces ``events.ndjson`` byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import yaml

from . import __version__, counting, increment, norms, vonneumann
from .errors import LabError, UsageError
from .grid import GridFunction, balanced_part, make_grid_function, spec_from_dict
from .kernels import BACKEND
from .measures import SimplexSpec

log = logging.getLogger("configlab")

COMMANDS = ("count", "norms", "gvn-check", "regularize", "pipeline", "witness")
TOP_KEYS = {"command": str, "seed": int, "n": int, "d": int, "split": (int, type(None)),
            "sets": dict, "params": dict, "tolerances": dict, "output": dict}

PARAM_DEFAULTS = {
    "count": {"kind": "distance", "slots": None, "lam": 0.25, "c": 1.0, "method": "fft",
              "budget": 4096, "simplex": None},
    "norms": {"set": None, "scales": [0.125], "which": ["u1", "defect"], "balanced": True},
    "gvn-check": {"lemma": "distance", "slots": None, "lam": 0.25, "eps": 0.5, "c": 1.0,
                  "K": 1.0, "seeds": None, "simplex": None, "variant": "direct",
                  "B": None, "B1": None, "B2": None, "level": 8, "batches": 8},
    "regularize": {"B1": None, "B2": None, "scales": [1.0, 0.25, 0.0625], "eta": 0.25},
    "pipeline": {"A": None, "scales": [0.25], "c": 1.0, "eps": 0.5, "threshold_factor": 0.125,
                 "c_prime": 2.0**-40, "eta_reg": 0.3, "reg_scales": None, "max_iter": 16,
                 "extract": True, "budget": 100000},
    "witness": {"A": None, "lam": 0.25, "c": 1.0, "budget": 100000},
}
TOLERANCE_DEFAULTS = {"exact_steps": vonneumann.EXACT_TOL, "oracle_relative": 1e-10}
OUTPUT_DEFAULTS = {"ndjson": "events.ndjson", "csv": "summary.csv", "manifest": "manifest.json",
                   "timings": "timings.ndjson"}


@dataclass
class ExperimentConfig:
    """Validated experiment configuration with all defaults filled in."""

    command: str
    seed: int
    n: int
    d: int
    split: int | None = None
    sets: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list, compare=False)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "n": self.n, "d": self.d,
                "split": self.split, "sets": copy.deepcopy(self.sets),
                "params": copy.deepcopy(self.params),
                "tolerances": dict(self.tolerances), "output": dict(self.output)}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @property
    def hash(self) -> str:
        blob = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ConfigError(UsageError):
    """Configuration validation failed; ``errors`` lists every problem found."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, GridFunction):
        return {"n": obj.n, "d": obj.d, "integral": obj.integral()}
    return obj


def _is_type(value, typ) -> bool:
    if typ is int or typ == (int, type(None)):
        return value is None and typ != int or (isinstance(value, int) and not isinstance(value, bool))
    return isinstance(value, typ)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML (or JSON) config text.

    Unknown keys produce warnings; type mismatches, a missing seed and
    unresolvable scales are errors.  All errors are collected before
    raising :class:`ConfigError`.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    errors, warnings = [], []
    for k in raw:
        if k not in TOP_KEYS:
            warnings.append(f"unknown key {k!r} ignored")
    for k, typ in TOP_KEYS.items():
        if k in raw and not _is_type(raw[k], typ):
            errors.append(f"{k}: expected {getattr(typ, '__name__', 'int or null')}, "
                          f"got {type(raw[k]).__name__}")
    if "seed" not in raw:
        errors.append("seed: missing (a seed is mandatory for reproducibility)")
    command = raw.get("command")
    if command not in COMMANDS:
        errors.append(f"command: must be one of {', '.join(COMMANDS)}, got {command!r}")
    for k in ("n", "d"):
        if k not in raw:
            errors.append(f"{k}: missing")
    usable = command in COMMANDS and all(_is_type(raw.get(k), int) for k in ("n", "d"))
    if not usable:
        raise ConfigError(errors)
    n, d = raw["n"], raw["d"]
    if n < 8:
        errors.append(f"n: resolution must be at least 8, got {n}")
    if not 1 <= d <= 6:
        errors.append(f"d: dimension must be in 1..6, got {d}")
    sets = raw.get("sets") if isinstance(raw.get("sets"), dict) else {}
    for name, spec in sets.items():
        try:
            spec_from_dict(spec)
        except LabError as exc:
            errors.append(f"sets.{name}: {exc}")
    params = dict(PARAM_DEFAULTS[command])
    raw_params = raw.get("params") if isinstance(raw.get("params"), dict) else {}
    for k, v in raw_params.items():
        if k not in params:
            warnings.append(f"params: unknown key {k!r} ignored")
            continue
        default = params[k]
        if default is not None and not _compatible(v, default):
            errors.append(f"params.{k}: expected {type(default).__name__}, got {type(v).__name__}")
            continue
        params[k] = v
    tolerances = dict(TOLERANCE_DEFAULTS)
    for k, v in (raw.get("tolerances") if isinstance(raw.get("tolerances"), dict) else {}).items():
        if k not in tolerances:
            warnings.append(f"tolerances: unknown key {k!r} ignored")
        elif not isinstance(v, (int, float)) or isinstance(v, bool):
            errors.append(f"tolerances.{k}: expected number")
        else:
            tolerances[k] = float(v)
    output = dict(OUTPUT_DEFAULTS)
    for k, v in (raw.get("output") if isinstance(raw.get("output"), dict) else {}).items():
        if k not in output:
            warnings.append(f"output: unknown key {k!r} ignored")
        else:
            output[k] = str(v)
    errors += _check_scales(command, params, n)
    for ref in _set_refs(command, params):
        if ref not in sets:
            errors.append(f"params refer to undefined set {ref!r}")
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(command, raw["seed"], n, d, raw.get("split"), sets, params,
                           tolerances, output, warnings)
    for w in warnings:
        log.warning(w)
    return cfg


def _compatible(v, default) -> bool:
    if isinstance(default, bool):
        return isinstance(v, bool)
    if isinstance(default, (int, float)):
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if isinstance(default, list):
        return isinstance(v, list)
    return isinstance(v, type(default))


def _check_scales(command, params, n) -> list:
    errs = []
    h = 1.0 / n
    if command in ("count", "gvn-check", "witness"):
        lam, c = params["lam"], params.get("c", 1.0)
        if lam * min(c, 1.0) < 2 * h - 1e-12:
            errs.append(f"params.lam: scale {lam * min(c, 1.0):g} violates the resolvability "
                        f"rule lambda >= 2/n = {2 * h:g}")
    if command == "pipeline":
        for lam in params["scales"]:
            if lam * params["c"] < 2 * h - 1e-12:
                errs.append(f"params.scales: {lam:g} violates the resolvability rule "
                            f"lambda >= 2/n = {2 * h:g}")
    if command == "norms":
        for L in params["scales"]:
            if L < h - 1e-12:
                errs.append(f"params.scales: {L:g} is below the cell size 1/n = {h:g}")
    return errs


def _set_refs(command, params) -> list:
    refs = []
    for k in ("set", "A", "B", "B1", "B2"):
        if params.get(k):
            refs.append(params[k])
    refs += list(params.get("slots") or [])
    return refs


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


class Recorder:
    """Collects NDJSON records, CSV rows and timings for one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.records, self.rows, self.timings = [], [], []

    def add(self, op, inputs, value, error=None, seed=None, outputs=None, status=None,
            seconds=0.0):
        rec = {"op": op, "inputs": _jsonable(inputs), "value": _jsonable(value),
               "error_estimate": _jsonable(error), "seed": self.cfg.seed if seed is None else seed,
               "config_hash": self.cfg.hash}
        if outputs is not None:
            rec["outputs"] = _jsonable(outputs)
        if status is not None:
            rec["status"] = status
        self.records.append(rec)
        self.rows.append({"op": op, "value": rec["value"], "error_estimate": rec["error_estimate"],
                          "seed": rec["seed"], "status": status or ""})
        self.timings.append({"op": op, "index": len(self.records) - 1, "seconds": seconds})


def _sets(cfg: ExperimentConfig, names, d=None, split=None):
    out = []
    for name in names:
        f = make_grid_function(cfg.sets[name], d or cfg.d, cfg.n)
        if split is not None:
            f = GridFunction(f.values, split=split, kind="indicator")
        out.append(f)
    return out


def _simplex(p) -> SimplexSpec:
    spec = p.get("simplex") or {"regular": 2, "side": 1.0}
    if "regular" in spec:
        return SimplexSpec.regular(int(spec["regular"]), float(spec.get("side", 1.0)))
    return SimplexSpec(np.asarray(spec["vertices"], dtype=float))


def _timed(fn, *a, **kw):
    t = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t


def _run_count(cfg, rec, oracle):
    p = cfg.params
    kind = p["kind"]
    slots = p["slots"] or list(cfg.sets)[:1]
    if kind == "distance":
        fs = _sets(cfg, (slots * 2)[:2])
        res, dt = _timed(counting.count_distance, fs[0], fs[1], p["lam"], method=p["method"],
                         budget=p["budget"], seed=cfg.seed)
        rec.add("count_distance", {"slots": slots, "lam": p["lam"], "method": p["method"]},
                res.value, res.error, outputs=res.to_dict(), seconds=dt)
        if oracle:
            br, dt = _timed(counting.count_distance, fs[0], fs[1], p["lam"], method="brute")
            rel = abs(br.value - res.value) / max(abs(br.value), 1e-300)
            ok = rel <= cfg.tolerances["oracle_relative"]
            rec.add("oracle_count_distance", {"slots": slots, "lam": p["lam"]}, br.value,
                    rel, outputs={"relative_deviation": rel}, status="ok" if ok else "mismatch",
                    seconds=dt)
    elif kind == "simplex":
        sim = _simplex(p)
        fs = _sets(cfg, (slots * (sim.k + 1))[:sim.k + 1])
        res, dt = _timed(counting.count_simplex, fs, sim, p["lam"],
                         method=p["method"] if p["method"] != "fft" else "rotation",
                         budget=p["budget"] if p["method"] != "fft" else 256, seed=cfg.seed)
        rec.add("count_simplex", {"slots": slots, "lam": p["lam"], "simplex": sim.to_dict()},
                res.value, res.error, outputs=res.to_dict(), seconds=dt)
    elif kind == "rectangle":
        fs = _sets(cfg, (slots * 4)[:4], split=cfg.split)
        res, dt = _timed(counting.count_rectangle, *fs, p["lam"], p["c"], method=p["method"],
                         budget=p["budget"], seed=cfg.seed)
        rec.add("count_rectangle", {"slots": slots, "lam": p["lam"], "c": p["c"]}, res.value,
                res.error, outputs=res.to_dict(), seconds=dt)
    else:
        raise UsageError(f"unknown count kind {kind!r}")


def _run_norms(cfg, rec, oracle):
    p = cfg.params
    name = p["set"] or list(cfg.sets)[0]
    split = cfg.split
    (A,) = _sets(cfg, [name], split=split)
    f = balanced_part(A) if p["balanced"] else A
    for L in p["scales"]:
        for which in p["which"]:
            if which == "u1":
                v, dt = _timed(norms.u1_norm, f, L)
                rec.add("u1_norm", {"set": name, "L": L}, v, 0.0, seconds=dt)
            elif which == "box":
                v, dt = _timed(norms.box_norm, f, L)
                rec.add("box_norm", {"set": name, "L": L}, v, 0.0, seconds=dt)
            elif which == "defect":
                r, dt = _timed(norms.uniformity_defect, A, L)
                rec.add("uniformity_defect", {"set": name, "L": L}, r.eps_min, 0.0,
                        outputs=r.to_dict(), seconds=dt)
            else:
                raise UsageError(f"unknown norm {which!r}")


def _run_gvn(cfg, rec, oracle):
    p = cfg.params
    seeds = p["seeds"] or [cfg.seed]
    slots = p["slots"] or list(cfg.sets)[:1]
    lemma = p["lemma"]
    for s in seeds:
        if lemma == "distance":
            fs = [balanced_part(f) for f in _sets(cfg, (slots * 2)[:2])]
            r, dt = _timed(vonneumann.check_gvn_distance, fs[0], fs[1], p["lam"], p["eps"],
                           p["c"], p["K"], seed=s)
        elif lemma in ("simplex", "relative-simplex"):
            sim = _simplex(p)
            fs = [balanced_part(f) for f in _sets(cfg, (slots * (sim.k + 1))[:sim.k + 1])]
            if lemma == "simplex":
                r, dt = _timed(vonneumann.check_gvn_simplex, fs, sim, p["lam"], p["eps"],
                               p["variant"], p["K"], p["level"], p["batches"], s)
            else:
                (B,) = _sets(cfg, [p["B"]])
                r, dt = _timed(vonneumann.check_gvn_relative_simplex, fs, sim, B, p["lam"],
                               p["eps"], p["K"], p["level"], p["batches"], s)
        elif lemma == "rectangle":
            fs = [balanced_part(f) for f in _sets(cfg, (slots * 4)[:4], split=cfg.split)]
            d1 = cfg.split
            B1, = _sets(cfg, [p["B1"]], d=d1)
            B2, = _sets(cfg, [p["B2"]], d=cfg.d - d1)
            r, dt = _timed(vonneumann.check_gvn_rectangle, fs, B1, B2, p["lam"], p["eps"], p["c"],
                           p["K"], seed=s)
        else:
            raise UsageError(f"unknown lemma {lemma!r}")
        out = r.to_dict()
        rec.add(f"gvn_{lemma}", {"slots": slots, "lam": p["lam"], "eps": p["eps"], "K": p["K"]},
                r.lhs, r.numeric_error, seed=s, outputs=out,
                status=r.verdict if r.exact_ok else "exact-step-failed", seconds=dt)


def _run_regularize(cfg, rec, oracle):
    p = cfg.params
    d1 = cfg.split or cfg.d
    B1, = _sets(cfg, [p["B1"]], d=d1)
    B2, = _sets(cfg, [p["B2"]], d=(cfg.d - cfg.split) if cfg.split else cfg.d)
    part, dt = _timed(increment.regularize, B1, B2, p["scales"], p["eta"])
    rec.add("regularize", {"B1": p["B1"], "B2": p["B2"], "scales": p["scales"], "eta": p["eta"]},
            part.energy_value, 0.0, outputs=part.to_dict(), status=part.status, seconds=dt)


def _run_pipeline(cfg, rec, oracle):
    p = cfg.params
    A, = _sets(cfg, [p["A"]], split=cfg.split)
    pc = increment.PipelineConfig(eps=p["eps"], threshold_factor=p["threshold_factor"],
                                  c_prime=p["c_prime"], eta_reg=p["eta_reg"],
                                  reg_scales=p["reg_scales"], max_iter=p["max_iter"],
                                  extract=p["extract"], budget=p["budget"], seed=cfg.seed)
    rep, dt = _timed(increment.run_pipeline, A, p["scales"], p["c"], pc)
    out = rep.outcome or {}
    rec.add("pipeline", {"A": p["A"], "scales": p["scales"], "c": p["c"]}, out.get("value"),
            out.get("error"), outputs=rep.to_dict(), status=rep.status, seconds=dt)


def _run_witness(cfg, rec, oracle):
    p = cfg.params
    A, = _sets(cfg, [p["A"]], split=cfg.split)
    q, dt = _timed(increment.extract_witness, A, p["lam"], p["c"], p["budget"], cfg.seed)
    rec.add("extract_witness", {"A": p["A"], "lam": p["lam"], "c": p["c"]}, q["draws"], None,
            outputs=q, status="found", seconds=dt)


RUNNERS = {"count": _run_count, "norms": _run_norms, "gvn-check": _run_gvn,
           "regularize": _run_regularize, "pipeline": _run_pipeline, "witness": _run_witness}


def _write(cfg: ExperimentConfig, rec: Recorder, out_dir: Path, code: int, error: str | None,
           threads: int | None, oracle: bool):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / cfg.output["ndjson"], "w") as fh:
        for r in rec.records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out_dir / cfg.output["timings"], "w") as fh:
        for r in rec.timings:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out_dir / cfg.output["csv"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["op", "value", "error_estimate", "seed", "status"])
        w.writeheader()
        for row in rec.rows:
            w.writerow({k: json.dumps(v) if isinstance(v, (dict, list)) else v
                        for k, v in row.items()})
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.hash, "version": __version__,
                "backend": BACKEND, "numpy": np.__version__, "exit_code": code, "error": error,
                "warnings": cfg.warnings, "threads": threads, "oracle": oracle,
                "files": dict(cfg.output), "records": len(rec.records)}
    with open(out_dir / cfg.output["manifest"], "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)


def run(cfg: ExperimentConfig, out_dir, threads: int | None = None, oracle: bool = False) -> int:
    """Run a config and write its artifacts; returns the exit code."""
    rec = Recorder(cfg)
    code, error = 0, None
    try:
        with sfft.set_workers(threads or 1):
            RUNNERS[cfg.command](cfg, rec, oracle)
    except LabError as exc:
        code, error = exc.exit_code, f"{type(exc).__name__}: {exc}"
        rec.add("error", {"command": cfg.command}, None, None, outputs={"message": error},
                status=type(exc).__name__)
        log.error(error)
    try:
        _write(cfg, rec, Path(out_dir), code, error, threads, oracle)
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return 1
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="configlab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment config (YAML)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None, help="FFT worker threads")
    ap.add_argument("--oracle", action="store_true", help="force brute-force cross-checks")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
    except ConfigError as exc:
        for e in exc.errors:
            log.error("config: %s", e)
        return 1
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    code = run(cfg, args.out, args.threads, args.oracle)
    log.info("exit code %d, outputs in %s", code, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
