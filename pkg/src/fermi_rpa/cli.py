"""Command-line front end.

Five commands (partition, count, energy, sweep, sandbox) driven by a flat
key=value config file and/or flags, flags winning on the same name.  Every
artifact is JSON (plus CSV where tabular), carries schema "fermi-rpa/1",
echoes the fully resolved config including defaults, and confines all
volatile fields to a single "timestamp" object so re-runs are byte
identical elsewhere.  Exit codes: 0 ok, 2 config problem, 3 numerical
domain failure (message names the failing momentum).
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .energy import (DEFAULT_DELTA, DEFAULT_EPS, Potential, SCHEMA,
                     convergence_sweep, correlation_energy, sweep_csv)
from .focksandbox import sandbox_suite
from .lattice import FermiGeometry, ResourceLimitError, gamma_nor, shell
from .paircount import build_pair_table, pair_floor_ratio, pair_table_csv
from .patches import (DEFAULT_D_TILDE, adjacent_pairs, build_partition,
                      index_sets, lift_to_shell, min_gap_angle,
                      round_even_patch_count)

COMMANDS = ("partition", "count", "energy", "sweep", "sandbox")
METHODS = ("trace", "integral", "symplectic", "all")

DEFAULTS = {
    "command": None,
    "kf": None,
    "n": None,
    "epsilon": DEFAULT_EPS,
    "delta": DEFAULT_DELTA,
    "potential": "zero",
    "mass": 1.0,
    "method": "all",
    "patches": None,
    "out": ".",
    "threads": 1,
    "seed": 0,
    "sweep_n": "10000,30000,100000",
}

# how raw config-file strings are coerced, per key
_COERCE = {
    "command": str, "kf": float, "n": int, "epsilon": float, "delta": float,
    "potential": str, "mass": float, "method": str, "patches": int,
    "out": str, "threads": int, "seed": int, "sweep_n": str,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run parameters; defaults already applied."""

    command: str = None
    kf: float = None
    n: int = None
    epsilon: float = DEFAULT_EPS
    delta: float = DEFAULT_DELTA
    potential: str = "zero"
    mass: float = 1.0
    method: str = "all"
    patches: int = None
    out: str = "."
    threads: int = 1
    seed: int = 0
    sweep_n: str = DEFAULTS["sweep_n"]


# ------------------------------------------------------------ potential spec


def parse_potential(spec, mass=1.0) -> Potential:
    """Spec grammar: "zero" | "uniform:<v0>[:<R>]" | "radial:<s>=<v>,..."
    | path to a file of "<s> <value>" lines (s = |k|^2, # comments ok)."""
    spec = spec.strip()
    if spec == "zero":
        return Potential(R=0, m=mass, radial={})
    if spec.startswith("uniform:"):
        parts = spec.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"bad uniform potential spec {spec!r}")
        try:
            v0 = float(parts[1])
            r = int(parts[2]) if len(parts) == 3 else 1
        except ValueError as exc:
            raise ConfigError(f"bad uniform potential spec {spec!r}") from exc
        return Potential.uniform(v0, R=r, m=mass)
    if spec.startswith("radial:"):
        return _radial_from_pairs(
            (item.split("=") for item in spec[len("radial:"):].split(",")),
            mass, spec)
    if not os.path.exists(spec):
        raise ConfigError(f"potential spec {spec!r}: not a keyword and no "
                          "such file")
    with open(spec) as fh:
        rows = [ln.split("#")[0].split() for ln in fh]
    return _radial_from_pairs((r for r in rows if r), mass, spec)


def _radial_from_pairs(pairs, mass, origin):
    radial = {}
    for pair in pairs:
        if len(pair) != 2:
            raise ConfigError(f"potential {origin!r}: expected s=value pairs")
        try:
            s, val = int(pair[0]), float(pair[1])
        except ValueError as exc:
            raise ConfigError(f"potential {origin!r}: bad entry {pair}") from exc
        if s in radial and radial[s] != val:
            raise ConfigError(f"potential {origin!r}: shell {s} given twice")
        radial[s] = val
    if not radial:
        raise ConfigError(f"potential {origin!r}: empty table")
    smax = max(radial)
    r = math.isqrt(smax)
    if r * r < smax:
        r += 1
    try:
        return Potential(R=r, m=mass, radial=radial)
    except ValueError as exc:
        raise ConfigError(f"potential {origin!r}: {exc}") from exc


# -------------------------------------------------------------- config merge


def load_config_file(path) -> dict:
    """Flat key=value lines; # starts a comment; unknown keys rejected."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} not found")
    vals = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _COERCE:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                vals[key] = _COERCE[key](val)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return vals


def build_config(args) -> RunConfig:
    """defaults < config file < flags (and the positional command)."""
    merged = dict(DEFAULTS)
    if args.config:
        merged.update(load_config_file(args.config))
    for key in DEFAULTS:
        if key == "command":
            continue
        flag_val = getattr(args, key)
        if flag_val is not None:
            merged[key] = flag_val
    if args.command is not None:
        merged["command"] = args.command
    return RunConfig(**merged)


def validate(cfg: RunConfig):
    """Returns (errors, warnings). delta out of range only warns."""
    errors, warnings = [], []
    if cfg.command is None:
        errors.append("command required: one of " + "|".join(COMMANDS))
    elif cfg.command not in COMMANDS:
        errors.append(f"unknown command {cfg.command!r}; expected one of "
                      + "|".join(COMMANDS))
    if not 0.0 < cfg.epsilon < 1.0 / 3.0:
        errors.append(f"epsilon={cfg.epsilon} outside (0, 1/3)")
    elif not 0.0 < cfg.delta < 1.0 / 6.0 - cfg.epsilon / 2.0:
        warnings.append(
            f"delta={cfg.delta} outside (0, 1/6 - epsilon/2); pair-count "
            "floor and error bounds are not guaranteed")
    if cfg.kf is not None and cfg.n is not None:
        errors.append("give only one of kf and n")
    if cfg.kf is not None and cfg.kf <= 0:
        errors.append(f"kf={cfg.kf} must be positive")
    if cfg.n is not None and cfg.n < 1:
        errors.append(f"n={cfg.n} must be at least 1")
    if cfg.command in ("partition", "count", "energy") \
            and cfg.kf is None and cfg.n is None:
        errors.append(f"{cfg.command} needs kf or n")
    if cfg.method not in METHODS:
        errors.append(f"unknown method {cfg.method!r}; expected one of "
                      + "|".join(METHODS))
    if cfg.patches is not None and (cfg.patches < 2 or cfg.patches % 2):
        errors.append(f"patches={cfg.patches} must be an even number >= 2")
    if cfg.threads < 1:
        errors.append(f"threads={cfg.threads} must be at least 1")
    if cfg.mass <= 0:
        errors.append(f"mass={cfg.mass} must be positive")
    if cfg.command == "sweep":
        try:
            targets = _sweep_targets(cfg)
            if any(t < 1 for t in targets):
                errors.append("sweep_n entries must be at least 1")
        except ValueError:
            errors.append(f"sweep_n={cfg.sweep_n!r} must be a comma list "
                          "of integers")
    try:
        parse_potential(cfg.potential, cfg.mass if cfg.mass > 0 else 1.0)
    except ConfigError as exc:
        errors.append(str(exc))
    return errors, warnings


def _sweep_targets(cfg):
    return [int(s) for s in cfg.sweep_n.split(",") if s.strip()]


# ----------------------------------------------------------------- plumbing


def _geometry(cfg, potential) -> FermiGeometry:
    r = max(potential.R, 1)
    if cfg.kf is not None:
        return FermiGeometry.from_kf(cfg.kf, R=r)
    return FermiGeometry.from_n(cfg.n, R=r)


def _patch_count(cfg, geom) -> int:
    if cfg.patches is not None:
        return cfg.patches
    return round_even_patch_count(geom.N, cfg.epsilon)


def _pool_map(cfg, pool):
    return None if pool is None else pool.map


def _now():
    return datetime.now(timezone.utc).isoformat()


def _artifact_text(cfg, payload, wall_time=None) -> str:
    body = {"schema": SCHEMA,
            "config": dataclasses.asdict(cfg),
            "timestamp": {"written": _now()}}
    if wall_time is not None:
        body["timestamp"]["wall_time_s"] = wall_time
    body.update(payload)
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def _atomic_write(path, text):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _strip_wall(report_dict):
    d = dict(report_dict)
    wall = d.pop("wall_time", None)
    return d, wall


# ----------------------------------------------------------------- commands


def _cmd_partition(cfg, potential):
    geom = _geometry(cfg, potential)
    m = _patch_count(cfg, geom)
    t0 = time.monotonic()
    part = build_partition(m, geom.N, geom.R, DEFAULT_D_TILDE)
    pre = np.array([p.pre_area for p in part.patches])
    target = 4.0 * math.pi / m
    centers = part.centers()
    mirror_exact = all(
        np.array_equal(centers[p.mirror_id], -centers[p.id])
        for p in part.patches)
    diam = max(p.diameter for p in part.patches)
    # gap sampling capped; adjacent_pairs is already a representative set
    gaps = [min_gap_angle(part, a, b) for a, b in adjacent_pairs(part)[:256]]
    min_gap = min(gaps) if gaps else math.inf
    payload = {
        "partition": {
            "M": m, "N": geom.N, "k_F": geom.k_F, "hbar": geom.hbar,
            "pre_area_max_rel_err": float(np.abs(pre / target - 1.0).max()),
            "area_min": float(part.areas().min()),
            "area_max": float(part.areas().max()),
            "corridor_area": part.corridor_area(),
            "corridor_fraction": part.corridor_area() / (4.0 * math.pi),
            "max_diameter": diam,
            "diameter_times_sqrt_m": diam * math.sqrt(m),
            "min_gap_angle": min_gap,
            "min_gap_scaled": min_gap * geom.k_F,
            "gap_clears_two_shells": bool(min_gap * geom.k_F >= 2.0 * geom.R),
            "mirror_exact": bool(mirror_exact),
        }
    }
    wall = time.monotonic() - t0
    summary = {"M": m, "N": geom.N,
               "corridor_area": payload["partition"]["corridor_area"],
               "mirror_exact": mirror_exact}
    return summary, {"partition.json": _artifact_text(cfg, payload, wall)}


def _cmd_count(cfg, potential):
    geom = _geometry(cfg, potential)
    m = _patch_count(cfg, geom)
    t0 = time.monotonic()
    part = build_partition(m, geom.N, geom.R, DEFAULT_D_TILDE)
    assign = lift_to_shell(part, shell(geom))
    gamma = gamma_nor(geom.R)
    idx = index_sets(part, gamma, cfg.delta, geom.N)
    table = build_pair_table(part, assign, idx, gamma, geom.k_F)
    floor = pair_floor_ratio(table, geom.N, m, cfg.delta)
    worst_rel = max(
        (table.entry(kt, a).rel_err
         for kt, keep in table.alive.items() for a in keep),
        default=math.inf)
    payload = {
        "count": {
            "M": m, "N": geom.N, "k_F": geom.k_F,
            "n_momenta": len(table.alive),
            "entries": len(table.entries),
            "alive_per_k": {",".join(map(str, kt)): len(keep)
                            for kt, keep in sorted(table.alive.items())},
            "dropped": [[list(kt), int(a)] for kt, a in table.dropped],
            "pair_floor_ratio": floor,
            "worst_v_sq_rel_err": worst_rel,
        }
    }
    wall = time.monotonic() - t0
    summary = {"M": m, "N": geom.N, "entries": len(table.entries),
               "pair_floor_ratio": floor}
    return summary, {
        "count.json": _artifact_text(cfg, payload, wall),
        "pair_table.csv": pair_table_csv(table),
    }


def _method_values(report_dict, method):
    vals = report_dict["e_corr"]
    if method == "all":
        return {k: vals[k] for k in ("trace", "integral", "symplectic")}
    return {method: vals[method]}


def _cmd_energy(cfg, potential):
    geom = _geometry(cfg, potential)
    m = _patch_count(cfg, geom)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        report = correlation_energy(geom, potential, m, delta=cfg.delta,
                                    eps=cfg.epsilon,
                                    pmap=_pool_map(cfg, pool))
    finally:
        if pool is not None:
            pool.shutdown()
    d, wall = _strip_wall(report.to_dict())
    payload = {"energy": d}
    summary = {"N": geom.N, "M": m,
               "e_corr": _method_values(d, cfg.method),
               "e_corr_per_hbar": d["e_corr"]["per_hbar"],
               "gmb_per_hbar": d["gmb"]["per_hbar"]}
    return summary, {"energy.json": _artifact_text(cfg, payload, wall)}


def _cmd_sweep(cfg, potential):
    targets = _sweep_targets(cfg)
    fit = len(set(targets)) >= 3
    t0 = time.monotonic()
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        reports, exponent = convergence_sweep(
            targets, potential, eps=cfg.epsilon, delta=cfg.delta,
            fit_exponent=fit, pmap=_pool_map(cfg, pool))
    finally:
        if pool is not None:
            pool.shutdown()
    wall = time.monotonic() - t0
    stripped = [_strip_wall(r.to_dict())[0] for r in reports]
    payload = {"sweep": {"targets": targets, "fitted_exponent": exponent,
                         "reports": stripped}}
    csv = sweep_csv(reports)
    if exponent is not None:
        # one trailing row, padded to the full column count
        csv += "fitted_exponent," + f"{exponent:.12g}" + "," * 12 + "\n"
    summary = {"targets": targets, "fitted_exponent": exponent,
               "abs_errors": [r.gmb_error for r in reports]}
    return summary, {
        "sweep.json": _artifact_text(cfg, payload, wall),
        "sweep.csv": csv,
    }


def _cmd_sandbox(cfg, potential):
    t0 = time.monotonic()
    suite = sandbox_suite(seed=cfg.seed)
    wall = time.monotonic() - t0
    payload = {"sandbox": suite}
    summary = {"pass": suite["pass"],
               "checks": {name: rep["pass"]
                          for name, rep in suite["reports"].items()}}
    return summary, {"sandbox.json": _artifact_text(cfg, payload, wall)}


_RUNNERS = {
    "partition": _cmd_partition,
    "count": _cmd_count,
    "energy": _cmd_energy,
    "sweep": _cmd_sweep,
    "sandbox": _cmd_sandbox,
}


# ---------------------------------------------------------------- run/main


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def run(cfg: RunConfig) -> int:
    """Validate, execute, write artifacts atomically, print one summary
    line. Deterministic given (cfg, seed) up to the timestamp fields."""
    errors, warnings = validate(cfg)
    if errors:
        _emit({"schema": SCHEMA, "status": "config-error",
               "errors": errors, "warnings": warnings})
        return 2
    potential = parse_potential(cfg.potential, cfg.mass)
    try:
        summary, artifacts = _RUNNERS[cfg.command](cfg, potential)
    except ArithmeticError as exc:
        # numerical-domain failures carry the offending momentum upstream
        _emit({"schema": SCHEMA, "status": "numerical-error",
               "command": cfg.command, "error": str(exc),
               "warnings": warnings})
        return 3
    except (ValueError, ResourceLimitError) as exc:
        _emit({"schema": SCHEMA, "status": "config-error",
               "errors": [str(exc)], "warnings": warnings})
        return 2
    os.makedirs(cfg.out, exist_ok=True)
    paths = []
    for name, text in sorted(artifacts.items()):
        path = os.path.join(cfg.out, name)
        _atomic_write(path, text)
        paths.append(path)
    _emit({"schema": SCHEMA, "status": "ok", "command": cfg.command,
           "summary": summary, "artifacts": paths, "warnings": warnings})
    return 0


def _parser():
    p = argparse.ArgumentParser(
        prog="fermi-rpa",
        description="Patch-bosonized correlation energy for the mean-field "
                    "Fermi gas: partition quality, pair counts, quadratic "
                    "energies with cross checks, and a small Fock-space "
                    "sandbox.")
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="what to run (may also come from the config file)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--kf", type=float, help="Fermi momentum")
    p.add_argument("--n", type=int, help="particle-number target "
                   "(alternative to --kf)")
    p.add_argument("--epsilon", type=float,
                   help="patch-count exponent offset, in (0, 1/3)")
    p.add_argument("--delta", type=float,
                   help="near-equator cut exponent (warned if outside "
                   "(0, 1/6 - epsilon/2))")
    p.add_argument("--potential",
                   help='"zero", "uniform:v0[:R]", "radial:s=v,...", or a '
                   "file of 's value' lines")
    p.add_argument("--mass", type=float, help="interaction mass parameter")
    p.add_argument("--method", choices=METHODS,
                   help="which energy route to report in the summary")
    p.add_argument("--patches", type=int,
                   help="override the patch count M (even, >= 2)")
    p.add_argument("--out", help="output directory for artifacts")
    p.add_argument("--threads", type=int,
                   help="worker threads for per-k and sweep tasks")
    p.add_argument("--seed", type=int, help="seed for sandbox randomness")
    p.add_argument("--sweep-n", dest="sweep_n",
                   help="comma list of N targets for the sweep command")
    return p


def main(argv=None) -> int:
    # stdout carries exactly one JSON line; diagnostics go to stderr
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        _emit({"schema": SCHEMA, "status": "config-error",
               "errors": [str(exc)], "warnings": []})
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
