"""Command-line runner.

Config files are JSON objects::

    {
      "problem": "poisson_peak",          # poisson_peak | burgers | two_peaks | wave
      "out": "runs/poisson",              # output directory (``--out`` wins)
      "train": {"M": 2, "N2": 100},       # TrainConfig fields; unset ones use the
                                          # benchmark defaults, then the TrainConfig defaults
      "sweep": {"mesh": [10, 30], "N2": [25, 50]},   # only read by ``sweep``
      "checkpoint": "runs/poisson/params.ckpt"       # only read by ``estimate``
    }

Sweep axes are ``mesh`` (sets both mesh_nx and mesh_ny), ``mesh_nx``,
``mesh_ny``, ``N1`` and ``N2``; the runs are the Cartesian product.

Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .network import load_params
from .problems import PROBLEMS, get_problem
from .recovery import write_indicator_csv
from .training import BENCHMARK_DEFAULTS, TrainConfig, compute_indicator, run_rpinn

log = logging.getLogger("rpinn")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SWEEP_AXES = ("mesh", "mesh_nx", "mesh_ny", "N1", "N2")
TOP_LEVEL_KEYS = {"problem", "out", "train", "sweep", "checkpoint", "seed"}
TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunSpec:
    problem: str
    train: TrainConfig
    out: Path
    sweep: dict
    checkpoint: Path | None = None

    def resolved(self) -> dict:
        return {"problem": self.problem, "out": str(self.out), "train": self.train.to_dict()}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, seed: int | None = None, out: str | None = None, overrides=()) -> RunSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}; allowed {sorted(TOP_LEVEL_KEYS)}")
    train = dict(raw.get("train", {}))
    if not isinstance(train, dict):
        raise ConfigError(f"{path}: field 'train' must be an object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key.startswith("train."):
            key = key[len("train.") :]
        if key in ("problem", "out", "checkpoint"):
            raw[key] = value
        else:
            train[key] = _parse_value(value)
    problem = raw.get("problem")
    if problem not in PROBLEMS:
        raise ConfigError(f"{path}: field 'problem': unknown problem {problem!r}; valid names: {', '.join(PROBLEMS)}")
    bad = set(train) - TRAIN_FIELDS
    if bad:
        raise ConfigError(f"{path}: field 'train': unknown key(s) {sorted(bad)}")
    if seed is not None:
        train["seed"] = seed
    elif "seed" in raw:
        train["seed"] = raw["seed"]
    merged = dict(BENCHMARK_DEFAULTS.get(problem, {}))
    merged.update(train)
    try:
        cfg = TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: field 'train': {exc}") from None
    sweep = raw.get("sweep", {}) or {}
    if not isinstance(sweep, dict) or set(sweep) - set(SWEEP_AXES):
        raise ConfigError(f"{path}: field 'sweep' must map a subset of {SWEEP_AXES} to lists")
    for k, v in sweep.items():
        if not isinstance(v, list) or not v or not all(isinstance(i, int) for i in v):
            raise ConfigError(f"{path}: field 'sweep.{k}' must be a nonempty list of integers")
    out_dir = Path(out or raw.get("out") or f"runs/{problem}")
    ckpt = raw.get("checkpoint")
    return RunSpec(problem, cfg, out_dir, sweep, Path(ckpt) if ckpt else None)


def _summary_line(name: str, reports) -> str:
    last = reports[-1]
    return (f"{name}: iterations={last.iteration} rel_l2={last.rel_l2:.6e} "
            f"l_inf={last.l_inf:.6e} loss={last.loss:.6e} seconds={last.seconds:.1f}")


def _write_resolved(spec: RunSpec, cfg: TrainConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"problem": spec.problem, "out": str(out), "train": cfg.to_dict()}
    (out / "config.json").write_text(json.dumps(doc, indent=2) + "\n")


def cmd_run(spec: RunSpec) -> int:
    _write_resolved(spec, spec.train, spec.out)
    reports = run_rpinn(get_problem(spec.problem), spec.train, out_dir=spec.out)
    print(_summary_line(spec.problem, reports))
    return EXIT_OK


def sweep_points(spec: RunSpec) -> list[dict]:
    axes = [k for k in SWEEP_AXES if k in spec.sweep]
    runs = []
    for combo in itertools.product(*(spec.sweep[k] for k in axes)):
        kw = {}
        for k, v in zip(axes, combo):
            if k == "mesh":
                kw["mesh_nx"] = kw["mesh_ny"] = v
            else:
                kw[k] = v
        runs.append(kw)
    return runs


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sweep_one(args):
    problem, cfg_dict, out = args
    cfg = TrainConfig(**cfg_dict)
    t0 = time.perf_counter()
    try:
        reports = run_rpinn(get_problem(problem), cfg, out_dir=out)
    except Exception as exc:  # keep the sweep going; the row records the failure
        return {"status": f"error: {exc}", "seconds": time.perf_counter() - t0}
    last = reports[-1]
    return {"status": "ok", "rel_l2": last.rel_l2, "l_inf": last.l_inf, "loss": last.loss, "seconds": last.seconds}


def cmd_sweep(spec: RunSpec, workers: int = 1) -> int:
    if not spec.sweep:
        raise ConfigError("sweep requires a 'sweep' field")
    spec.out.mkdir(parents=True, exist_ok=True)
    jobs, rows = [], []
    for i, kw in enumerate(sweep_points(spec)):
        try:
            cfg = spec.train.replace(seed=derived_seed(spec.train.seed, i), **kw)
        except ValueError as exc:
            raise ConfigError(f"sweep point {kw}: {exc}") from None
        name = f"run{i:03d}_" + "_".join(f"{k}{v}" for k, v in kw.items())
        out = spec.out / name
        _write_resolved(spec, cfg, out)
        jobs.append((spec.problem, cfg.to_dict(), str(out)))
        rows.append({"run": name, "mesh_nx": cfg.mesh_nx, "mesh_ny": cfg.mesh_ny, "N1": cfg.N1, "N2": cfg.N2, "seed": cfg.seed})
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    fields = ["run", "mesh_nx", "mesh_ny", "N1", "N2", "seed", "rel_l2", "l_inf", "loss", "seconds", "status"]
    failed = 0
    with open(spec.out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row, res in zip(rows, results):
            row.update(res)
            for k in ("rel_l2", "l_inf", "loss", "seconds"):
                if k in row:
                    row[k] = f"{row[k]:.17g}"
            w.writerow(row)
            failed += res["status"] != "ok"
            print(f"{row['run']}: rel_l2={row.get('rel_l2', 'nan')} l_inf={row.get('l_inf', 'nan')} status={res['status']}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_estimate(spec: RunSpec, eta_out: str | None = None) -> int:
    ckpt = spec.checkpoint or spec.out / "params.ckpt"
    if not Path(ckpt).is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    params = load_params(ckpt)
    cfg = spec.train
    ind = compute_indicator(get_problem(spec.problem), params, cfg.mesh_nx, cfg.mesh_ny, cfg.recovery_method)
    path = Path(eta_out) if eta_out else spec.out / "eta.csv"
    write_indicator_csv(path, ind)
    print(f"{spec.problem}: {len(ind.eta)} elements, max eta={ind.eta.max():.6e}, "
          f"global estimate={ind.global_estimate:.6e}, fallbacks={ind.fallback_count} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpinn", description="Adaptive PINN training with a recovery-based error estimator.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "train one configuration"), ("sweep", "train every point of the sweep grid"),
                        ("estimate", "compute element indicators from a saved checkpoint")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="JSON configuration file")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a train field (or problem/out/checkpoint); repeatable")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            s.add_argument("--workers", type=int, default=1)
        if name == "estimate":
            s.add_argument("--eta-out", default=None, help="indicator CSV path (default <out>/eta.csv)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        spec = load_config(args.config, args.seed, args.out, args.override)
        if args.command == "run":
            return cmd_run(spec)
        if args.command == "sweep":
            return cmd_sweep(spec, args.workers)
        return cmd_estimate(spec, args.eta_out)
    except ConfigError as exc:
        print(f"rpinn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"rpinn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
