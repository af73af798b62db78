"""Command-line experiment runner.

``pmpmh run CONFIG`` runs the chains described by a JSON config and writes
one CSV per chain, a summary and a manifest. ``pmpmh simulate CONFIG``
writes a simulated dataset. ``pmpmh report DIR`` tabulates ESS and ESS/s
over every run found under ``DIR``, with dashes for runs whose parameter
R-hat exceeds 1.1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import re
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import pandas as pd
import scipy

from .baselines import run_blowfly_particle_gibbs, run_pg, run_pgas
from .diagnostics import RHAT_THRESHOLD, average_ess, summarize
from .estimators import chain_stream, make_gridder
from .exceptions import ConfigurationError, PMPMHError
from .models import MODEL_NAMES, registry
from .models.blowfly import (
    BlowflyData,
    blowfly_grid,
    run_blowfly_chain,
    simulate_blowfly,
)
from .models.gaussian_mixture import simulate_gaussian_mixture
from .models.linear_gaussian import simulate_linear_gaussian
from .rng import derive_stream
from .sampler import ChainOutput, WithinCellProposal, run_chain
from .ssm import BlockScheme

log = logging.getLogger("pmpmh")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
DEFAULT_T = {"gaussian-mixture-1": 600, "gaussian-mixture-2": 600, "linear-gaussian": 100,
             "blowfly": 300}

_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "output"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": list(MODEL_NAMES)},
                "theta": {"type": "object", "additionalProperties": {"type": "number"}},
                "fixed_theta": {"type": "boolean"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "simulate": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "T": _COUNT,
                        "seed": {"type": "integer", "minimum": 0},
                        "truncate": _COUNT,
                    },
                },
            },
            "oneOf": [{"required": ["path"]}, {"required": ["simulate"]}],
        },
        "sampler": {"enum": ["pmpmh", "pg", "pgas"]},
        "pmpmh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "approach": {"enum": [1, 2, 3]},
                "N": {"type": "integer", "minimum": 3},
                "span": _POS,
                "sigma": _POS,
                "proportionality": _POS,
                "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "block_size": _COUNT,
                "overlap": {"type": "integer", "minimum": 0},
                "tail_proposal": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"variance": _POS, "poisson_mean": _POS},
                },
            },
        },
        "baseline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "particles": {"type": "integer", "minimum": 2},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "ancestor_sampling": {"type": "boolean"},
                "mode": {"enum": ["joint", "conditional"]},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": _COUNT,
                "burn_in": {"type": "integer", "minimum": 0},
                "chains": _COUNT,
                "seed": {"type": "integer", "minimum": 0},
                "thin": _COUNT,
                "workers": _COUNT,
            },
        },
        "output": {
            "type": "object",
            "required": ["directory"],
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}


class ConfigError(ConfigurationError):
    """Invalid configuration, with the offending line when known."""

    def __init__(self, message: str, source: str = "<config>", line: Optional[int] = None):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _line_of(text: str, path) -> Optional[int]:
    """1-based line of the key at ``path`` in a JSON document, if it can be found."""
    pos, found = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos, found = m.end(), m.start()
    return None if found is None else text.count("\n", 0, found) + 1


def load_config(path) -> dict:
    """Parse and validate a config file; errors name the file and line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None
    validate_config(cfg, text, str(path))
    return cfg


def validate_config(cfg: dict, text: Optional[str] = None, source: str = "<config>") -> None:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(text, list(err.absolute_path)) if text else None
        raise ConfigError(f"{field}: {err.message}", source, line)
    name = cfg["model"]["name"]
    if name == "blowfly" and cfg["model"].get("fixed_theta"):
        raise ConfigError("model/fixed_theta: not supported for the blowfly model", source)
    theta_keys = set(cfg["model"].get("theta", {}))
    allowed = set(type(registry(name).theta).names)
    if theta_keys - allowed:
        raise ConfigError(f"model/theta: unknown parameters {sorted(theta_keys - allowed)}",
                          source)


def resolve_defaults(cfg: dict, source: str = "<config>") -> dict:
    """Fill in every default so the manifest records the settings actually used."""
    name = cfg["model"]["name"]
    sampler = cfg.setdefault("sampler", "pmpmh")
    blowfly = name == "blowfly"
    if sampler == "pmpmh":
        pm = cfg.setdefault("pmpmh", {})
        if blowfly:
            if pm.setdefault("approach", 3) != 3:
                raise ConfigError("pmpmh/approach: the blowfly model uses approach 3", source)
            pm.setdefault("N", 20)
            pm.setdefault("proportionality", 0.25)
            pm.setdefault("q", 0.01)
        else:
            pm.setdefault("approach", 3)
            pm.setdefault("N", 10)
            if not {"span", "sigma", "proportionality"} & set(pm):
                pm["span"] = 3.0
        pm.setdefault("block_size", 4)
        pm.setdefault("overlap", 1)
        tail = pm.setdefault("tail_proposal", {})
        tail.setdefault("variance", 5.0)
        tail.setdefault("poisson_mean", 2.0)
    else:
        bl = cfg.setdefault("baseline", {})
        bl.setdefault("particles", 100 if blowfly else 25)
        bl.setdefault("threshold", 0.5)
        if bl.setdefault("ancestor_sampling", sampler == "pgas") != (sampler == "pgas"):
            raise ConfigError("baseline/ancestor_sampling: contradicts the sampler", source)
        if blowfly:
            bl.setdefault("mode", "conditional")
    run = cfg.setdefault("run", {})
    for key, value in (("iterations", 1000), ("burn_in", 0), ("chains", 1), ("seed", 0),
                       ("thin", 10), ("workers", 1)):
        run.setdefault(key, value)
    if run["burn_in"] >= run["iterations"]:
        raise ConfigError("run/burn_in: must be smaller than run/iterations", source)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _theta(cfg):
    entry = registry(cfg["model"]["name"])
    return replace(entry.theta, **cfg["model"].get("theta", {}))


def simulate_dataset(cfg: dict):
    """Simulate the configured model; returns ``(frame, sidecar)``."""
    name = cfg["model"]["name"]
    sim = cfg.get("data", {}).get("simulate", {})
    T = sim.get("T", DEFAULT_T[name])
    seed = sim.get("seed", 0)
    theta = _theta(cfg)
    rng = derive_stream(seed, ("data",))
    t = np.arange(1, T + 1)
    if name == "blowfly":
        state, data = simulate_blowfly(theta, T, rng)
        frame = pd.DataFrame({"t": t, "S": state.S, "R": state.R, "N": state.N, "y": data.y})
        extra = {"eps": data.eps.tolist(), "e": data.e.tolist(), "tau": data.tau,
                 "n0": data.n0}
    else:
        simulator = simulate_linear_gaussian if name == "linear-gaussian" \
            else simulate_gaussian_mixture
        x, y = simulator(theta, T, rng)
        frame = pd.DataFrame({"t": t, "x": x, "y": y})
        extra = {}
    sidecar = {"model": name, "theta": dict(zip(type(theta).names, theta.as_array().tolist())),
               "seed": seed, "T": T, **extra}
    return frame, sidecar


def _write_dataset(frame, sidecar, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    frame.to_csv(directory / "data.csv", index=False, float_format="%.17g", lineterminator="\n")
    (directory / "data.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def _read_dataset(path: Path):
    frame = pd.read_csv(path, float_precision="round_trip")
    if "y" not in frame:
        raise ConfigurationError(f"{path}: no 'y' column")
    side = path.with_suffix(".json")
    sidecar = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return frame, sidecar


def load_data(cfg: dict, base: Path):
    """Observations for the run: ``y`` array, or :class:`BlowflyData` for the blowfly model."""
    data_cfg = cfg.get("data", {"simulate": {}})
    if "path" in data_cfg:
        p = Path(data_cfg["path"])
        frame, sidecar = _read_dataset(p if p.is_absolute() else base / p)
    else:
        frame, sidecar = simulate_dataset(cfg)
    y = frame["y"].to_numpy(dtype=float)
    if cfg["model"]["name"] == "blowfly":
        if "eps" not in sidecar or "e" not in sidecar:
            raise ConfigurationError("blowfly data needs eps and e in its JSON sidecar")
        data = BlowflyData(y, sidecar["eps"], sidecar["e"], sidecar.get("tau", 5),
                           sidecar.get("n0", 50.0))
        trunc = data_cfg.get("simulate", {}).get("truncate")
        return (data.truncate(trunc) if trunc else data), frame, sidecar
    trunc = data_cfg.get("simulate", {}).get("truncate")
    return (y[:trunc] if trunc else y), frame, sidecar


class ChainWriter:
    """Streams one chain to CSV: every iteration's parameters, states on retained rows."""

    def __init__(self, path: Path, param_names, state_names):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(["iteration", *param_names, *state_names])
        self._n_states = len(state_names)

    def __call__(self, m, theta_vec, states):
        row = [m, *(repr(float(v)) for v in theta_vec)]
        if states is None:
            row.extend([""] * self._n_states)
        else:
            row.extend(repr(float(v)) for v in states)
        self._w.writerow(row)

    def close(self):
        self._fh.close()


def read_chain(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _names(cfg, data):
    name = cfg["model"]["name"]
    if name == "blowfly":
        T, tau = data.n_times, data.tau
        return (("delta", "P", "beta_eps", "beta_e", "phi"),
                tuple(f"S{i + 1}" for i in range(T)) + tuple(f"R{i + 1}" for i in range(tau, T)))
    return type(registry(name).theta).names, tuple(f"x{t + 1}" for t in range(len(data)))


def run_one_chain(cfg: dict, data, chain: int, path: Path) -> dict:
    """Run chain ``chain`` of a resolved config, streaming samples to ``path``."""
    name = cfg["model"]["name"]
    entry = registry(name)
    run = cfg["run"]
    n_iter, thin = run["iterations"], run["thin"]
    sampler = cfg["sampler"]
    rng = chain_stream(run["seed"], chain)
    theta = _theta(cfg)
    params, states = _names(cfg, data)
    sink = ChainWriter(path, params, states)
    try:
        if sampler == "pmpmh":
            pm = cfg["pmpmh"]
            proposal = WithinCellProposal(pm["tail_proposal"]["variance"],
                                          pm["tail_proposal"]["poisson_mean"])
        else:
            bl = cfg["baseline"]
        if name == "blowfly" and sampler == "pmpmh":
            gridder = blowfly_grid(pm["N"], pm["proportionality"], pm["q"])
            out = run_blowfly_chain(data, theta, n_iter, rng, gridder, proposal,
                                    pm["block_size"], pm["overlap"], thin=thin, sink=sink)
        elif name == "blowfly":
            out = run_blowfly_particle_gibbs(data, theta, bl["particles"], bl["threshold"],
                                             n_iter, rng, bl["ancestor_sampling"], bl["mode"],
                                             thin=thin, sink=sink)
        else:
            fixed = cfg["model"].get("fixed_theta") or entry.updater is None
            updater = None if fixed else entry.updater()
            if sampler == "pmpmh":
                gridder = make_gridder(pm["approach"], pm["N"], pm.get("span"), pm.get("sigma"),
                                       pm.get("proportionality"), pm.get("q"))
                blocks = BlockScheme(len(data), pm["block_size"], pm["overlap"])
                out = run_chain(entry.spec, data, updater, gridder, proposal, blocks, n_iter,
                                rng, theta, thin=thin, sink=sink)
            else:
                runner = run_pgas if bl["ancestor_sampling"] else run_pg
                out = runner(entry.spec, data, updater, bl["particles"], bl["threshold"],
                             n_iter, rng, theta, thin=thin, sink=sink)
    finally:
        sink.close()
    return {
        "chain": chain,
        "file": path.name,
        "wall_time": out.wall_time,
        "iterations": out.n_iter,
        "acceptance_rates": dict(zip(out.block_labels, out.acceptance_rates.tolist())),
        "log_posterior_finite": bool(np.all(np.isfinite(out.log_posterior))),
    }


def _chain_job(args):
    cfg, data, chain, path = args
    return run_one_chain(cfg, data, chain, Path(path))


def chain_outputs_from_files(directory: Path, manifest: dict) -> list:
    """Rebuild :class:`ChainOutput` objects from the chain CSVs of a run."""
    outputs = []
    for entry in manifest["chains"]:
        frame = read_chain(directory / entry["file"])
        params = manifest["param_names"]
        state_cols = [c for c in frame.columns if c not in ("iteration", *params)]
        kept = frame[state_cols].notna().all(axis=1) if state_cols else frame["iteration"] < 0
        outputs.append(ChainOutput(
            param_names=tuple(params),
            state_names=tuple(state_cols),
            theta=frame[params].to_numpy(dtype=float),
            states=frame.loc[kept, state_cols].to_numpy(dtype=float),
            state_iterations=frame.loc[kept, "iteration"].to_numpy(dtype=np.int64),
            log_posterior=np.zeros(len(frame)),
            accepted=np.zeros(0),
            proposed=np.zeros(0),
            wall_time=entry["wall_time"],
        ))
    return outputs


def _versions() -> dict:
    try:
        own = metadata.version("pmpmh")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"pmpmh": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__}


def cmd_run(config_path, seed=None, chains=None, quiet=False) -> int:
    cfg = load_config(config_path)
    run = cfg.setdefault("run", {})
    if seed is not None:
        run["seed"] = seed
    if chains is not None:
        run["chains"] = chains
    validate_config(cfg)
    resolve_defaults(cfg, str(config_path))
    burn_in = run["burn_in"]
    base = Path(config_path).resolve().parent
    out_dir = Path(cfg["output"]["directory"])
    out_dir = out_dir if out_dir.is_absolute() else base / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    data, frame, sidecar = load_data(cfg, base)
    _write_dataset(frame, sidecar, out_dir)
    params, _ = _names(cfg, data)
    jobs = [(cfg, data, c, str(out_dir / f"chain_{c}.csv")) for c in range(run["chains"])]
    workers = min(run["workers"], len(jobs))
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_chain_job, jobs))
        else:
            results = []
            for job in jobs:
                results.append(_chain_job(job))
                if not quiet:
                    log.info("chain %d done in %.1f s", job[2], results[-1]["wall_time"])
    except PMPMHError as exc:
        dump = {"error": type(exc).__name__, "message": str(exc),
                "traceback": traceback.format_exc()}
        payload = getattr(exc, "log_weights", None)
        if payload is not None:
            dump["log_weights"] = np.asarray(payload).tolist()
        (out_dir / "error.json").write_text(json.dumps(dump, indent=2) + "\n", encoding="utf-8")
        raise
    manifest = {
        "seed": run["seed"],
        "config_hash": config_hash(cfg),
        "config": cfg,
        "model": cfg["model"]["name"],
        "sampler": cfg.get("sampler", "pmpmh"),
        "param_names": list(params),
        "burn_in": burn_in,
        "versions": _versions(),
        "data": {"file": "data.csv", "sidecar": "data.json"},
        "chains": results,
        "summary": {"csv": "summary.csv", "text": "summary.txt"},
    }
    outputs = chain_outputs_from_files(out_dir, manifest)
    summary = summarize(outputs, burn_in)
    summary.to_csv(out_dir / "summary.csv", float_format="%.17g", lineterminator="\n")
    (out_dir / "summary.txt").write_text(summary.to_string() + "\n", encoding="utf-8")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")
    if not quiet:
        print(f"wrote {len(results)} chain(s) to {out_dir}")
    return 0


def cmd_simulate(config_path, seed=None, quiet=False) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.setdefault("data", {}).setdefault("simulate", {})["seed"] = seed
    if "path" in cfg.get("data", {}):
        raise ConfigError("data/path: simulate needs a data/simulate section", str(config_path))
    base = Path(config_path).resolve().parent
    out_dir = Path(cfg["output"]["directory"])
    out_dir = out_dir if out_dir.is_absolute() else base / out_dir
    frame, sidecar = simulate_dataset(cfg)
    _write_dataset(frame, sidecar, out_dir)
    if not quiet:
        print(f"wrote {len(frame)} rows to {out_dir / 'data.csv'}")
    return 0


def _fmt_ess(v) -> str:
    return "-" if not np.isfinite(v) else f"{int(round(v / 100.0) * 100)}"


def _fmt_rate(v) -> str:
    return "-" if not np.isfinite(v) else f"{v:.2f}"


def report_table(directory) -> pd.DataFrame:
    """One row per run found under ``directory`` (raw, unrounded values)."""
    directory = Path(directory)
    manifests = sorted(directory.rglob("manifest.json"))
    if not manifests:
        raise ConfigurationError(f"no manifest.json under {directory}")
    rows = []
    for mpath in manifests:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        outputs = chain_outputs_from_files(mpath.parent, manifest)
        summary = summarize(outputs, manifest.get("burn_in", 0))
        avg = average_ess(summary)
        seconds = sum(c["wall_time"] for c in manifest["chains"])
        params = summary[(summary["kind"] == "parameter") & ~summary["degenerate"]]
        rhat = float(params["rhat"].max()) if len(params) and len(outputs) > 1 else np.nan
        cfg = manifest.get("config", {})
        pm = cfg.get("pmpmh", {})
        rows.append({
            "run": str(mpath.parent.relative_to(directory)) if mpath.parent != directory else ".",
            "model": manifest.get("model"),
            "sampler": manifest.get("sampler"),
            "approach": pm.get("approach") if manifest.get("sampler") == "pmpmh" else None,
            "N": pm.get("N") if manifest.get("sampler") == "pmpmh" else None,
            "chains": len(outputs),
            "wall_time": seconds,
            "rhat_max": rhat,
            "converged": not (rhat > RHAT_THRESHOLD),
            "ess_params": avg["parameters"]["ess"],
            "ess_states": avg["states"]["ess"],
            "ess_all": avg["all"]["ess"],
            "ess_per_s": avg["all"]["ess"] / seconds if seconds > 0 else np.nan,
        })
    return pd.DataFrame(rows)


def format_report(table: pd.DataFrame) -> str:
    shown = table[["run", "model", "sampler", "approach", "N", "chains", "rhat_max"]].copy()
    shown["approach"] = shown["approach"].map(lambda v: "-" if pd.isna(v) else str(int(v)))
    shown["N"] = shown["N"].map(lambda v: "-" if pd.isna(v) else str(int(v)))
    shown["rhat_max"] = table["rhat_max"].map(lambda v: "n/a" if pd.isna(v) else f"{v:.3f}")
    for col in ("ess_params", "ess_states", "ess_all"):
        shown[col] = [_fmt_ess(v) if ok else "-" for v, ok in zip(table[col], table["converged"])]
    shown["ess_per_s"] = [_fmt_rate(v) if ok else "-"
                          for v, ok in zip(table["ess_per_s"], table["converged"])]
    return shown.to_string(index=False)


def cmd_report(directory, quiet=False) -> int:
    table = report_table(directory)
    directory = Path(directory)
    table.to_csv(directory / "report.csv", index=False, float_format="%.17g", lineterminator="\n")
    text = format_report(table)
    (directory / "report.txt").write_text(text + "\n", encoding="utf-8")
    if not quiet:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmpmh", description=__doc__.splitlines()[0])
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the chains of a config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, help="override run.seed")
    p_run.add_argument("--chains", type=int, help="override run.chains")
    p_sim = sub.add_parser("simulate", help="write a simulated dataset")
    p_sim.add_argument("config")
    p_sim.add_argument("--seed", type=int, help="override data.simulate.seed")
    p_rep = sub.add_parser("report", help="tabulate ESS over completed runs")
    p_rep.add_argument("directory")
    for p in (p_run, p_sim, p_rep):
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.chains, args.quiet)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.seed, args.quiet)
        return cmd_report(args.directory, args.quiet)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PMPMHError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
