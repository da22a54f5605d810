"""Experiment definitions from TOML or JSON documents.

Recognised keys (all optional)::

    preset = "table2"            # table2 | init | prior | gauss | table5
    seed = 0
    trials = 50
    sigmas = [0.005, 0.01, 0.05, 0.08]
    spaces = [10.0]
    algorithms = ["alg1", "alg2", "alg4"]
    robots = 4
    instants = 12
    disp_ratio = 1.0

    [window]      # window, drop, eval_instants, nde_samples, nde_repeats, nde_pilot, mdn_epochs, mdn_patience
    [baselines]   # n_particles, filter_prior_level
    [robust]      # RobustConfig fields
    [nde]         # BenchmarkConfig fields (seed, samples, chains, steps, burn, bins)

Keys set on the command line override the document.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .simulator.experiments import PRESETS, RobustConfig
from .simulator.montecarlo import ExperimentConfig
from .simulator.nde_benchmark import BenchmarkConfig

_TOP = {"preset", "seed", "trials", "sigmas", "spaces", "algorithms", "robots", "instants", "disp_ratio",
        "window", "baselines", "robust", "nde"}
_WINDOW = {"window", "drop", "eval_instants", "nde_samples", "nde_repeats", "nde_pilot", "mdn_epochs", "mdn_patience"}
_BASELINES = {"n_particles", "filter_prior_level"}


def load_document(path) -> dict:
    """Parse a TOML file, or JSON when the suffix is .json."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw.decode())
        else:
            doc = tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table")
    return doc


def merge(doc: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict:
    out = dict(doc)
    for k, v in overrides.items():
        if v is None:
            continue
        if isinstance(v, Mapping):
            out[k] = {**dict(out.get(k, {})), **v}
        else:
            out[k] = v
    return out


def _check_keys(where: str, got: Mapping, allowed) -> None:
    extra = set(got) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def experiment_config(doc: Mapping[str, Any]) -> ExperimentConfig:
    """Build and validate an ExperimentConfig."""
    _check_keys("config", doc, _TOP)
    kw: dict = {}
    for key in ("seed", "trials", "instants"):
        if key in doc:
            kw[key] = int(doc[key])
    if "disp_ratio" in doc:
        kw["disp_ratio"] = float(doc["disp_ratio"])
    for key in ("sigmas", "spaces"):
        if key in doc:
            vals = doc[key] if isinstance(doc[key], (list, tuple)) else [doc[key]]
            kw[key] = tuple(float(v) for v in vals)
    if "algorithms" in doc:
        vals = doc["algorithms"]
        kw["algorithms"] = tuple(str(v) for v in (vals.split(",") if isinstance(vals, str) else vals))
    win = dict(doc.get("window", {}))
    _check_keys("[window]", win, _WINDOW)
    kw.update({k: int(v) for k, v in win.items()})
    base = dict(doc.get("baselines", {}))
    _check_keys("[baselines]", base, _BASELINES)
    if "n_particles" in base:
        kw["n_particles"] = int(base["n_particles"])
    if "filter_prior_level" in base:
        kw["filter_prior_level"] = float(base["filter_prior_level"])
    try:
        if "robots" in doc:
            kw["scenario"] = dataclasses.replace(ExperimentConfig().scenario, n_robots=int(doc["robots"]))
        preset = doc.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base_cfg = PRESETS[preset]()
            return dataclasses.replace(base_cfg, **kw)
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _sub(cls, doc: Mapping, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(where, doc, names)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def robust_config(doc: Mapping[str, Any]) -> RobustConfig:
    sub = dict(doc.get("robust", {}))
    if "seed" in doc and "seed" not in sub:
        sub["seed"] = int(doc["seed"])
    if "trials" in doc and "trials" not in sub:
        sub["trials"] = int(doc["trials"])
    return _sub(RobustConfig, sub, "[robust]")


def benchmark_config(doc: Mapping[str, Any]) -> BenchmarkConfig:
    sub = dict(doc.get("nde", {}))
    if "seed" in doc and "seed" not in sub:
        sub["seed"] = int(doc["seed"])
    return _sub(BenchmarkConfig, sub, "[nde]")


def config_hash(doc: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON form of the effective document."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def load_experiment(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None):
    doc = load_document(path) if path else {}
    doc = merge(doc, overrides or {})
    return experiment_config(doc), doc
