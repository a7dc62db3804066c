import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy
import torch

from vortexlab.errors import ConfigError, VortexLabError
from vortexlab.geometry import SurfaceSpec

SURFACE_KINDS = ("flat_torus", "unit_sphere", "mesh", "ellipsoid", "torus_of_revolution")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
NEAREST_LATTICE = "nearest_lattice"


@dataclass(frozen=True)
class PotentialSpec:
    name: str = "gl"


@dataclass(frozen=True)
class VortexSpec:
    points: Tuple[Tuple[float, ...], ...]
    degrees: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class RunConfig:
    surface: SurfaceSpec
    potential: PotentialSpec = PotentialSpec()
    vortices: Optional[VortexSpec] = None
    phi: Union[str, Tuple[float, ...]] = NEAREST_LATTICE
    epsilons: Tuple[float, ...] = ()
    options: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    out: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def option(self, key: str, default=None):
        return self.options.get(key, default)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("this command is stochastic: pass --seed or set \"seed\" in the config", module="cli")
        return int(self.seed)


def config_hash(raw: Dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_config(raw: Dict) -> RunConfig:
    if not isinstance(raw, dict) or "surface" not in raw:
        raise ConfigError("config needs a \"surface\" object", module="cli")
    surface = dict(raw["surface"])
    if surface.get("kind") not in SURFACE_KINDS:
        raise ConfigError(f"surface kind must be one of {SURFACE_KINDS}, got {surface.get('kind')!r}", module="cli")
    try:
        spec = SurfaceSpec.from_dict(surface)
    except (TypeError, VortexLabError) as e:
        raise ConfigError(f"invalid surface spec: {e}", module="cli")

    try:
        potential = PotentialSpec(**raw.get("potential", {}))
    except TypeError as e:
        raise ConfigError(f"invalid potential spec: {e}", module="cli")
    if potential.name not in ("gl", "mm"):
        raise ConfigError(f"potential must be \"gl\" or \"mm\", got {potential.name!r}", module="cli")

    vortices = None
    if raw.get("vortices") is not None:
        v = raw["vortices"]
        points = tuple(tuple(float(c) for c in p) for p in v.get("points", []))
        degrees = tuple(int(d) for d in v.get("degrees", []))
        if len(points) != len(degrees):
            raise ConfigError("vortices.points and vortices.degrees differ in length", module="cli")
        vortices = VortexSpec(points=points, degrees=degrees)

    phi = raw.get("phi", NEAREST_LATTICE)
    if isinstance(phi, str):
        if phi != NEAREST_LATTICE:
            raise ConfigError(f"phi must be a list of floats or {NEAREST_LATTICE!r}", module="cli")
    else:
        phi = tuple(float(x) for x in phi)

    epsilons = tuple(float(e) for e in raw.get("epsilons", ()))
    if any(e <= 0 for e in epsilons):
        raise ConfigError("epsilons must be positive", module="cli")
    seed = raw.get("seed")
    return RunConfig(surface=spec, potential=potential, vortices=vortices, phi=phi, epsilons=epsilons,
                     options=dict(raw.get("options", {})), seed=None if seed is None else int(seed),
                     out=raw.get("out"), raw=raw)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}", module="cli")
    return parse_config(raw)


def log_level() -> int:
    name = os.environ.get("VORTEXLAB_LOG", "INFO").upper()
    if name not in LOG_LEVELS:
        logging.warning(f"VORTEXLAB_LOG={name!r} is not a log level; using INFO")
        name = "INFO"
    return getattr(logging, name)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def write_json(path: str, payload: Dict, config_hash_value: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    body = dict(_jsonable(payload))
    body["config_hash"] = config_hash_value
    with open(path, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)


def write_csv(path: str, df: pd.DataFrame, config_hash_value: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# config_hash={config_hash_value}\n")
        df.to_csv(f, index=False, float_format="%.17g")


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_metadata(out_dir: str, started: datetime, threads: int, seed: Optional[int], command: str,
                   config_hash_value: str):
    payload = {
        "command": command,
        "started_utc": started.isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "threads": threads,
        "seed": seed,
        "python": platform.python_version(),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "torch": torch.__version__,
                     "pandas": pd.__version__},
    }
    write_json(os.path.join(out_dir, "run_metadata.json"), payload, config_hash_value)
