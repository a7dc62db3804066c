import json
import logging
import os
import sys
from datetime import datetime, timezone

import pandas as pd
import torch
from tqdm import tqdm

from vortexlab.cli import cmd_renorm, cmd_validate_expansion
from vortexlab.errors import VortexLabError
from vortexlab.geometry import make_surface
from vortexlab.io import log_level, parse_config, write_csv, write_metadata

THE_SCENARIOS = {
    'sphere': {
        'surface': {'kind': 'unit_sphere', 'subdivisions': 4},
        'vortices': {'points': [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], 'degrees': [1, 1]},
        'epsilons': [0.08, 0.04],
        'options': {'radii': [4e-2, 1e-2, 2.5e-3], 'init': 'planted'},
    },
    'torus-dipole': {
        'surface': {'kind': 'flat_torus', 'n': 64},
        'vortices': {'points': [[0.25, 0.25, 0.0], [0.75, 0.75, 0.0]], 'degrees': [1, -1]},
        'phi': 'nearest_lattice',
        # a dipole is not a minimizer on the torus: W and its quadrature only
        'options': {'radii': [4e-2, 1e-2, 2.5e-3], 'expansion': False},
    },
    'ellipsoid': {
        'surface': {'kind': 'ellipsoid', 'axes': [1.0, 1.0, 0.6], 'subdivisions': 4},
        'vortices': {'points': [[0.0, 0.0, 0.6], [0.0, 0.0, -0.6]], 'degrees': [1, 1]},
        'epsilons': [0.08, 0.04],
        'options': {'radii': [4e-2, 1e-2], 'init': 'planted'},
    },
}


def run_scenario(name: str, raw: dict, out: str):
    cfg = parse_config(raw)
    S = make_surface(cfg.surface)
    scenario_dir = os.path.join(out, name)
    os.makedirs(scenario_dir, exist_ok=True)
    started = datetime.now(timezone.utc)
    renorm = cmd_renorm(S, cfg, scenario_dir)
    expansion = {"iota": None}
    if cfg.option("expansion", True):
        expansion = cmd_validate_expansion(S, cfg, scenario_dir)
    write_metadata(scenario_dir, started, torch.get_num_threads(), cfg.seed, "validate", cfg.hash)
    return {"scenario": name, "W": renorm["W_closed"], "iota": expansion["iota"],
            "two_eps_relative_error": expansion.get("two_eps", {}).get("relative_error")}


def main(out: str = "validation", seed: int = 0) -> int:
    summary = []
    pbar = tqdm(THE_SCENARIOS.items(), desc="scenarios")
    for name, raw in pbar:
        print('#' * 20)
        print(f'Validation on {name}')
        print('#' * 20)
        try:
            summary.append(run_scenario(name, {**raw, 'seed': seed}, out))
            pbar.set_postfix({"last": name, "W": f"{summary[-1]['W']:.4f}"})
        except VortexLabError as e:
            logging.error(f'Failed scenario {name}: {e}')
            continue
    if summary:
        write_csv(os.path.join(out, "summary.csv"), pd.DataFrame(summary), "")
        print(json.dumps(summary, indent=2))
    return 0 if len(summary) == len(THE_SCENARIOS) else 3


if __name__ == '__main__':
    logging.basicConfig(format='%(asctime)s : %(message)s', level=log_level())
    sys.exit(main(*sys.argv[1:2]))
