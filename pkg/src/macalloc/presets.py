"""Named experiment configurations.

The published experiments do not give their Markov chains, horizons or
controller constants, so these are choices made here: two users with
independent birth-death chains on geometrically spaced gains, tuned to a
target stationary std/mean ratio. They reproduce qualitative orderings only.
"""
from __future__ import annotations

import copy

from .channel import FadingProcess, geometric_chain

DEFAULT_UTILITY = {"kind": "alpha_fair", "weights": [1.5, 1.0], "alpha": 2.0, "r_min": 1e-3}
DEFAULT_POWERS = [4.0, 4.0]

HIGH_VARIATION = 1.22
LOW_VARIATION = 0.13

# queue controller constants; small K keeps queues short, D caps admission
QUEUE_DISTANCE = {"K": 0.5, "D": 2.0}
QUEUE_UPLOAD = {"K": 1.0, "D": 2.0}

UPLOAD_FILES = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]


def variation_process(ratio: float, n_levels: int = 4, stay: float = 0.7,
                      m: int = 2) -> FadingProcess:
    return FadingProcess.iid(geometric_chain(1.0, ratio, n_levels, stay), m)


def tracking_process() -> FadingProcess:
    """Slowly varying fine-grained chain, so the tracking recipes give
    ``k >= 1`` and threshold overshoot stays small relative to ``gamma``."""
    return variation_process(LOW_VARIATION, n_levels=16, stay=0.8)


def _base(exp_id, process, horizon, replications, seed, policies):
    return {
        "id": exp_id,
        "process": process.to_dict(),
        "powers": list(DEFAULT_POWERS),
        "noise": 1.0,
        "utility": dict(DEFAULT_UTILITY),
        "policies": policies,
        "horizon": horizon,
        "replications": replications,
        "seed": seed,
    }


def distance_experiment(ratio: float = HIGH_VARIATION, horizon: int = 1000,
                        replications: int = 20, seed: int = 0) -> dict:
    """Greedy against the queue baseline, distance of average rates to R*."""
    return _base(f"distance_{ratio:g}", variation_process(ratio), horizon, replications,
                 seed, [{"name": "greedy"}, {"name": "queue", **QUEUE_DISTANCE}])


def tracking_experiment(horizon: int = 10_000, replications: int = 20, seed: int = 0) -> dict:
    """Greedy, block and threshold policies with recipe parameters from
    constants estimated on the chain's regions."""
    return _base("tracking", tracking_process(), horizon, replications, seed,
                 [{"name": "greedy"},
                  {"name": "approximate", "recipe": "worst_case"},
                  {"name": "improved", "recipe": "average_case"}])


def upload_scenario(files=None, ratio: float = HIGH_VARIATION, replications: int = 20,
                    seed: int = 0) -> dict:
    f = UPLOAD_FILES if files is None else files
    return {
        "id": f"upload_{ratio:g}",
        "process": variation_process(ratio).to_dict(),
        "powers": list(DEFAULT_POWERS),
        "noise": 1.0,
        "utility": dict(DEFAULT_UTILITY),
        "file_sizes": [float(x) for x in f],
        "users_share_file_size": True,
        "policies": [{"name": "greedy"}, {"name": "queue", **QUEUE_UPLOAD}],
        "replications": replications,
        "seed": seed,
    }


PRESETS = {
    "distance_high": lambda: distance_experiment(HIGH_VARIATION),
    "distance_low": lambda: distance_experiment(LOW_VARIATION),
    "tracking": tracking_experiment,
    "upload": upload_scenario,
}


def get_preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name]())
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
