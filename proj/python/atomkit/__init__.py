"""Trajectory operator training and molecule curation, backed by a C++ core."""

import json as _json

from . import _core
from ._core import (
    AtomModel as _AtomModel,
    CanonicalizationDegenerate,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericalError,
    SmilesError,
    Trajectory,
    canonicalize,
    fingerprint_bits,
    load_trajectory,
    parse_smiles,
    radius_graph,
    random_rotation,
    rwpe,
    s2s_mse,
    s2t_mse,
    stability_metrics,
    tanimoto,
)

__all__ = [
    "AtomModel",
    "CanonicalizationDegenerate",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "NumericalError",
    "SmilesError",
    "Trajectory",
    "canonicalize",
    "fingerprint_bits",
    "generate_toy_trajectory",
    "load_trajectory",
    "parse_smiles",
    "radius_graph",
    "random_rotation",
    "rwpe",
    "s2s_mse",
    "s2t_mse",
    "select_candidates",
    "stability_metrics",
    "sweep_steps",
    "tanimoto",
    "train_single_task",
]


class AtomModel(_AtomModel):
    """ATOM model. `config` holds model-config keys; omitted keys keep defaults."""

    def __init__(self, config=None, seed=0):
        super().__init__(_json.dumps(config or {}), seed)

    @property
    def config(self):
        return _json.loads(self.config_json)


def generate_toy_trajectory(**config):
    """Toy trajectory; keywords are toy-config keys (potential, n_atoms, steps, ...)."""
    return _core.generate_toy_trajectory(_json.dumps(config))


def train_single_task(trajectory, model, **config):
    """Train in place and return the metrics report as a dict."""
    return _core.train_single_task(trajectory, model, _json.dumps(config))


def sweep_steps(model, trajectory, steps, horizon, begin=0, end=0, stride=1):
    return _core.sweep_steps(model, trajectory, list(steps), horizon, begin, end, stride)


def _pairs(items):
    out = []
    for item in items:
        if isinstance(item, str):
            out.append((item, ""))
        else:
            smiles, name = item
            out.append((smiles, name))
    return out


def select_candidates(seeds, pool, preset="main", **overrides):
    """Screen `pool` against `seeds` (SMILES strings or (smiles, name) pairs).

    Returns (accepted, rejected) lists of dicts.
    """
    config = {"preset": preset} if preset else {}
    config.update(overrides)
    return _core.select_candidates(_pairs(seeds), _pairs(pool), _json.dumps(config))
