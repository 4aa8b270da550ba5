"""World construction helpers and the world-file format.

A world file is JSON with fields ``dim``, ``modes`` (list of objects with
``id``, ``mean``, ``cov_scale``), ``prompts`` (label to mode-id/weight
mapping), and ``prior`` (label to probability). See the README for the
schema reference.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .oracle import Mode, OracleWorld, PromptEmbedding

__all__ = [
    "world_to_dict",
    "world_from_dict",
    "load_world",
    "dump_world",
    "unimodal_world",
    "two_mode_world",
    "three_view_world",
    "biased_three_view_world",
    "unbiased_three_view_world",
]


def world_to_dict(world: OracleWorld) -> dict:
    return {
        "dim": world.dim,
        "modes": [
            {"id": m.id, "mean": [float(v) for v in m.mean], "cov_scale": m.cov_scale}
            for m in world.modes
        ],
        "prompts": {
            label: {
                mode.id: float(w)
                for mode, w in zip(world.modes, emb.weights)
                if w != 0.0
            }
            for label, emb in world.prompts.items()
        },
        "prior": {label: float(p) for label, p in world.prior.items()},
    }


def world_from_dict(data: dict) -> OracleWorld:
    for key in ("dim", "modes", "prompts", "prior"):
        if key not in data:
            raise ValueError(f"world definition is missing field {key!r}")
    modes = tuple(
        Mode(id=m["id"], mean=np.asarray(m["mean"], dtype=float), cov_scale=float(m["cov_scale"]))
        for m in data["modes"]
    )
    mode_ids = [m.id for m in modes]
    prompts = {}
    for label, weights in data["prompts"].items():
        unknown = set(weights) - set(mode_ids)
        if unknown:
            raise ValueError(f"prompt {label!r} references unknown modes {sorted(unknown)}")
        w = np.array([float(weights.get(mid, 0.0)) for mid in mode_ids])
        prompts[label] = PromptEmbedding(w)
    prior = {label: float(p) for label, p in data["prior"].items()}
    return OracleWorld(dim=int(data["dim"]), modes=modes, prompts=prompts, prior=prior)


def load_world(path: str | Path) -> OracleWorld:
    with open(path) as f:
        return world_from_dict(json.load(f))


def dump_world(world: OracleWorld, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(world_to_dict(world), f, indent=2, sort_keys=True)
        f.write("\n")


def unimodal_world(
    mean=(2.0, -1.0), cov_scale: float = 1.0, label: str = "only", mode_id: str = "m0"
) -> OracleWorld:
    """Single mode, single prompt; conditional and unconditional coincide."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return OracleWorld(
        dim=mean.shape[0],
        modes=(Mode(mode_id, mean, cov_scale),),
        prompts={label: PromptEmbedding(np.array([1.0]))},
        prior={label: 1.0},
    )


def two_mode_world(
    separation: float = 8.0,
    cov_scale: float = 1.0,
    weights_a=(0.6, 0.4),
    weights_b=(0.2, 0.8),
    prior=(0.5, 0.5),
    dim: int = 2,
) -> OracleWorld:
    """Two symmetric modes on the first axis with two overlapping prompts."""
    half = separation / 2.0
    mu = np.zeros((2, dim))
    mu[0, 0], mu[1, 0] = -half, half
    return OracleWorld(
        dim=dim,
        modes=(Mode("left", mu[0], cov_scale), Mode("right", mu[1], cov_scale)),
        prompts={
            "a": PromptEmbedding(np.asarray(weights_a, dtype=float)),
            "b": PromptEmbedding(np.asarray(weights_b, dtype=float)),
        },
        prior={"a": float(prior[0]), "b": float(prior[1])},
    )


def three_view_world(
    front_weights,
    side_weights,
    back_weights,
    prior,
    radius: float = 6.0,
    cov_scale: float = 1.0,
) -> OracleWorld:
    """Front/side/back modes on a circle with the given prompt table.

    Weight vectors are ordered (front, side, back). Mode ids are fixed to
    ``front``, ``side``, ``back`` so view-sector scoring can find them.
    """
    modes = (
        Mode("front", np.array([radius, 0.0]), cov_scale),
        Mode("side", np.array([0.0, radius]), cov_scale),
        Mode("back", np.array([-radius, 0.0]), cov_scale),
    )
    return OracleWorld(
        dim=2,
        modes=modes,
        prompts={
            "front": PromptEmbedding(np.asarray(front_weights, dtype=float)),
            "side": PromptEmbedding(np.asarray(side_weights, dtype=float)),
            "back": PromptEmbedding(np.asarray(back_weights, dtype=float)),
        },
        prior={"front": float(prior[0]), "side": float(prior[1]), "back": float(prior[2])},
    )


def biased_three_view_world(
    back_front_bias: float = 0.7,
    side_front_bias: float = 0.2,
    side_back_mass: float = 0.2,
    front_side_mass: float = 0.1,
    prior=(0.14, 0.46, 0.40),
    radius: float = 6.0,
    cov_scale: float = 1.0,
) -> OracleWorld:
    """The canonical-view-biased benchmark world.

    The back-view conditional leaks ``back_front_bias`` of its mass onto the
    front mode (the canonical view); the side conditional leaks milder mass
    onto both neighbours. The prior is chosen so the unconditional mixture
    stays front-dominated while its front:back odds sit near the back
    conditional's, which keeps plain guidance from undoing the bias.
    """
    front = (1.0 - front_side_mass, front_side_mass, 0.0)
    side = (side_front_bias, 1.0 - side_front_bias - side_back_mass, side_back_mass)
    back = (back_front_bias, 0.0, 1.0 - back_front_bias)
    return three_view_world(front, side, back, prior, radius=radius, cov_scale=cov_scale)


def unbiased_three_view_world(
    radius: float = 6.0, cov_scale: float = 1.0, prior=(1 / 3, 1 / 3, 1 / 3)
) -> OracleWorld:
    """Each view prompt concentrates on its own mode; no canonical-view bias."""
    return three_view_world(
        (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), prior,
        radius=radius, cov_scale=cov_scale,
    )
