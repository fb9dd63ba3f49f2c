"""Run configuration: JSON load, validation, dotted-path overrides."""

from __future__ import annotations

import copy
import json
import os


class ConfigError(Exception):
    pass


# Default corpus classes: the eight contact-making classes. No-grasp and Null
# are valid generation targets but produce hover poses, so they are opt-in.
CONTACT_CLASSES = ["Handle-grasp", "Press", "Lift", "Wrap-grasp", "Twist",
                   "Support", "Pull", "Lever"]

DEFAULTS = {
    "seed": 0,
    "dim": 64,          # shared feature width d and latent size L
    "heads": 4,
    "schedule": {"steps": 100, "beta_start": 1e-4, "beta_end": 0.02},
    "ddim": {"steps": 20, "eta": 0.0},
    "losses": {
        "focal_alpha": 0.25, "focal_gamma": 2.0, "lambda_dice": 1.0,
        "lambda_param": 1.0, "lambda_mesh": 1.0, "beta_kl": 1e-4,
        "lambda_consistency": 1.0, "lambda_contact": 1.0,
        "lambda_penetration": 1.0, "tau": 0.005,
    },
    "data": {
        "root": None, "classes": CONTACT_CLASSES, "per_class": 8,
        "n_points": 256, "seed_label_frac": 0.5, "max_rounds": 10,
    },
    "eval": {"voxel_resolution": 0.002, "k": 20},
    # Stage budgets target the 64-sample corpus on a single core: the VAE and
    # diffusion stages run whole-corpus batches with a geometric lr decay
    # (final lr a few 1e-4); mesh supervision stays off in the VAE stage (the
    # parameter loss already pins the hand) and on in the DAM stage.
    "stages": {
        "affordance": {"epochs": 40, "lr": 3e-3, "batch": 8, "hidden": 64},
        "vae": {"epochs": 8000, "lr": 3e-3, "batch": 64, "lr_decay": 0.99975,
                "lambda_mesh": 0.0},
        "diffusion": {"epochs": 24000, "lr": 2e-3, "batch": 64,
                      "lr_decay": 0.99988, "train_encoder": False},
        "dam": {"epochs": 4, "lr": 1e-3, "batch": 8},
        "classifier": {"epochs": 300, "lr": 3e-3, "batch": 8, "n_points": 128,
                       "dim": 128},
    },
}


def default_config():
    return copy.deepcopy(DEFAULTS)


def load_config(path=None):
    cfg = default_config()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            user = json.load(fh)
        _deep_update(cfg, user)
    return cfg


def _deep_update(base, user):
    for k, v in user.items():
        if k not in base:
            raise ConfigError(f"unknown config key: {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def set_override(cfg, assignment):
    """Apply one "dotted.path=value" override; values parse as JSON literals
    with a plain-string fallback."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config path: {key!r}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config path: {key!r}")
    node[parts[-1]] = value


def validate_config(cfg):
    from .dataengine import AFFORDANCE_CLASSES

    if cfg["dim"] <= 0:
        raise ConfigError("dim must be positive")
    if cfg["heads"] <= 0 or cfg["dim"] % cfg["heads"] != 0:
        raise ConfigError(f"dim {cfg['dim']} must be divisible by heads {cfg['heads']}")
    sch = cfg["schedule"]
    if sch["steps"] < 1:
        raise ConfigError("schedule.steps must be >= 1")
    if not 0 < sch["beta_start"] <= sch["beta_end"] < 1:
        raise ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1")
    if cfg["ddim"]["steps"] < 1 or cfg["ddim"]["steps"] > sch["steps"]:
        raise ConfigError("ddim.steps must be in [1, schedule.steps]")
    if not 0.0 <= cfg["ddim"]["eta"]:
        raise ConfigError("ddim.eta must be non-negative")
    for key, val in cfg["losses"].items():
        if val < 0:
            raise ConfigError(f"losses.{key} must be non-negative")
    if cfg["losses"]["tau"] <= 0:
        raise ConfigError("losses.tau must be positive")
    data = cfg["data"]
    for cls in data["classes"]:
        if cls not in AFFORDANCE_CLASSES:
            raise ConfigError(f"unknown affordance class {cls!r}")
    if data["per_class"] < 1 or data["n_points"] < 8:
        raise ConfigError("data.per_class must be >= 1 and n_points >= 8")
    if not 0.0 < data["seed_label_frac"] <= 1.0:
        raise ConfigError("data.seed_label_frac must be in (0, 1]")
    if data["root"] is not None and not os.path.isdir(data["root"]):
        raise ConfigError(f"data.root does not exist: {data['root']}")
    for stage, sc in cfg["stages"].items():
        if sc["epochs"] < 1 or sc["lr"] <= 0 or sc["batch"] < 1:
            raise ConfigError(f"stages.{stage}: epochs/batch must be >= 1, lr > 0")
        if not 0.0 < sc.get("lr_decay", 1.0) <= 1.0:
            raise ConfigError(f"stages.{stage}.lr_decay must be in (0, 1]")
    if cfg["eval"]["voxel_resolution"] <= 0:
        raise ConfigError("eval.voxel_resolution must be positive")
    return cfg


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
