"""JSON run-configuration schema and validation for the CLI.

Configs are validated in full before any compute starts; unknown keys are
rejected at every level, and validation errors name the offending key path.
"""

import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_INT = {"type": "integer"}
_NUM = {"type": "number"}
_STR = {"type": "string"}
_BOOL = {"type": "boolean"}

_LAMP = {
    "type": "array",
    "minItems": 4,
    "maxItems": 4,
    "items": _NUM,
}
_LAMP_SETS = {"type": "array", "items": {"type": "array", "items": _LAMP}}

_SHAPE2 = {"type": "array", "minItems": 2, "maxItems": 2, "items": _INT}

_NOISE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["gaussian", "poisson_gaussian"]},
        "sigma": _NUM,
        "peak": {"type": ["number", "null"]},
    },
}

_PSF = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["random_spots", "gaussian_speckle", "multifocal_like"]},
        "shape": _SHAPE2,
        "params": {"type": "object"},
        "seed": _INT,
        "path": _STR,
    },
}

_DATASET = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_records", "scene_shape", "psf"],
    "properties": {
        "n_records": _INT,
        "scene_shape": _SHAPE2,
        "channels": _INT,
        "psf": _PSF,
        "noise": _NOISE,
        "ambient_level": _NUM,
        "train_lamp_sets": _LAMP_SETS,
        "test_lamp_sets": _LAMP_SETS,
        "n_frames": _INT,
        "split_fraction": _NUM,
        "scene_kind": {"enum": ["texture", "shapes", "mixed"]},
        "scene_dir": {"type": ["string", "null"]},
    },
}

_CNN = {
    "type": ["object", "null"],
    "additionalProperties": False,
    "required": ["in_channels", "widths"],
    "properties": {
        "in_channels": _INT,
        "widths": {"type": "array", "items": _INT, "minItems": 1},
        "seed": _INT,
        "slope": _NUM,
    },
}

_INVERTER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["wiener", "admm", "le_admm", "train_inv"]},
        "n_iter": _INT,
        "n_unrolled": _INT,
        "mu1": _NUM,
        "mu2": _NUM,
        "mu3": _NUM,
        "tau": _NUM,
        "tik_eps": _NUM,
        "nonneg": _BOOL,
    },
}

_PIPELINE_INLINE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "background_mode": {"enum": ["none", "direct_sub", "learned_sub", "concatenate"]},
        "background_net": _CNN,
        "pre": _CNN,
        "post": _CNN,
        "inverter": _INVERTER,
        "clamp_output": _BOOL,
        "concat_order": {"type": "array", "items": _STR},
        "train_inv_shape": {"type": "array", "items": _INT},
    },
}

_PIPELINE = {"oneOf": [_PIPELINE_INLINE, _STR]}

_TRAIN_CFG = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lr0": _NUM,
        "beta1": _NUM,
        "beta2": _NUM,
        "eps": _NUM,
        "weight_decay": _NUM,
        "warmup_frac": _NUM,
        "epochs": _INT,
        "batch_size": _INT,
        "seed": _INT,
    },
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "required": ["manifest", "pipeline"],
    "properties": {
        "manifest": _STR,
        "pipeline": _PIPELINE,
        "config": _TRAIN_CFG,
        "trainable": {"type": ["array", "null"], "items": _STR},
        "max_steps": {"type": ["integer", "null"]},
    },
}

_EVALUATE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["manifest", "pipelines"],
    "properties": {
        "manifest": _STR,
        "split": {"enum": ["train", "test"]},
        "pipelines": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "pipeline"],
                "properties": {"name": _STR, "pipeline": _PIPELINE},
            },
        },
    },
}

_RECONSTRUCT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["manifest", "pipeline"],
    "properties": {
        "manifest": _STR,
        "pipeline": _PIPELINE,
        "split": {"enum": ["train", "test"]},
        "save_png": _BOOL,
        "max_records": {"type": ["integer", "null"]},
    },
}

_MISMATCH = {
    "type": "object",
    "additionalProperties": False,
    "required": ["psf", "grid_shape", "epsilons"],
    "properties": {
        "psf": _PSF,
        "grid_shape": _SHAPE2,
        "epsilons": {"type": "array", "items": _NUM, "minItems": 1},
        "delta_l1": _NUM,
        "mode": {"enum": ["raw", "direct_sub"]},
        "noise_sigma": _NUM,
        "background_level": _NUM,
        "n_frames": _INT,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _INT,
        "out_dir": _STR,
        "dataset": _DATASET,
        "train": _TRAIN,
        "evaluate": _EVALUATE,
        "reconstruct": _RECONSTRUCT,
        "mismatch": _MISMATCH,
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def validate_config(doc):
    """Validate a parsed config document; raises ConfigError naming the key."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise ConfigError(f"invalid config at {e.json_path}: {e.message}")
    return doc


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return validate_config(doc)


def require_section(doc, name):
    if name not in doc:
        raise ConfigError(f"config is missing the {name!r} section required by this command")
    return doc[name]


def config_hash(doc):
    """SHA-256 of the canonical JSON encoding."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
