"""Run configuration: flat dotted keys, file + command-line overrides, hashing.

A config file is plain text with one ``key = value`` assignment per
line; values are JSON scalars (``true``, ``3``, ``0.5``, ``"text"``) and
unquoted strings are accepted.  ``#`` starts a comment.  Every command
re-resolves defaults -> file -> ``--set`` overrides and writes the
result next to its outputs, so a run directory always records exactly
the configuration that produced it.

Artifacts embed stage hashes computed from the keys that could change
them: ``data_hash`` covers ``data.*``/``split.*``, ``prior_hash`` adds
``prior.*`` and the seed, ``model_hash`` adds the model/MF settings.
Downstream commands compare hashes instead of trusting file names.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    # ingestion and filtering
    "data.path": "",
    "data.format": "tsv",            # tsv | jsonl
    "data.star_min": 1,
    "data.star_max": 5,
    "data.threshold": 3,             # positive iff rating > threshold
    "data.min_user_reviews": 5,
    "data.min_item_raters": 5,
    "data.english_filter": False,
    "data.english_min_ratio": 0.9,
    # user split and fold-in protocol
    "split.seed": 0,
    "split.train_frac": 0.8,
    "split.val_frac": 0.1,
    "split.test_frac": 0.1,
    "split.fold_in_fraction": 0.8,
    # user priors
    "prior.source": "none",          # embedding | lda | random | none
    "prior.embeddings_path": "",
    "prior.sigma_floor": 0.1,
    "prior.z_normalize": True,
    "prior.lda_topics": 300,
    "prior.lda_alpha": 0.0,          # <= 0 means 50 / topics
    "prior.lda_eta": 0.01,
    "prior.lda_iters": 200,
    "prior.lda_fold_in_iters": 25,
    # autoencoder family
    "model.mode": "mult_vae",        # mult_vae | hprior | rp | tr | dae | mf
    "model.n_latent": 300,
    "model.n_hidden": 600,
    "model.dropout": 0.5,
    "model.batch_size": 500,
    "model.epochs": 50,
    "model.beta_max": 1.0,
    "model.anneal_frac": 0.8,
    "model.gamma": 0.01,
    "model.lr": 0.001,
    "model.normalize_input": True,
    "model.log_sigma_clip": 10.0,
    "model.sample_at_eval": False,
    # matrix factorization baseline
    "mf.n_factors": 100,
    "mf.lr": 0.01,
    "mf.epochs": 30,
    "mf.batch_users": 1000,
    "mf.n_negatives": 4,
    "mf.l2": 0.0001,
    "mf.fold_in_reg": 0.01,
    # evaluation
    "eval.ndcg_k": 100,
    "eval.recall_ks": "20,50",
    "eval.split": "test",            # test | val
    # run-level
    "run.seed": 0,
    "run.out_dir": "runs/default",
}

_HASH_STAGES = {
    "data": ("data.", "split."),
    "prior": ("data.", "split.", "prior."),
    "model": ("data.", "split.", "prior.", "model.", "mf."),
}


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if isinstance(value, (int, float)):
            return int(value)
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return str(value)


def load_config_file(path) -> dict:
    assignments = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            assignments[key.strip()] = _parse_value(raw)
    return assignments


def resolve_config(path=None, overrides=()) -> dict:
    """Defaults, then the config file, then ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    layers = []
    if path is not None:
        layers.append(load_config_file(path))
    parsed = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parsed[key.strip()] = _parse_value(raw)
    layers.append(parsed)
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown configuration key {key!r}")
            cfg[key] = _coerce(key, value)
    return cfg


def stage_hash(cfg: dict, stage: str) -> str:
    prefixes = _HASH_STAGES[stage]
    subset = {k: v for k, v in cfg.items()
              if k.startswith(prefixes) or k == "run.seed"}
    blob = json.dumps(subset, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def recall_k_list(cfg: dict) -> list:
    try:
        ks = [int(k) for k in str(cfg["eval.recall_ks"]).split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"eval.recall_ks must be comma-separated ints, "
                          f"got {cfg['eval.recall_ks']!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("eval.recall_ks must contain positive ints")
    return ks


def write_resolved(cfg: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {json.dumps(cfg[key])}\n")
