"""Command-line pipeline: prepare, priors, train, eval, report, fixture.

Each command resolves the configuration (defaults -> ``--config`` file
-> ``--set key=value`` overrides), validates it fully before touching
the filesystem, and writes its outputs plus the resolved config under
``run.out_dir``.  Artifacts carry stage hashes so that mixing outputs
from incompatible configurations fails with an explicit error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, config as cfgmod, data, lda as ldamod, text as textmod
from .autodiff import NumericError
from .errors import ConfigError, DataError, FormatError
from .fixture import FixtureConfig, generate_fixture
from .metrics import evaluate
from .models import MODEL_LABELS, MODES, PRIOR_MODES, VaeRecommender

TRAINABLE_MODES = MODES + ("mf",)
EVAL_MODES = TRAINABLE_MODES + ("rand", "text_knn")
_EXTRA_LABELS = {"mf": "MF", "rand": "RAND", "text_knn": "Text-kNN"}


def _label(mode: str) -> str:
    return MODEL_LABELS.get(mode) or _EXTRA_LABELS[mode]


def _out_dir(cfg) -> Path:
    return Path(cfg["run.out_dir"])


def _dataset_paths(cfg) -> dict:
    out = _out_dir(cfg)
    return {
        "dataset": out / "dataset.npz",
        "splits": out / "splits.npz",
        "reviews": out / "reviews_filtered.tsv",
        "stats": out / "stats.json",
        "config": out / "config_used.txt",
    }


def _require_file(path, what: str) -> None:
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")


def _load_dataset(cfg):
    paths = _dataset_paths(cfg)
    _require_file(paths["dataset"], "prepared dataset (run `hpvae prepare` first)")
    matrix, meta = data.InteractionMatrix.load(paths["dataset"])
    want = cfgmod.stage_hash(cfg, "data")
    if meta["data_hash"] != want:
        raise ConfigError(
            f"config-hash mismatch: dataset was prepared with data hash "
            f"{meta['data_hash']}, current config hashes to {want}")
    splits, _ = data.SplitSpec.load(paths["splits"])
    splits.validate(matrix.n_users)
    return matrix, splits


def _priors_path(cfg) -> Path:
    return _out_dir(cfg) / f"priors_{cfg['prior.source']}.npz"


def _checkpoint_path(cfg, mode: str) -> Path:
    return _out_dir(cfg) / f"model_{mode}.npz"


# ----------------------------------------------------------------------
# commands

def cmd_prepare(cfg) -> int:
    _require_file(cfg["data.path"], "input reviews file")
    if cfg["data.format"] not in ("tsv", "jsonl"):
        raise ConfigError(f"data.format must be tsv or jsonl, got {cfg['data.format']!r}")
    fracs = (cfg["split.train_frac"], cfg["split.val_frac"], cfg["split.test_frac"])
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fracs}")
    if not 0.0 < cfg["split.fold_in_fraction"] < 1.0:
        raise ConfigError("split.fold_in_fraction must be in (0, 1)")
    star_range = (cfg["data.star_min"], cfg["data.star_max"])
    if not star_range[0] <= cfg["data.threshold"] <= star_range[1]:
        raise ConfigError(f"data.threshold {cfg['data.threshold']} outside {star_range}")

    records, n_malformed = data.load_reviews(cfg["data.path"], cfg["data.format"])
    raw_stats = {
        "n_reviews": len(records),
        "n_malformed": n_malformed,
        "n_users": len({r.user_id for r in records}),
        "n_items": len({r.item_id for r in records}),
    }
    n_non_english = 0
    if cfg["data.english_filter"]:
        records, n_non_english = data.filter_english(records, cfg["data.english_min_ratio"])
    records = data.binarize(records, cfg["data.threshold"], star_range)
    records = data.positives(records)
    records = data.apply_cutoffs(records, cfg["data.min_user_reviews"],
                                 cfg["data.min_item_raters"])
    records = data.dedupe_reviews(records)
    matrix = data.build_matrix(records)
    matrix.validate()
    splits = data.split_users(matrix.n_users, cfg["split.seed"], fracs,
                              cfg["split.fold_in_fraction"])

    paths = _dataset_paths(cfg)
    _out_dir(cfg).mkdir(parents=True, exist_ok=True)
    data_hash = cfgmod.stage_hash(cfg, "data")
    stats = {"raw": raw_stats, "n_non_english_dropped": n_non_english,
             "filtered": data.dataset_stats(matrix), "data_hash": data_hash}
    matrix.save(paths["dataset"], meta={"data_hash": data_hash, "stats": stats})
    splits.save(paths["splits"], meta={"data_hash": data_hash})
    data.save_reviews(paths["reviews"], records, fmt="tsv")
    with open(paths["stats"], "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
    cfgmod.write_resolved(cfg, paths["config"])
    print(f"prepared {matrix.n_users} users x {matrix.n_items} items "
          f"({matrix.nnz} positives, sparsity {100 * matrix.density():.3f}%)")
    return 0


def cmd_priors(cfg) -> int:
    source = cfg["prior.source"]
    if source not in ("embedding", "lda", "random"):
        raise ConfigError(f"prior.source must be embedding, lda or random, got {source!r}")
    if source == "embedding":
        _require_file(cfg["prior.embeddings_path"], "embeddings file")
    matrix, _ = _load_dataset(cfg)
    dim = cfg["model.n_latent"]

    if source == "random":
        table = textmod.build_random_priors(matrix.n_users, dim, cfg["run.seed"])
    else:
        records, _ = data.load_reviews(_dataset_paths(cfg)["reviews"], "tsv")
        if source == "embedding":
            emb = textmod.load_embeddings(cfg["prior.embeddings_path"])
            if emb.dim != dim:
                raise ConfigError(
                    f"embedding dimension {emb.dim} != model.n_latent {dim}")
            table = textmod.build_embedding_priors(
                records, matrix, emb, sigma_floor=cfg["prior.sigma_floor"],
                z_normalize=cfg["prior.z_normalize"])
        else:
            if cfg["prior.lda_topics"] != dim:
                raise ConfigError(
                    f"prior.lda_topics {cfg['prior.lda_topics']} != model.n_latent {dim}")
            docs = [textmod.tokenize(r.text) for r in records]
            alpha = cfg["prior.lda_alpha"] if cfg["prior.lda_alpha"] > 0 else None
            model = ldamod.lda_train(docs, cfg["prior.lda_topics"], alpha=alpha,
                                     eta=cfg["prior.lda_eta"],
                                     n_iters=cfg["prior.lda_iters"],
                                     seed=cfg["run.seed"])
            model.save(_out_dir(cfg) / "lda_model.npz",
                       meta={"prior_hash": cfgmod.stage_hash(cfg, "prior")})
            table = ldamod.build_lda_priors(
                records, matrix, model, sigma_floor=cfg["prior.sigma_floor"],
                z_normalize=cfg["prior.z_normalize"],
                fold_in_iters=cfg["prior.lda_fold_in_iters"], seed=cfg["run.seed"])

    table.save(_priors_path(cfg), meta={
        "source": source,
        "data_hash": cfgmod.stage_hash(cfg, "data"),
        "prior_hash": cfgmod.stage_hash(cfg, "prior"),
    })
    cfgmod.write_resolved(cfg, _dataset_paths(cfg)["config"])
    print(f"priors[{source}] for {table.n_users} users, dim {table.dim}; "
          f"coverage {table.coverage()}")
    return 0


def _load_priors(cfg, matrix) -> textmod.PriorTable:
    if cfg["prior.source"] == "none":
        raise ConfigError(
            f"mode {cfg['model.mode']!r} requires priors; set prior.source and run "
            "`hpvae priors`")
    path = _priors_path(cfg)
    _require_file(path, f"prior table (run `hpvae priors` with source "
                        f"{cfg['prior.source']!r} first)")
    table, meta = textmod.PriorTable.load(path)
    want = cfgmod.stage_hash(cfg, "prior")
    if meta["prior_hash"] != want:
        raise ConfigError(
            f"config-hash mismatch: prior table was built with hash "
            f"{meta['prior_hash']}, current config hashes to {want}")
    if table.n_users != matrix.n_users:
        raise ConfigError("prior table does not cover the prepared user set")
    return table


def cmd_train(cfg) -> int:
    mode = cfg["model.mode"]
    if mode not in TRAINABLE_MODES:
        raise ConfigError(f"model.mode must be one of {TRAINABLE_MODES}, got {mode!r}")
    matrix, splits = _load_dataset(cfg)
    priors = None
    if mode in PRIOR_MODES:
        priors = _load_priors(cfg, matrix)
        if priors.dim != cfg["model.n_latent"]:
            raise ConfigError(f"prior dim {priors.dim} != model.n_latent "
                              f"{cfg['model.n_latent']}")

    X_train = matrix.dense_rows(splits.train_users)
    meta = {
        "mode": mode,
        "data_hash": cfgmod.stage_hash(cfg, "data"),
        "model_hash": cfgmod.stage_hash(cfg, "model"),
    }
    checkpoint = _checkpoint_path(cfg, mode)
    log_path = _out_dir(cfg) / f"trainlog_{mode}.jsonl"

    if mode == "mf":
        est = baselines.MatrixFactorization(
            n_factors=cfg["mf.n_factors"], lr=cfg["mf.lr"], epochs=cfg["mf.epochs"],
            batch_users=cfg["mf.batch_users"], n_negatives=cfg["mf.n_negatives"],
            l2=cfg["mf.l2"], fold_in_reg=cfg["mf.fold_in_reg"], seed=cfg["run.seed"])
        est.fit(X_train)
        est.save(checkpoint, meta=meta)
        with open(log_path, "w", encoding="utf-8") as fh:
            for epoch, loss in enumerate(est.loss_history_):
                fh.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")
        print(f"trained mf for {cfg['mf.epochs']} epochs -> {checkpoint}")
        cfgmod.write_resolved(cfg, _dataset_paths(cfg)["config"])
        return 0

    pairs, _ = data.fold_in_pairs(matrix, splits.val_users,
                                  splits.fold_in_fraction, splits.seed)
    val_users = sorted(pairs)
    x_obs = np.zeros((len(val_users), matrix.n_items))
    held = []
    for i, u in enumerate(val_users):
        x_obs[i, pairs[u].observed] = 1.0
        held.append(pairs[u].held_out)

    est = VaeRecommender(
        mode=mode, n_latent=cfg["model.n_latent"], n_hidden=cfg["model.n_hidden"],
        dropout=cfg["model.dropout"], batch_size=cfg["model.batch_size"],
        epochs=cfg["model.epochs"], beta_max=cfg["model.beta_max"],
        anneal_frac=cfg["model.anneal_frac"], gamma=cfg["model.gamma"],
        lr=cfg["model.lr"], normalize_input=cfg["model.normalize_input"],
        log_sigma_clip=cfg["model.log_sigma_clip"],
        sample_at_eval=cfg["model.sample_at_eval"], seed=cfg["run.seed"])
    train_priors = None
    if priors is not None:
        train_priors = textmod.PriorTable(mean=priors.mean[splits.train_users],
                                          std=priors.std[splits.train_users],
                                          source=priors.source[splits.train_users],
                                          sigma_floor=priors.sigma_floor)
    est.fit(X_train, priors=train_priors, validation=(x_obs, held))
    if priors is not None:
        meta["prior_hash"] = cfgmod.stage_hash(cfg, "prior")
    est.save(checkpoint, meta=meta)
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in est.history_:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    cfgmod.write_resolved(cfg, _dataset_paths(cfg)["config"])
    if est.abort_diagnostic_:
        print(f"training aborted: {est.abort_diagnostic_}", file=sys.stderr)
        print(f"last good checkpoint -> {checkpoint}", file=sys.stderr)
        return 1
    print(f"trained {mode} for {cfg['model.epochs']} epochs "
          f"(best val epoch {est.best_epoch_}) -> {checkpoint}")
    return 0


def _build_ranker(cfg, mode, matrix, splits, checkpoint=None):
    if mode == "rand":
        est = baselines.RandomRanker(seed=cfg["run.seed"])
        est.n_items_ = matrix.n_items
        return est
    if mode == "text_knn":
        _require_file(cfg["prior.embeddings_path"],
                      "embeddings file (text_knn requires prior.embeddings_path)")
        emb = textmod.load_embeddings(cfg["prior.embeddings_path"])
        records, _ = data.load_reviews(_dataset_paths(cfg)["reviews"], "tsv")
        return baselines.TextKnn().fit(records, matrix, emb)
    path = Path(checkpoint) if checkpoint else _checkpoint_path(cfg, mode)
    _require_file(path, f"checkpoint for mode {mode!r}")
    if mode == "mf":
        est, meta = baselines.MatrixFactorization.load(path)
    else:
        est, meta = VaeRecommender.load(path)
        if est.mode != mode:
            raise ConfigError(f"checkpoint {path} holds mode {est.mode!r}, not {mode!r}")
    want = cfgmod.stage_hash(cfg, "data")
    if meta.get("data_hash") != want:
        raise ConfigError(
            f"config-hash mismatch: checkpoint {path} was trained with data hash "
            f"{meta.get('data_hash')}, current config hashes to {want}")
    return est


def cmd_eval(cfg, mode=None, split=None, checkpoint=None) -> int:
    mode = mode or cfg["model.mode"]
    split = split or cfg["eval.split"]
    if mode not in EVAL_MODES:
        raise ConfigError(f"cannot evaluate unknown model {mode!r}")
    if split not in ("test", "val"):
        raise ConfigError(f"eval split must be test or val, got {split!r}")
    matrix, splits = _load_dataset(cfg)
    users = splits.test_users if split == "test" else splits.val_users
    ranker = _build_ranker(cfg, mode, matrix, splits, checkpoint)

    text_feature = cfg["prior.source"] if mode in PRIOR_MODES + ("text_knn",) else "-"
    report = evaluate(ranker, matrix, users,
                      fraction=splits.fold_in_fraction, seed=splits.seed,
                      ndcg_k=cfg["eval.ndcg_k"], recall_ks=cfgmod.recall_k_list(cfg),
                      model=_label(mode), mode=mode, text_feature=text_feature,
                      meta={"split": split, "data_hash": cfgmod.stage_hash(cfg, "data")})
    out = _out_dir(cfg)
    report.save(out / f"eval_{mode}_{split}.jsonl")
    with open(out / f"eval_{mode}_{split}.txt", "w", encoding="utf-8") as fh:
        fh.write(report.table())
    print(report.table(), end="")
    return 0


def cmd_report(run_dirs, out_path=None) -> int:
    rows = []
    curves = []
    for run in run_dirs:
        run = Path(run)
        if not run.is_dir():
            raise ConfigError(f"run directory not found: {run}")
        for path in sorted(run.glob("eval_*.jsonl")):
            by_metric = {}
            base = None
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    base = rec
                    by_metric[rec["metric"]] = rec["mean"]
            if base is not None:
                rows.append({"model": base["model"], "text_feature": base["text_feature"],
                             "split": base.get("split", "?"), **by_metric})
        for path in sorted(run.glob("trainlog_*.jsonl")):
            mode = path.stem.replace("trainlog_", "")
            curve_path = run / f"curves_{mode}.tsv"
            with open(path, encoding="utf-8") as fh:
                records = [json.loads(line) for line in fh]
            if records:
                cols = sorted({k for r in records for k in r})
                with open(curve_path, "w", encoding="utf-8") as fh:
                    fh.write("\t".join(cols) + "\n")
                    for r in records:
                        fh.write("\t".join(str(r.get(c, "")) for c in cols) + "\n")
                curves.append(curve_path)

    if not rows:
        raise ConfigError("no eval_*.jsonl files found in the given run directories")
    metrics = sorted({k for r in rows for k in r if k not in ("model", "text_feature", "split")})
    header = ["model", "text_feature", "split"] + metrics
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join(
            [str(r["model"]), str(r["text_feature"]), str(r["split"])]
            + [f"{r[m]:.4f}" if m in r else "-" for m in metrics]))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(table)
    if curves:
        print(f"# training curves: {', '.join(str(c) for c in curves)}", file=sys.stderr)
    return 0


def cmd_fixture(out_dir, seed=7) -> int:
    truth = generate_fixture(out_dir, FixtureConfig(seed=seed))
    print(f"fixture: {truth['n_reviews']} reviews by {truth['n_users_written']} users "
          f"over {truth['n_items_written']} items -> {out_dir}")
    return 0


# ----------------------------------------------------------------------
# argument parsing

def _add_config_args(parser):
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpvae",
        description="Collaborative filtering with multinomial VAEs and "
                    "text-estimated user priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest reviews, filter, build matrix and splits")
    _add_config_args(p)
    p = sub.add_parser("priors", help="estimate per-user priors from review text")
    _add_config_args(p)
    p = sub.add_parser("train", help="train the configured model")
    _add_config_args(p)
    p = sub.add_parser("eval", help="fold-in evaluation on the test or validation split")
    _add_config_args(p)
    p.add_argument("--model", choices=EVAL_MODES, help="model to evaluate "
                   "(default: model.mode from the config)")
    p.add_argument("--split", choices=("test", "val"), help="user split to evaluate")
    p.add_argument("--checkpoint", help="explicit checkpoint path")
    p = sub.add_parser("report", help="combine eval reports into a comparison table")
    p.add_argument("--run", action="append", required=True, metavar="DIR",
                   help="run directory to scan (repeatable)")
    p.add_argument("--out", help="also write the table to this path")
    p = sub.add_parser("fixture", help="generate the bundled synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run, args.out)
        if args.command == "fixture":
            return cmd_fixture(args.out, args.seed)
        cfg = cfgmod.resolve_config(args.config, args.set)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "priors":
            return cmd_priors(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, mode=args.model, split=args.split,
                            checkpoint=args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError, FormatError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
