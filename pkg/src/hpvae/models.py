"""The multinomial autoencoder family behind one trainer.

Five modes share a single tanh encoder/decoder architecture:

* ``mult_vae`` -- variational autoencoder with the standard N(0, I) prior;
* ``hprior``   -- per-user Gaussian priors N(t_u, diag(s_u^2)) in the KL;
* ``rp``       -- hprior trained against random per-user priors;
* ``tr``       -- standard prior plus a penalty gamma * ||z_u - t_u||
  pulling latent samples toward the user's text encoding;
* ``dae``      -- denoising autoencoder: deterministic latent code,
  input corruption, no KL term.

The objective is the negative batch-averaged beta-ELBO (multinomial
reconstruction plus beta-weighted KL); ``mult_vae`` is exactly the
``hprior`` computation with zero-mean unit-std priors, which keeps the
two modes bit-for-bit comparable under a shared seed.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from . import autodiff as ad
from .autodiff import Adam, NumericError, Tensor
from .errors import ConfigError
from .metrics import ndcg_at_k
from .serialize import load_bundle, save_bundle
from .text import PriorTable
from .util import (STREAM_MODEL_INIT, STREAM_TRAIN, l2_normalize_rows,
                   rank_by_scores, substream)

MODES = ("mult_vae", "hprior", "rp", "tr", "dae")
PRIOR_MODES = ("hprior", "rp", "tr")
MODEL_LABELS = {"mult_vae": "Mult-VAE", "hprior": "VAE-HPrior", "rp": "VAE-RP",
                "tr": "VAE-TR", "dae": "Mult-DAE"}


def anneal_beta(step: int, beta_max: float, anneal_steps: int) -> float:
    """Linear KL weight: 0 at step 0, beta_max from ``anneal_steps`` onward."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if anneal_steps <= 0 or step >= anneal_steps:
        return beta_max
    return beta_max * step / anneal_steps


def multinomial_ll(x: np.ndarray, log_pi: np.ndarray) -> float:
    """Sum_i x_i * log pi_i (the count-vector log-likelihood, no coefficient)."""
    x = np.asarray(x, dtype=np.float64)
    log_pi = np.asarray(log_pi, dtype=np.float64)
    if x.shape != log_pi.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {log_pi.shape}")
    return float(np.sum(x * log_pi))


def kl_diag_gaussians(post_mean, post_log_std, prior_mean, prior_std) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(t, s^2)) for diagonal Gaussians.

    Summed over dimensions: log(s/sigma) + (sigma^2 + (mu-t)^2) / (2 s^2) - 1/2.
    """
    post_mean = np.asarray(post_mean, dtype=np.float64)
    post_log_std = np.asarray(post_log_std, dtype=np.float64)
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    prior_std = np.asarray(prior_std, dtype=np.float64)
    if not (post_mean.shape == post_log_std.shape == prior_mean.shape == prior_std.shape):
        raise ValueError("kl_diag_gaussians: mismatched shapes")
    sigma = np.exp(post_log_std)
    terms = (np.log(prior_std) - post_log_std
             + (sigma * sigma + (post_mean - prior_mean) ** 2) / (2.0 * prior_std * prior_std)
             - 0.5)
    return float(np.sum(terms))


class VaeRecommender(BaseEstimator):
    """Top-N recommender trained on binarized user-item rows.

    ``fit`` expects an (n_users, n_items) 0/1 array (dense or CSR); rows
    are the training users.  Prior-driven modes additionally take a
    PriorTable aligned row-for-row with X.  After fitting, held-out
    users are represented through the encoder mean and ranked by the
    decoder's log-softmax scores.
    """

    def __init__(self, mode="mult_vae", n_latent=300, n_hidden=600, dropout=0.5,
                 batch_size=500, epochs=50, beta_max=1.0, anneal_frac=0.8,
                 gamma=0.01, lr=1e-3, adam_beta1=0.9, adam_beta2=0.999,
                 adam_eps=1e-8, normalize_input=True, log_sigma_clip=10.0,
                 sample_at_eval=False, seed=0):
        self.mode = mode
        self.n_latent = n_latent
        self.n_hidden = n_hidden
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs = epochs
        self.beta_max = beta_max
        self.anneal_frac = anneal_frac
        self.gamma = gamma
        self.lr = lr
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.normalize_input = normalize_input
        self.log_sigma_clip = log_sigma_clip
        self.sample_at_eval = sample_at_eval
        self.seed = seed

    # ------------------------------------------------------------------
    # parameters

    def _init_params(self, n_items: int) -> dict:
        rng = substream(self.seed, STREAM_MODEL_INIT)
        h, k = self.n_hidden, self.n_latent
        params = {
            "enc_w1": Tensor(ad.glorot_uniform((n_items, h), rng), trainable=True, name="enc_w1"),
            "enc_b1": Tensor(np.zeros(h), trainable=True, name="enc_b1"),
            "enc_wmu": Tensor(ad.glorot_uniform((h, k), rng), trainable=True, name="enc_wmu"),
            "enc_bmu": Tensor(np.zeros(k), trainable=True, name="enc_bmu"),
        }
        if self.mode != "dae":
            params["enc_wls"] = Tensor(ad.glorot_uniform((h, k), rng), trainable=True, name="enc_wls")
            params["enc_bls"] = Tensor(np.zeros(k), trainable=True, name="enc_bls")
        params.update({
            "dec_w1": Tensor(ad.glorot_uniform((k, h), rng), trainable=True, name="dec_w1"),
            "dec_b1": Tensor(np.zeros(h), trainable=True, name="dec_b1"),
            "dec_w2": Tensor(ad.glorot_uniform((h, n_items), rng), trainable=True, name="dec_w2"),
            "dec_b2": Tensor(np.zeros(n_items), trainable=True, name="dec_b2"),
        })
        return params

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this VaeRecommender instance is not fitted yet")

    # ------------------------------------------------------------------
    # loss graph

    def _loss_graph(self, x_batch: np.ndarray, kl_prior_rows, tr_targets,
                    beta: float, rng: np.random.Generator, training: bool):
        """Build the mode's objective on one batch; returns (loss, diagnostics).

        ``kl_prior_rows`` is the (mean, std) pair the KL term is taken
        against (standard normal except in hprior/rp); ``tr_targets``
        are the per-user text encodings pulled on by the tr penalty.
        """
        p = self.params_
        n = x_batch.shape[0]
        x_in = l2_normalize_rows(x_batch) if self.normalize_input else x_batch

        inp = ad.mul(Tensor(x_in),
                     ad.dropout_mask(x_in.shape, self.dropout, rng, training=training))
        hidden = ad.tanh(ad.add(ad.matmul(inp, p["enc_w1"]), p["enc_b1"]))
        mu = ad.add(ad.matmul(hidden, p["enc_wmu"]), p["enc_bmu"])

        if self.mode == "dae":
            z = mu
        else:
            log_sigma = ad.clamp(ad.add(ad.matmul(hidden, p["enc_wls"]), p["enc_bls"]),
                                 -self.log_sigma_clip, self.log_sigma_clip)
            z = ad.gaussian_sample(mu, log_sigma, rng) if training else mu

        dec_hidden = ad.tanh(ad.add(ad.matmul(z, p["dec_w1"]), p["dec_b1"]))
        log_pi = ad.log_softmax(ad.add(ad.matmul(dec_hidden, p["dec_w2"]), p["dec_b2"]))

        recon = ad.reduce_sum(ad.mul(Tensor(x_batch), log_pi)) * (-1.0 / n)
        diagnostics = {"recon": recon.item(), "kl": 0.0, "beta": beta}
        if self.mode == "dae":
            return recon, diagnostics

        prior_mean, prior_std = kl_prior_rows
        sigma = ad.exp(log_sigma)
        diff = mu + Tensor(-prior_mean)
        quad = ad.mul(ad.add(ad.mul(sigma, sigma), ad.mul(diff, diff)),
                      Tensor(1.0 / (2.0 * prior_std * prior_std)))
        kl_elem = ad.add(ad.add(Tensor(np.log(prior_std)) + ad.mul(log_sigma, Tensor(-1.0)),
                                quad), Tensor(-0.5))
        kl = ad.reduce_sum(kl_elem) * (1.0 / n)
        loss = ad.add(recon, kl * beta)
        diagnostics["kl"] = kl.item()

        if self.mode == "tr" and self.gamma != 0.0:
            delta = z + Tensor(-tr_targets)
            sq_norm = ad.add(ad.reduce_sum(ad.mul(delta, delta), axis=1), Tensor(np.full(n, 1e-12)))
            dist = ad.exp(ad.log(sq_norm) * 0.5)
            loss = ad.add(loss, ad.reduce_sum(dist) * (self.gamma / n))
        return loss, diagnostics

    # ------------------------------------------------------------------
    # training

    def fit(self, X, priors: PriorTable | None = None, validation=None):
        """Train on the given user rows.

        ``priors`` is required for the hprior/rp/tr modes and must have
        one row per row of X with dimension ``n_latent``.  ``validation``
        is an optional ``(x_observed, held_out_lists)`` pair of fold-in
        inputs used to track NDCG@100 per epoch and keep the
        best-validation parameters.
        """
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        X = check_array(X, accept_sparse="csr")
        n_users, n_items = X.shape

        if self.mode in PRIOR_MODES:
            if priors is None:
                raise ConfigError(f"mode {self.mode!r} requires a prior table")
            if priors.n_users != n_users:
                raise ConfigError(
                    f"prior table has {priors.n_users} users, X has {n_users}")
            if priors.dim != self.n_latent:
                raise ConfigError(
                    f"prior dimension {priors.dim} != latent dimension {self.n_latent}")
        if self.mode in ("hprior", "rp"):
            kl_mean, kl_std = priors.mean, priors.std
        else:
            kl_mean = np.zeros((n_users, self.n_latent))
            kl_std = np.ones((n_users, self.n_latent))
        tr_targets = priors.mean if self.mode == "tr" else kl_mean

        self.n_items_ = n_items
        self.params_ = self._init_params(n_items)
        optimizer = Adam(self.params_, lr=self.lr, beta1=self.adam_beta1,
                         beta2=self.adam_beta2, eps=self.adam_eps)
        rng = substream(self.seed, STREAM_TRAIN)

        batches_per_epoch = int(np.ceil(n_users / self.batch_size))
        total_steps = self.epochs * batches_per_epoch
        anneal_steps = int(round(self.anneal_frac * total_steps))

        self.loss_trace_ = []
        self.history_ = []
        self.abort_diagnostic_ = None
        best_val, best_params, best_epoch = -np.inf, None, -1
        step = 0
        for epoch in range(self.epochs):
            epoch_snapshot = {k: t.data.copy() for k, t in self.params_.items()}
            order = rng.permutation(n_users)
            sums = {"loss": 0.0, "recon": 0.0, "kl": 0.0}
            last_beta = 0.0
            try:
                for start in range(0, n_users, self.batch_size):
                    users = order[start:start + self.batch_size]
                    x_batch = _dense_rows(X, users)
                    beta = anneal_beta(step, self.beta_max, anneal_steps)
                    loss, diag = self._loss_graph(
                        x_batch, (kl_mean[users], kl_std[users]), tr_targets[users],
                        beta, rng, training=True)
                    loss.backward()
                    optimizer.step()
                    value = loss.item()
                    self.loss_trace_.append(value)
                    sums["loss"] += value
                    sums["recon"] += diag["recon"]
                    sums["kl"] += diag["kl"]
                    last_beta = beta
                    step += 1
            except NumericError as exc:
                for k, t in self.params_.items():
                    t.data = epoch_snapshot[k]
                self.abort_diagnostic_ = (
                    f"numeric fault at epoch {epoch}, step {step}: {exc}; "
                    "parameters restored to the last completed epoch")
                break

            record = {"epoch": epoch, "beta": last_beta,
                      **{k: v / batches_per_epoch for k, v in sums.items()}}
            if validation is not None:
                record["val_ndcg"] = self._validation_ndcg(validation)
                if record["val_ndcg"] > best_val:
                    best_val = record["val_ndcg"]
                    best_params = {k: t.data.copy() for k, t in self.params_.items()}
                    best_epoch = epoch
            self.history_.append(record)

        if best_params is not None:
            for k, t in self.params_.items():
                t.data = best_params[k]
        self.best_epoch_ = best_epoch if best_params is not None else len(self.history_) - 1
        self.optimizer_state_ = optimizer.state_dict()
        self.rng_state_ = rng.bit_generator.state
        return self

    def _validation_ndcg(self, validation, k: int = 100) -> float:
        x_obs, held_out = validation
        x_obs = _densify(x_obs)
        z = self.represent_users(x_obs)
        scores = self.score_items(z)
        total = 0.0
        for i, held in enumerate(held_out):
            ranking = rank_by_scores(scores[i], exclude=np.flatnonzero(x_obs[i]))
            total += ndcg_at_k(ranking, held, k=k)
        return total / len(held_out)

    # ------------------------------------------------------------------
    # inference

    def encode(self, X) -> tuple:
        """Posterior parameters (mu, log_sigma) for the given rows; no dropout.

        ``log_sigma`` is None in dae mode (the code is deterministic).
        """
        self._check_fitted()
        X = np.asarray(_densify(X), dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_items_:
            raise ValueError(f"expected {self.n_items_} items, got {X.shape[1]}")
        p = self.params_
        x_in = l2_normalize_rows(X) if self.normalize_input else X
        hidden = np.tanh(x_in @ p["enc_w1"].data + p["enc_b1"].data)
        mu = hidden @ p["enc_wmu"].data + p["enc_bmu"].data
        if not np.all(np.isfinite(mu)):
            raise NumericError("encode: non-finite posterior mean")
        if self.mode == "dae":
            log_sigma = None
        else:
            log_sigma = np.clip(hidden @ p["enc_wls"].data + p["enc_bls"].data,
                                -self.log_sigma_clip, self.log_sigma_clip)
        if single:
            return mu[0], (None if log_sigma is None else log_sigma[0])
        return mu, log_sigma

    def represent_users(self, X, rng: np.random.Generator | None = None) -> np.ndarray:
        """Latent fold-in representations: the encoder mean by default.

        With ``sample_at_eval`` a reparameterized draw is returned
        instead, from a fixed substream unless ``rng`` is given.
        """
        mu, log_sigma = self.encode(X)
        if self.sample_at_eval and log_sigma is not None:
            if rng is None:
                rng = substream(self.seed, STREAM_TRAIN, 1)
            return mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)
        return mu

    def score_items(self, z: np.ndarray) -> np.ndarray:
        """Decoder log-softmax scores over items for latent rows z."""
        self._check_fitted()
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        if single:
            z = z[None, :]
        p = self.params_
        hidden = np.tanh(z @ p["dec_w1"].data + p["dec_b1"].data)
        logits = hidden @ p["dec_w2"].data + p["dec_b2"].data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_pi = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        return log_pi[0] if single else log_pi

    def rank_items(self, z: np.ndarray, exclude=()) -> np.ndarray:
        """Item permutation by descending score; excluded items go last."""
        return rank_by_scores(self.score_items(z), exclude=exclude)

    def rank_for_user(self, user: int, x_obs: np.ndarray, observed: np.ndarray) -> np.ndarray:
        z = self.represent_users(x_obs)
        return self.rank_items(z, exclude=observed)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path, meta: dict | None = None) -> None:
        """Write a checkpoint: parameters, Adam state, rng state, and metadata."""
        self._check_fitted()
        arrays = {f"param:{k}": t.data for k, t in self.params_.items()}
        opt = self.optimizer_state_
        for k in opt["m"]:
            arrays[f"adam_m:{k}"] = opt["m"][k]
            arrays[f"adam_v:{k}"] = opt["v"][k]
        m = dict(meta or {})
        m.update({
            "estimator_params": self.get_params(),
            "n_items": self.n_items_,
            "best_epoch": self.best_epoch_,
            "adam": {k: opt[k] for k in ("step_count", "lr", "beta1", "beta2", "eps")},
            "rng_state": self.rng_state_,
            "abort_diagnostic": self.abort_diagnostic_,
        })
        save_bundle(path, "vae-checkpoint", arrays, m)

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "vae-checkpoint")
        est = cls(**meta["estimator_params"])
        est.n_items_ = int(meta["n_items"])
        est.params_ = {k.split(":", 1)[1]: Tensor(v, trainable=True, name=k.split(":", 1)[1])
                       for k, v in arrays.items() if k.startswith("param:")}
        est.optimizer_state_ = {
            **meta["adam"],
            "m": {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_m:")},
            "v": {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_v:")},
        }
        est.best_epoch_ = int(meta["best_epoch"])
        est.abort_diagnostic_ = meta.get("abort_diagnostic")
        est.rng_state_ = meta.get("rng_state")
        est.history_ = []
        est.loss_trace_ = []
        return est, meta


def _densify(X) -> np.ndarray:
    if hasattr(X, "toarray"):
        return np.asarray(X.toarray(), dtype=np.float64)
    return np.asarray(X, dtype=np.float64)


def _dense_rows(X, users) -> np.ndarray:
    if hasattr(X, "toarray"):
        return np.asarray(X[users].toarray(), dtype=np.float64)
    return np.asarray(X[users], dtype=np.float64)
