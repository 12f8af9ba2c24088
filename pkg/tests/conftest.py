"""Shared oracles and synthetic-corpus helpers for the test suite."""

import numpy as np
import pytest

from hpvae.models import VaeRecommender
from hpvae.util import substream


def finite_difference(loss_fn, arrays, h=1e-5):
    """Central-difference gradients of loss_fn(arrays) w.r.t. each array."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = loss_fn(arrays)
            arr[idx] = orig - h
            fm = loss_fn(arrays)
            arr[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    """Max abs difference scaled by the largest gradient magnitude (min 1)."""
    num = max(abs(a - n).max() for a, n in zip(analytic.values(), numeric.values()))
    den = max(1.0, max(abs(g).max() for g in numeric.values()))
    return num / den


PRIMITIVE_CASES = {
    "matmul": lambda ad, p: ad.matmul(p["a"], p["b"]),
    "add": lambda ad, p: ad.add(p["a"], p["b"]),
    "add_bias": lambda ad, p: ad.add(p["a"], p["bias"]),
    "mul": lambda ad, p: ad.mul(p["a"], p["b"]),
    "tanh": lambda ad, p: ad.tanh(p["a"]),
    "exp": lambda ad, p: ad.exp(p["a"]),
    "log": lambda ad, p: ad.log(p["pos"]),
    "log_softmax": lambda ad, p: ad.log_softmax(p["a"]),
    "clamp": lambda ad, p: ad.clamp(p["a"], -2.0, 2.0),
    "reduce_sum_all": lambda ad, p: ad.reduce_sum(p["a"]),
    "reduce_sum_axis": lambda ad, p: ad.reduce_sum(p["a"], axis=1),
}


def primitive_gradcheck_error(name, n_instances=100):
    """Worst finite-difference error for one primitive over random instances."""
    from hpvae import autodiff as ad
    from hpvae.autodiff import Tensor

    rng = np.random.default_rng(hash(name) % 2**32)
    op = PRIMITIVE_CASES[name]
    worst = 0.0
    for _ in range(n_instances):
        arrays = {
            "a": rng.uniform(-1.5, 1.5, size=(2, 3)),
            "b": rng.uniform(-1.5, 1.5, size=(2, 3) if name != "matmul" else (3, 2)),
            "bias": rng.uniform(-1.5, 1.5, size=3),
            "pos": rng.uniform(0.3, 2.0, size=(2, 3)),
        }
        if name == "clamp":  # keep clear of the kinks at +/-2
            arrays["a"] = np.where(np.abs(np.abs(arrays["a"]) - 2.0) < 1e-3,
                                   0.0, arrays["a"])
        weight = rng.normal(size=op(ad, {k: Tensor(v) for k, v in arrays.items()}).data.shape)

        def loss_fn(arrs, want_tensors=False):
            tensors = {k: Tensor(v, trainable=True) for k, v in arrs.items()}
            loss = ad.reduce_sum(ad.mul(op(ad, tensors), Tensor(weight)))
            return (loss, tensors) if want_tensors else loss.item()

        loss, tensors = loss_fn(arrays, want_tensors=True)
        loss.backward()
        analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                    for k, t in tensors.items()}
        numeric = finite_difference(loss_fn, arrays)
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst


def vae_gradcheck_error(mode, seed, n_items=6, n_latent=2, batch=3, n_hidden=4,
                        beta=0.7, gamma=0.05):
    """Full-objective gradient error vs finite differences on a tiny instance.

    Dropout is off and the reparameterization noise is redrawn from the
    same substream on every evaluation, so the objective is a smooth
    deterministic function of the parameters.
    """
    est = VaeRecommender(mode=mode, n_latent=n_latent, n_hidden=n_hidden,
                         dropout=0.0, gamma=gamma, seed=seed)
    est.n_items_ = n_items
    est.params_ = est._init_params(n_items)

    rng = substream(seed, 51)
    x_batch = (rng.random((batch, n_items)) < 0.4).astype(np.float64)
    x_batch[np.arange(batch), rng.integers(n_items, size=batch)] = 1.0
    if mode in ("hprior", "rp"):
        kl_rows = (rng.normal(size=(batch, n_latent)),
                   rng.uniform(0.5, 1.5, size=(batch, n_latent)))
    else:
        kl_rows = (np.zeros((batch, n_latent)), np.ones((batch, n_latent)))
    tr_rows = rng.normal(size=(batch, n_latent)) if mode == "tr" else kl_rows[0]

    def loss_value(arrays, want_tensor=False):
        for k, t in est.params_.items():
            t.data = arrays[k]
        loss, _ = est._loss_graph(x_batch, kl_rows, tr_rows, beta,
                                  substream(seed, 52), training=True)
        return loss if want_tensor else loss.item()

    arrays = {k: t.data.copy() for k, t in est.params_.items()}
    loss = loss_value(arrays, want_tensor=True)
    loss.backward()
    analytic = {k: est.params_[k].grad.copy() for k in arrays}
    numeric = finite_difference(loss_value, arrays)
    return max_rel_error(analytic, numeric)


def two_cluster_corpus(n_docs=200, vocab_size=40, doc_len=30, seed=0):
    """Documents drawn from two disjoint vocabularies, alternating cluster.

    Returns (docs, labels, vocab_a, vocab_b).
    """
    rng = np.random.default_rng(seed)
    vocab_a = [f"a{i:02d}" for i in range(vocab_size)]
    vocab_b = [f"b{i:02d}" for i in range(vocab_size)]
    docs, labels = [], []
    for d in range(n_docs):
        label = d % 2
        vocab = vocab_a if label == 0 else vocab_b
        docs.append([vocab[i] for i in rng.integers(vocab_size, size=doc_len)])
        labels.append(label)
    return docs, labels, vocab_a, vocab_b


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """One shared generation of the bundled synthetic dataset."""
    from hpvae.fixture import FixtureConfig, generate_fixture

    out = tmp_path_factory.mktemp("fixture")
    truth = generate_fixture(out, FixtureConfig())
    return out, truth
