"""Sparse Transition VAE.

Per-frame MLP encoder ``x_t -> (mu_t, log_var_t)``, MLP decoder ``z_t -> x_hat_t``
and an LSTM transition prior that reads ``z_1..z_{t-1}`` and predicts
``zhat_t``. The prior at frame ``t >= 2`` is ``N(zhat_t, sigma_prior^2 I)``; frame 1
uses ``N(0, I)``. An L1 penalty on the transition weights keeps the learned
dynamics sparse.

Batches are laid out time-major: row ``t * B + b`` holds frame ``t`` of sequence
``b``. That lets the encoder and decoder run as single matmuls while the LSTM
walks over contiguous row blocks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_VAR_LIMIT = 10.0
EMBEDDING_MODES = ("both", "hidden", "residual")


@dataclass
class STVAEConfig:
    latent_dim: int = 8
    hidden: tuple[int, ...] = (128, 128)
    lstm_hidden: int = 64
    beta_kl: float = 0.1
    lambda_sparse: float = 1e-3
    sigma_prior: float = 1.0
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    leaky_slope: float = 0.2
    embedding: str = "both"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.beta_kl < 0 or self.lambda_sparse < 0:
            raise ValueError("loss weights must be >= 0")
        if self.sigma_prior <= 0:
            raise ValueError("sigma_prior must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.embedding not in EMBEDDING_MODES:
            raise ValueError(f"embedding must be one of {EMBEDDING_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "STVAEConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown STVAEConfig keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- parameters

@dataclass
class STVAEParams:
    """Named parameter tensors. Names double as checkpoint keys."""

    tensors: dict[str, Tensor]
    input_dim: int
    latent_dim: int
    n_enc: int
    n_dec: int

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def lstm(self) -> tn.LSTMParams:
        return tn.LSTMParams(self["trans.w_x"], self["trans.w_h"], self["trans.b"])

    def transition_weights(self) -> list[Tensor]:
        return [self["trans.w_x"], self["trans.w_h"], self["trans.w_out"]]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "STVAEParams":
        n_enc = sum(1 for k in arrays if k.startswith("enc.") and k.endswith(".w"))
        n_dec = sum(1 for k in arrays if k.startswith("dec.") and k.endswith(".w"))
        if n_enc == 0 or n_dec == 0 or "trans.w_x" not in arrays:
            raise ValueError("parameter table lacks encoder, decoder or transition weights")
        input_dim = arrays["enc.0.w"].shape[0]
        latent_dim = arrays["trans.w_x"].shape[0]
        tensors = {k: tn.parameter(v) for k, v in arrays.items()
                   if k.split(".")[0] in ("enc", "dec", "trans")}
        return cls(tensors, input_dim, latent_dim, n_enc, n_dec)


def init_params(input_dim: int, cfg: STVAEConfig, rng: np.random.Generator | None = None) -> STVAEParams:
    """Glorot-uniform weights, zero biases; LSTM forget-gate bias starts at 1."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.latent_dim
    H = cfg.lstm_hidden

    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    t: dict[str, Tensor] = {}
    sizes = [input_dim, *cfg.hidden, 2 * n]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        t[f"enc.{i}.w"] = tn.parameter(glorot(a, b))
        t[f"enc.{i}.b"] = tn.parameter(np.zeros(b))
    sizes = [n, *cfg.hidden, input_dim]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        t[f"dec.{i}.w"] = tn.parameter(glorot(a, b))
        t[f"dec.{i}.b"] = tn.parameter(np.zeros(b))
    t["trans.w_x"] = tn.parameter(glorot(n, 4 * H))
    t["trans.w_h"] = tn.parameter(glorot(H, 4 * H))
    bias = np.zeros(4 * H)
    bias[H:2 * H] = 1.0
    t["trans.b"] = tn.parameter(bias)
    t["trans.w_out"] = tn.parameter(glorot(H, n))
    t["trans.b_out"] = tn.parameter(np.zeros(n))
    return STVAEParams(t, input_dim, n, len(cfg.hidden) + 1, len(cfg.hidden) + 1)


# ---------------------------------------------------------------- forward pieces

def _mlp(x: Tensor, params: STVAEParams, prefix: str, n_layers: int, slope: float) -> Tensor:
    for i in range(n_layers):
        x = tn.add_bias(tn.matmul(x, params[f"{prefix}.{i}.w"]), params[f"{prefix}.{i}.b"])
        if i < n_layers - 1:
            x = tn.leaky_relu(x, slope)
    return x


def encode(x, params: STVAEParams, slope: float = 0.2) -> tuple[Tensor, Tensor]:
    """Map frames (rows of ``x``) to posterior mean and clamped log-variance."""
    x = x if isinstance(x, Tensor) else tn.tensor(np.atleast_2d(x))
    if x.shape[1] != params.input_dim:
        raise ValueError(f"encode: feature dim {x.shape[1]} != model input dim {params.input_dim}")
    out = _mlp(x, params, "enc", params.n_enc, slope)
    n = params.latent_dim
    mu = tn.slice(out, (np.s_[:], np.s_[0:n]))
    log_var = tn.clip(tn.slice(out, (np.s_[:], np.s_[n:2 * n])), -LOG_VAR_LIMIT, LOG_VAR_LIMIT)
    return mu, log_var


def decode(z: Tensor, params: STVAEParams, slope: float = 0.2) -> Tensor:
    return _mlp(z, params, "dec", params.n_dec, slope)


def reparameterize(mu, log_var, noise) -> Tensor:
    noise = noise if isinstance(noise, Tensor) else tn.tensor(noise)
    if not (mu.shape == log_var.shape == noise.shape):
        raise ValueError("reparameterize: mu, log_var and noise must share a shape")
    return tn.add(mu, tn.mul(tn.exp(tn.mul(log_var, 0.5)), noise))


def transition_forward(z_steps: Sequence[Tensor], params: STVAEParams) -> tuple[list[Tensor], list[Tensor]]:
    """Run the LSTM prior over ``z_1..z_T`` (each (B, n)).

    Returns ``(zhat_2..zhat_T, h_1..h_T)``; ``zhat_t`` is read out of ``h_{t-1}``
    so it only sees frames before ``t``.
    """
    if len(z_steps) < 2:
        raise ValueError("transition_forward needs T >= 2")
    lstm = params.lstm()
    B = z_steps[0].shape[0]
    h = tn.tensor(np.zeros((B, lstm.hidden)))
    c = tn.tensor(np.zeros((B, lstm.hidden)))
    hs, zhats = [], []
    for t, z in enumerate(z_steps):
        h, c = tn.lstm_cell(z, h, c, lstm)
        hs.append(h)
        if t < len(z_steps) - 1:
            zhats.append(tn.add_bias(tn.matmul(h, params["trans.w_out"]), params["trans.b_out"]))
    return zhats, hs


def _gauss_kl(mu, log_var, prior_mean, prior_log_var: float) -> Tensor:
    """Summed-over-dims KL(N(mu, e^lv) || N(prior_mean, e^plv)), returned per element."""
    diff = mu if prior_mean is None else tn.sub(mu, prior_mean)
    inv = math.exp(-prior_log_var)
    return tn.mul(tn.add(tn.sub(tn.add(tn.mul(tn.add(tn.exp(log_var), tn.square(diff)), inv),
                                       prior_log_var), log_var), -1.0), 0.5)


@dataclass
class LossBreakdown:
    total: Tensor
    recon: float
    kl: float
    sparse: float

    def as_dict(self) -> dict[str, float]:
        return {"recon": self.recon, "kl": self.kl, "sparse": self.sparse,
                "total": self.total.item()}


def stack_batch(batch: Sequence[np.ndarray]) -> np.ndarray:
    """Stack (T, d) sequences into a time-major (T*B, d) matrix."""
    if not batch:
        raise ValueError("empty batch")
    arr = np.stack([np.asarray(s, dtype=np.float64) for s in batch], axis=1)  # (T, B, d)
    return arr.reshape(-1, arr.shape[2])


def elbo_loss(batch: Sequence[np.ndarray], params: STVAEParams, cfg: STVAEConfig,
              noise: np.ndarray | np.random.Generator | None) -> LossBreakdown:
    """Negative ELBO with sparsity penalty for a batch of equal-length sequences.

    ``noise`` is either the standard-normal draw itself (shape (T*B, n),
    time-major), a Generator to draw it from, or ``None`` to use the posterior
    mean (no sampling).
    """
    if len(batch) == 0:
        raise ValueError("elbo_loss: empty batch")
    lengths = {len(s) for s in batch}
    if len(lengths) != 1:
        raise ValueError("elbo_loss: sequences in a batch must share a length")
    T, B, n = lengths.pop(), len(batch), params.latent_dim
    x = tn.tensor(stack_batch(batch))
    mu, log_var = encode(x, params, cfg.leaky_slope)
    if noise is None:
        z = mu
    else:
        if isinstance(noise, np.random.Generator):
            noise = noise.standard_normal((T * B, n))
        z = reparameterize(mu, log_var, noise)
    x_hat = decode(z, params, cfg.leaky_slope)
    recon = tn.mean(tn.square(tn.sub(x_hat, x)))

    first = np.s_[0:B]
    kl_first = tn.sum(_gauss_kl(tn.slice(mu, (first, np.s_[:])),
                                tn.slice(log_var, (first, np.s_[:])), None, 0.0))
    parts = [kl_first]
    if T >= 2:
        z_steps = [tn.slice(z, (np.s_[t * B:(t + 1) * B], np.s_[:])) for t in range(T)]
        zhats, _ = transition_forward(z_steps, params)
        zhat = tn.concat(zhats, axis=0)
        rest = np.s_[B:]
        parts.append(tn.sum(_gauss_kl(tn.slice(mu, (rest, np.s_[:])),
                                      tn.slice(log_var, (rest, np.s_[:])), zhat,
                                      2.0 * math.log(cfg.sigma_prior))))
    kl = tn.mul(parts[0] if len(parts) == 1 else tn.add(parts[0], parts[1]), 1.0 / (T * B))

    weights = params.transition_weights()
    count = float(np.sum([w.data.size for w in weights]))
    l1 = tn.sum(tn.absolute(weights[0]))
    for w in weights[1:]:
        l1 = tn.add(l1, tn.sum(tn.absolute(w)))
    sparse = tn.mul(l1, 1.0 / count)

    total = tn.add(tn.add(recon, tn.mul(kl, cfg.beta_kl)), tn.mul(sparse, cfg.lambda_sparse))
    return LossBreakdown(total, recon.item(), cfg.beta_kl * kl.item(),
                         cfg.lambda_sparse * sparse.item())


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: STVAEParams
    best_params: STVAEParams
    best_epoch: int
    log: list[dict[str, float]] = field(default_factory=list)

    def log_csv(self) -> str:
        rows = ["epoch,recon,kl,sparse,total"]
        for r in self.log:
            rows.append(f"{r['epoch']},{r['recon']!r},{r['kl']!r},{r['sparse']!r},{r['total']!r}")
        return "\n".join(rows) + "\n"


def _check_finite(parts: dict[str, float], epoch: int) -> None:
    for name, value in parts.items():
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite {name} loss term at epoch {epoch}")


def train(dataset: Sequence[np.ndarray], cfg: STVAEConfig) -> TrainResult:
    """Fit an ST-VAE with Adam on (T, d) feature sequences.

    Sequences are shuffled into batches every epoch; batches group sequences of
    equal length. Returns the final and best-epoch parameters with the
    per-epoch mean loss log.
    """
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    seqs = [np.asarray(s, dtype=np.float64) for s in dataset]
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ValueError(f"train: inconsistent feature dims {sorted(dims)}")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(dims.pop(), cfg, rng)
    names = params.names()
    state = tn.adam_init([params[k].data for k in names], lr=cfg.lr)
    result_log: list[dict[str, float]] = []
    best_total, best_arrays, best_epoch = math.inf, params.arrays(), 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(seqs))
        by_len: dict[int, list[int]] = {}
        for i in order:
            by_len.setdefault(len(seqs[i]), []).append(int(i))
        batches = [idx[j:j + cfg.batch_size] for idx in by_len.values()
                   for j in range(0, len(idx), cfg.batch_size)]
        sums = {"recon": 0.0, "kl": 0.0, "sparse": 0.0, "total": 0.0}
        frames = 0
        for idx in batches:
            try:
                parts = elbo_loss([seqs[i] for i in idx], params, cfg, rng)
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}: {exc}") from exc
            values = parts.as_dict()
            _check_finite(values, epoch)
            grads = tn.grad(parts.total, [params[k] for k in names])
            new, state = tn.adam_step([params[k].data for k in names], grads, state)
            for k, arr in zip(names, new):
                params.tensors[k] = tn.parameter(arr)
            w = len(idx) * len(seqs[idx[0]])
            frames += w
            for k in sums:
                sums[k] += w * values[k]
        row = {"epoch": epoch, **{k: v / frames for k, v in sums.items()}}
        _check_finite(row, epoch)
        result_log.append(row)
        if row["total"] < best_total:
            best_total, best_arrays, best_epoch = row["total"], params.arrays(), epoch
        log.debug("epoch %d total %.6f", epoch, row["total"])

    return TrainResult(params=params, best_params=STVAEParams.from_arrays(best_arrays),
                       best_epoch=best_epoch, log=result_log)


# ---------------------------------------------------------------- embeddings

def extract_embeddings(seq: np.ndarray, params: STVAEParams, mode: str = "both",
                       slope: float = 0.2) -> np.ndarray:
    """Per-frame transition embedding ``[h_t, mu_t - zhat_t]`` (T rows).

    Uses the posterior mean, so the output is deterministic. Frame 1 has no
    prediction and its residual is zero.
    """
    if mode not in EMBEDDING_MODES:
        raise ValueError(f"mode must be one of {EMBEDDING_MODES}")
    seq = np.asarray(seq, dtype=np.float64)
    T = len(seq)
    mu, _ = encode(tn.tensor(seq), params, slope)
    steps = [tn.tensor(mu.data[t:t + 1]) for t in range(T)]
    if T >= 2:
        zhats, hs = transition_forward(steps, params)
        zhat = np.vstack([zh.data for zh in zhats])
    else:
        lstm = params.lstm()
        h, _ = tn.lstm_cell(steps[0], tn.tensor(np.zeros((1, lstm.hidden))),
                            tn.tensor(np.zeros((1, lstm.hidden))), lstm)
        hs, zhat = [h], np.zeros((0, params.latent_dim))
    h = np.vstack([hh.data for hh in hs])
    resid = np.zeros_like(mu.data)
    resid[1:] = mu.data[1:] - zhat
    if mode == "hidden":
        return h
    if mode == "residual":
        return resid
    return np.hstack([h, resid])


# ---------------------------------------------------------------- checkpoint helpers

def save_model(path, params: STVAEParams, feature_mean: np.ndarray | None = None,
               feature_std: np.ndarray | None = None) -> None:
    arrays = params.arrays()
    if feature_mean is not None:
        arrays["norm.mean"] = np.asarray(feature_mean, dtype=np.float64)
        arrays["norm.std"] = np.asarray(feature_std, dtype=np.float64)
    tn.save_checkpoint(path, arrays)


def load_model(path) -> tuple[STVAEParams, np.ndarray | None, np.ndarray | None]:
    arrays = tn.load_checkpoint(path)
    return STVAEParams.from_arrays(arrays), arrays.get("norm.mean"), arrays.get("norm.std")
