"""Synthetic nonstationary sequences with known latents and domain labels.

Latents follow a per-domain sparse nonlinear Markov transition

    z_t = tanh(A_{u_t} z_{t-1} + b_{u_t}) + noise * eps_t

and are observed through an invertible mixing network of orthogonal layers and
leaky rectifiers, ``x_t = mix(z_t)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

MIX_SLOPE = 0.2
WEIGHT_RANGE = 0.9
BIAS_RANGE = 0.5
MIN_WEIGHT_GAP = 0.1


@dataclass(frozen=True)
class Mechanism:
    weights: np.ndarray  # (n, n), zero off the mask
    bias: np.ndarray     # (n,)
    mask: np.ndarray     # (n, n) bool

    @property
    def complexity(self) -> int:
        return transition_complexity(self.mask)

    def __call__(self, z_prev: np.ndarray) -> np.ndarray:
        return np.tanh(self.weights @ z_prev + self.bias)


def transition_complexity(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


@dataclass(frozen=True)
class MixingFunction:
    layers: tuple[np.ndarray, ...]  # orthogonal matrices
    slope: float = MIX_SLOPE

    def __call__(self, z: np.ndarray) -> np.ndarray:
        x = np.asarray(z, dtype=np.float64)
        for q in self.layers:
            x = x @ q.T
            x = np.where(x > 0, x, self.slope * x)
        return x

    def inverse(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64)
        for q in reversed(self.layers):
            z = np.where(z > 0, z, z / self.slope)
            z = z @ q
        return z


@dataclass
class SynthConfig:
    T: int = 160
    n: int = 8
    n_domains: int = 2
    obs_dim: int = 8
    noise: float = 0.05
    min_dwell: int = 20
    mean_dwell: float = 40.0
    sparsity: float = 0.3
    mixing_layers: int = 2
    n_sequences: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.obs_dim != self.n:
            raise ValueError("obs_dim must equal n (square invertible mixing)")
        if self.T < self.min_dwell or self.min_dwell < 1:
            raise ValueError(f"infeasible dwell: T={self.T}, min_dwell={self.min_dwell}")
        if self.mean_dwell < self.min_dwell:
            raise ValueError("mean_dwell must be >= min_dwell")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must be in (0, 1]")
        if self.n_domains < 1 or self.n_sequences < 1 or self.mixing_layers < 1:
            raise ValueError("n_domains, n_sequences and mixing_layers must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticSequence:
    x: np.ndarray  # (T, obs_dim)
    z: np.ndarray  # (T, n)
    u: np.ndarray  # (T,) int
    mechanisms: list[Mechanism]
    mixing: MixingFunction


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_domains(T: int, n_domains: int, min_dwell: int, mean_dwell: float, seed) -> np.ndarray:
    """Piecewise-constant labels with dwell times ``min_dwell + Geometric``.

    Each new run switches to a different domain chosen uniformly. A tail shorter
    than ``min_dwell`` is absorbed into the preceding run.
    """
    if min_dwell < 1 or T < min_dwell:
        raise ValueError(f"infeasible: T={T} < min_dwell={min_dwell}")
    if mean_dwell < min_dwell:
        raise ValueError("mean_dwell must be >= min_dwell")
    rng = _rng(seed)
    u = np.empty(T, dtype=np.int64)
    current = int(rng.integers(n_domains))
    extra_mean = mean_dwell - min_dwell
    t = 0
    while t < T:
        extra = 0 if extra_mean == 0 else int(rng.geometric(1.0 / (extra_mean + 1.0))) - 1
        end = min(T, t + min_dwell + extra)
        if T - end < min_dwell:
            end = T
        u[t:end] = current
        t = end
        if n_domains > 1:
            nxt = int(rng.integers(n_domains - 1))
            current = nxt if nxt < current else nxt + 1
    return u


def sample_mechanisms(n: int, n_domains: int, sparsity: float, seed,
                      budget: int | None = None, max_tries: int = 1000) -> list[Mechanism]:
    """Draw one sparse transition per domain with pairwise-distinct mechanisms.

    Masks are Bernoulli(sparsity) with at least one parent per row. For
    ``sparsity < 1`` masks are redrawn until they differ pairwise; with full masks
    the weights must instead differ by ``MIN_WEIGHT_GAP`` in some entry.
    """
    if not 0 < sparsity <= 1:
        raise ValueError("sparsity must be in (0, 1]")
    full = sparsity >= 1.0
    if n == 1 and n_domains > 1 and not full:
        raise ValueError("n = 1 forces identical masks; mechanism variability is unsatisfiable")
    rng = _rng(seed)

    def draw_mask():
        for _ in range(max_tries):
            m = rng.random((n, n)) < sparsity
            for i in np.flatnonzero(~m.any(axis=1)):
                m[i, rng.integers(n)] = True
            if budget is None or m.sum() <= budget:
                return m
        raise ValueError(f"cannot draw a mask within budget {budget}")

    masks: list[np.ndarray] = []
    for _ in range(n_domains):
        for _ in range(max_tries):
            m = draw_mask()
            if full or all((m != other).any() for other in masks):
                masks.append(m)
                break
        else:
            raise ValueError("could not draw pairwise-distinct masks; raise n or lower sparsity")

    mechs: list[Mechanism] = []
    for m in masks:
        for _ in range(max_tries):
            w = rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=(n, n)) * m
            if not full or all(np.max(np.abs(w - o.weights)) >= MIN_WEIGHT_GAP for o in mechs):
                break
        else:
            raise ValueError("could not draw sufficiently different weights")
        b = rng.uniform(-BIAS_RANGE, BIAS_RANGE, size=n)
        mechs.append(Mechanism(weights=w, bias=b, mask=m))
    return mechs


def sample_mixing(n: int, n_layers: int, seed, slope: float = MIX_SLOPE) -> MixingFunction:
    rng = _rng(seed)
    layers = []
    for _ in range(n_layers):
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        layers.append(q * np.sign(np.diag(r)))
    return MixingFunction(tuple(layers), slope)


def simulate(u: np.ndarray, mechanisms: list[Mechanism], mixing: MixingFunction, noise: float,
             rng: np.random.Generator, z1: np.ndarray | None = None) -> SyntheticSequence:
    T = len(u)
    n = mechanisms[0].weights.shape[0]
    z = np.empty((T, n))
    z[0] = rng.standard_normal(n) if z1 is None else z1
    for t in range(1, T):
        z[t] = mechanisms[u[t]](z[t - 1]) + noise * rng.standard_normal(n)
    return SyntheticSequence(x=mixing(z), z=z, u=np.asarray(u), mechanisms=mechanisms, mixing=mixing)


def generate_dataset(cfg: SynthConfig) -> list[SyntheticSequence]:
    """``cfg.n_sequences`` sequences sharing one set of mechanisms and one mixing."""
    root = np.random.SeedSequence(cfg.seed)
    s_mech, s_mix, *s_seqs = root.spawn(2 + cfg.n_sequences)
    mechs = sample_mechanisms(cfg.n, cfg.n_domains, cfg.sparsity, np.random.default_rng(s_mech))
    mixing = sample_mixing(cfg.n, cfg.mixing_layers, np.random.default_rng(s_mix))
    out = []
    for s in s_seqs:
        rng = np.random.default_rng(s)
        u = sample_domains(cfg.T, cfg.n_domains, cfg.min_dwell, cfg.mean_dwell, rng)
        out.append(simulate(u, mechs, mixing, cfg.noise, rng))
    return out


def generate(cfg: SynthConfig) -> SyntheticSequence:
    """A single sequence (the first of the dataset ``cfg`` describes)."""
    return generate_dataset(SynthConfig(**{**cfg.to_dict(), "n_sequences": 1}))[0]


def identifiability_score(estimated, truth) -> float:
    """Frame agreement maximised over relabelings of the estimate."""
    est = np.asarray(estimated)
    tru = np.asarray(truth)
    if est.shape != tru.shape:
        raise ValueError("identifiability_score: length mismatch")
    if est.size == 0:
        return 1.0
    e_vals, e_idx = np.unique(est, return_inverse=True)
    t_vals, t_idx = np.unique(tru, return_inverse=True)
    k = max(len(e_vals), len(t_vals))
    if k > 8:
        raise ValueError(f"identifiability_score: {k} labels exceed the exhaustive limit of 8")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (e_idx, t_idx), 1)
    best = max(counts[np.arange(k), list(p)].sum() for p in itertools.permutations(range(k)))
    return float(best) / est.size


# ---------------------------------------------------------------- dataset writer

def write_dataset(out_dir, seqs: list[SyntheticSequence], cfg: SynthConfig,
                  extra_manifest: dict | None = None) -> Path:
    """Write ``seq_XXXX.bin`` feature matrices, ``seq_XXXX.labels.csv`` and ``manifest.json``."""
    from .featio import write_matrix

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(seqs):
        stem = f"seq_{i:04d}"
        write_matrix(out / f"{stem}.bin", s.x)
        lines = ["frame,u"] + [f"{t},{int(v)}" for t, v in enumerate(s.u)]
        (out / f"{stem}.labels.csv").write_text("\n".join(lines) + "\n")
        files.append({"id": stem, "rows": int(s.x.shape[0]), "cols": int(s.x.shape[1])})
    manifest = {"kind": "synthetic", "config": cfg.to_dict(), "seed": cfg.seed, "files": files}
    if extra_manifest:
        manifest.update(extra_manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
