"""Audio loading, resampling, padding and log-mel features on a fixed frame grid."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.io import wavfile

DEFAULT_RATE = 16000
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if not np.all(np.isfinite(s)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    frame_len_s: float = 0.05
    n_frames: int = 160
    clip_len_s: float = 8.0

    def __post_init__(self):
        if abs(self.n_frames * self.frame_len_s - self.clip_len_s) > 1e-9:
            raise ValueError(
                f"grid mismatch: {self.n_frames} x {self.frame_len_s} s != {self.clip_len_s} s")

    @classmethod
    def from_frames(cls, n_frames: int, frame_len_s: float = 0.05) -> "FrameGrid":
        return cls(frame_len_s, n_frames, n_frames * frame_len_s)


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = DEFAULT_RATE
    n_mels: int = 40
    n_fft: int | None = None       # default: next power of two >= frame length
    fmin: float = 0.0
    fmax: float | None = None      # default: Nyquist
    clip_len_s: float = 8.0
    frame_len_s: float = 0.05
    kind: str = "log-mel"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown feature config keys: {sorted(unknown)}")
        return cls(**d)

    def grid(self) -> FrameGrid:
        return FrameGrid(self.frame_len_s, int(round(self.clip_len_s / self.frame_len_s)),
                         self.clip_len_s)


@dataclass
class FeatureSequence:
    frames: np.ndarray
    grid: FrameGrid
    feature_kind: str = "log-mel"

    def __post_init__(self):
        if len(self.frames) != self.grid.n_frames:
            raise ValueError(f"{len(self.frames)} frames for a {self.grid.n_frames}-frame grid")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("features must be finite")


# ---------------------------------------------------------------- I/O

def read_wav(path) -> AudioClip:
    """Read PCM16 or float32 WAV as mono in [-1, 1]; channels are averaged."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise ValueError(f"{path}: malformed WAV ({exc})") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")
    if x.size == 0:
        raise ValueError(f"{path}: empty data chunk")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(np.clip(x, -1.0, 1.0), int(rate))


def write_wav(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    if fmt == "pcm16":
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError("fmt must be 'pcm16' or 'float32'")
    wavfile.write(path, clip.sample_rate, data)


# ---------------------------------------------------------------- time-domain ops

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling with endpoints pinned.

    Output length is ``round(len * target / source)``; the first and last
    samples map onto each other so the duration is preserved to within one
    sample period.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip.samples)
    n_out = max(1, int(round(n_in * target_rate / clip.sample_rate)))
    if n_in == 1 or n_out == 1:
        return AudioClip(np.full(n_out, clip.samples[0]), target_rate)
    pos = np.linspace(0.0, n_in - 1, n_out)
    return AudioClip(np.interp(pos, np.arange(n_in), clip.samples), target_rate)


def pad_or_trim(clip: AudioClip, target_s: float = 8.0) -> AudioClip:
    if target_s <= 0:
        raise ValueError("target_s must be positive")
    n = int(round(target_s * clip.sample_rate))
    s = clip.samples
    out = s[:n] if len(s) >= n else np.concatenate([s, np.zeros(n - len(s))])
    return AudioClip(out, clip.sample_rate)


# ---------------------------------------------------------------- features

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1), peak height 1."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        if fb[m].sum() == 0:
            # band narrower than one FFT bin: give it the nearest bin
            fb[m, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    return fb


def _frames(samples: np.ndarray, frame_len: int, n_frames: int) -> np.ndarray:
    need = frame_len * n_frames
    if len(samples) < need:
        samples = np.concatenate([samples, np.zeros(need - len(samples))])
    return samples[:need].reshape(n_frames, frame_len)


def mel_energies(clip: AudioClip, grid: FrameGrid, cfg: FeatureConfig) -> np.ndarray:
    """Pre-log mel energies, shape (n_frames, n_mels)."""
    frame_len = int(round(grid.frame_len_s * clip.sample_rate))
    n_fft = cfg.n_fft or 1 << max(0, math.ceil(math.log2(frame_len)))
    if n_fft < frame_len:
        raise ValueError(f"n_fft={n_fft} is smaller than the frame length {frame_len}")
    if cfg.n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    frames = _frames(clip.samples, frame_len, grid.n_frames) * np.hanning(frame_len + 2)[1:-1]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mels, n_fft, clip.sample_rate, cfg.fmin, cfg.fmax)
    return power @ fb.T


def extract_features(clip: AudioClip, grid: FrameGrid | None = None,
                     cfg: FeatureConfig | None = None) -> FeatureSequence:
    """Log-mel vector per frame, non-overlapping Hann windows one frame long."""
    cfg = cfg or FeatureConfig()
    grid = grid or cfg.grid()
    if abs(clip.duration - grid.clip_len_s) > 1.0 / clip.sample_rate:
        raise ValueError(f"clip lasts {clip.duration:.4f} s, grid expects {grid.clip_len_s} s")
    if cfg.kind != "log-mel":
        raise ValueError(f"unsupported feature kind {cfg.kind!r}")
    energy = mel_energies(clip, grid, cfg)
    return FeatureSequence(np.log(np.maximum(energy, LOG_FLOOR)), grid, cfg.kind)


def frame_rms(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    frame_len = int(round(grid.frame_len_s * clip.sample_rate))
    return np.sqrt((_frames(clip.samples, frame_len, grid.n_frames) ** 2).mean(axis=1))


def prepare(clip: AudioClip, cfg: FeatureConfig | None = None) -> AudioClip:
    """Resample to the configured rate and pad/trim to the clip length."""
    cfg = cfg or FeatureConfig()
    return pad_or_trim(resample(clip, cfg.sample_rate), cfg.clip_len_s)


def fit_standardizer(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std over all frames; zero std replaced by 1."""
    x = np.concatenate([np.asarray(s, dtype=np.float64) for s in seqs])
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return x.mean(axis=0), sd


def apply_standardizer(seq, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(seq, dtype=np.float64) - mean) / std
