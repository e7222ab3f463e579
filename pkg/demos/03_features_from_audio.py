"""Synthesize a 'cry-like' clip, write it as WAV, and turn it into log-mel frames."""
import tempfile
from pathlib import Path

import numpy as np

from crstc import dsp

sr = 22050
t = np.arange(int(6.5 * sr)) / sr
# quiet noise with a 400 Hz harmonic burst from 2 s to 3.5 s
x = 0.01 * np.random.default_rng(0).standard_normal(len(t))
burst = (t > 2.0) & (t < 3.5)
x[burst] += 0.3 * sum(np.sin(2 * np.pi * 400 * h * t[burst]) / h for h in (1, 2, 3))

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "toy.wav"
    dsp.write_wav(path, dsp.AudioClip(x, sr))
    clip = dsp.read_wav(path)

cfg = dsp.FeatureConfig()
# resampled to 16 kHz and zero padded to 8 s
prepared = dsp.prepare(clip, cfg)
print("prepared", prepared.sample_rate, "Hz,", len(prepared.samples) / prepared.sample_rate, "s")

feats = dsp.extract_features(prepared, cfg.grid(), cfg).frames
print("features", feats.shape)

# frames past 6.5 s are padding and sit at the log floor; threshold on the real audio
energy = feats.max(axis=1)
real = energy[: int(6.5 / 0.05)]
loud = np.flatnonzero(energy > 0.5 * (real.max() + np.median(real)))
print(f"loud frames {loud.min()}..{loud.max()} -> {loud.min() * 0.05:.2f}-{(loud.max() + 1) * 0.05:.2f} s")
