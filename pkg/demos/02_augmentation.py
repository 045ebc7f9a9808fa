"""Corpus expansion: what each augmentation family actually does.

Applies time stretch, pitch shift, and noise to a test tone and measures the
effect, then expands a small synthetic corpus with the default plan and
checks the bookkeeping (counts, labels, groups).
"""

import tempfile
from pathlib import Path

import numpy as np

from convser.audio_io import AudioBuffer
from convser.augmentation import AugmentationPlan, add_noise, augment_dataset, pitch_shift, time_stretch
from convser.synth_data import SynthSpec, generate_corpus

rate = 44100
t = np.arange(rate) / rate
tone = AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), rate)


def dominant(buf):
    power = np.abs(np.fft.rfft(buf.samples - buf.samples.mean())) ** 2
    return int(np.argmax(power)) * buf.sample_rate / len(buf.samples)


print("440 Hz tone, 1.0 s")
for rate_factor in (0.9, 1.1):
    out = time_stretch(tone, rate_factor)
    print(f"  stretch {rate_factor}: {out.duration:.3f} s, dominant {dominant(out):.1f} Hz")
for semitones in (-2, 2, 12):
    out = pitch_shift(tone, semitones)
    print(f"  pitch {semitones:+d} st: {out.duration:.3f} s, dominant {dominant(out):.1f} Hz "
          f"(target {440 * 2 ** (semitones / 12):.1f})")
for snr in (20.0, 10.0):
    out = add_noise(tone, snr, seed=1)
    noise = out.samples - tone.samples
    measured = 10 * np.log10(np.mean(tone.samples**2) / np.mean(noise**2))
    print(f"  noise {snr:.0f} dB target: measured {measured:.2f} dB")

workdir = Path(tempfile.mkdtemp(prefix="convser_demo_"))
manifest = generate_corpus(SynthSpec(n_originals=6, duration_s=1.0, seed=1), workdir / "src")
merged = augment_dataset(manifest, AugmentationPlan(rng_seed=1), workdir / "aug")
print(f"\ncorpus: {len(manifest)} originals -> {len(merged)} records "
      f"({AugmentationPlan().size} per original)")
labels = merged.label_counts()
print(f"label balance preserved: {labels[1]}x1 / {labels[0]}x0")
family = [rec.id for rec in merged.records if rec.group_id == "synth000"]
print("one variant family:", ", ".join(family))
