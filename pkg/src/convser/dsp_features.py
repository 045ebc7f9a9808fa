"""MFCC feature extraction.

Signal path per frame: Hamming window -> FFT power spectrum -> triangular Mel
filterbank -> log energies -> DCT-II. Three assembly modes are supported:

* ``classic13``  -- cepstral coefficients c1..c12 plus the frame log energy
  as a thirteenth column.
* ``static40``   -- the first 40 DCT coefficients c0..c39.
* ``delta39e``   -- the classic 13 columns, their first- and second-order
  temporal deltas, and the frame log energy duplicated as a 40th column.

The finished matrix is zero-centered, scaled into [-1, 1] by its largest
absolute deviation, and zero-padded (or tail-truncated) to a fixed number of
frames so every utterance presents the same shape to the classifier.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer
from .exceptions import ParameterError

FEATURE_MODES = ("classic13", "static40", "delta39e")


@dataclass
class FeatureConfig:
    sample_rate: int = 44100
    frame_len: int = 8192
    hop: int = 8192
    n_fft: int | None = None
    n_mels: int = 64
    n_mfcc: int = 40
    feature_mode: str = "static40"
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10
    max_frames: int = 775

    def __post_init__(self):
        if self.n_fft is None:
            self.n_fft = self.frame_len
        if self.fmax is None:
            self.fmax = self.sample_rate / 2
        if self.frame_len < 2 or self.frame_len & (self.frame_len - 1):
            raise ParameterError(f"frame_len must be a power of two, got {self.frame_len}")
        if self.n_fft != self.frame_len:
            raise ParameterError("n_fft must equal frame_len")
        if self.hop < 1:
            raise ParameterError("hop must be >= 1")
        if self.feature_mode not in FEATURE_MODES:
            raise ParameterError(f"feature_mode {self.feature_mode!r} not in {FEATURE_MODES}")
        if self.feature_mode == "classic13" and self.n_mfcc != 13:
            raise ParameterError("classic13 requires n_mfcc = 13")
        if self.feature_mode in ("static40", "delta39e") and self.n_mfcc != 40:
            raise ParameterError(f"{self.feature_mode} requires n_mfcc = 40")
        # static modes read n_mfcc DCT coefficients; delta39e only reads 13
        needed = 13 if self.feature_mode in ("classic13", "delta39e") else self.n_mfcc
        if self.n_mels < needed:
            raise ParameterError(f"n_mels = {self.n_mels} too small for {self.feature_mode}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ParameterError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin} fmax={self.fmax}"
            )
        if self.log_floor <= 0:
            raise ParameterError("log_floor must be positive")
        if self.max_frames < 1:
            raise ParameterError("max_frames must be >= 1")

    @classmethod
    def for_width(cls, n_mfcc: int, mode40: str = "static40", **overrides) -> "FeatureConfig":
        """The standard config for a 13- or 40-coefficient feature vector."""
        if n_mfcc == 13:
            return cls(n_mfcc=13, feature_mode="classic13", **overrides)
        if n_mfcc == 40:
            return cls(n_mfcc=40, feature_mode=mode40, **overrides)
        raise ParameterError(f"n_mfcc must be 13 or 40, got {n_mfcc}")


@dataclass
class FeatureMatrix:
    """max_frames x n_mfcc matrix; rows beyond n_valid_frames are zero padding."""

    values: np.ndarray
    n_valid_frames: int


def config_hash(config) -> str:
    """Stable hex digest of a config dataclass (sorted-key JSON over fields)."""
    payload = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def frame_signal(buffer: AudioBuffer, frame_len: int, hop: int) -> np.ndarray:
    """Split a signal into frames of frame_len samples every hop samples.

    Trailing samples that do not fill a whole frame are dropped, so the frame
    count is floor((len - frame_len)/hop) + 1.
    """
    x = buffer.samples
    if hop < 1:
        raise ParameterError("hop must be >= 1")
    if len(x) < frame_len:
        raise ParameterError(
            f"signal of {len(x)} samples is shorter than one frame ({frame_len})"
        )
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n-1)), k = 0..n-1."""
    if n < 2:
        raise ParameterError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def fft_power_spectrum(frame: np.ndarray) -> np.ndarray:
    """One-sided power spectrum |X[k]|^2, k = 0..n/2, of a real frame."""
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if n < 2 or n & (n - 1):
        raise ParameterError(f"frame length must be a power of two, got {n}")
    spectrum = np.fft.rfft(frame, axis=-1)
    return np.abs(spectrum) ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular filters, n_mels x (n_fft/2 + 1), peak weight 1.0 at each
    filter's center bin.

    Centers are equally spaced on the Mel scale between fmin and fmax. Each
    filter rises linearly from the previous center bin to its own and falls
    to the next, so every FFT bin between the first and last center gets
    nonzero weight from at least one filter.
    """
    n_bins = config.n_fft // 2 + 1
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.round(hz_points * config.n_fft / config.sample_rate).astype(int)
    bins = np.minimum(bins, n_bins - 1)
    if np.any(np.diff(bins) < 1):
        raise ParameterError(
            f"{config.n_mels} Mel filters collapse at n_fft={config.n_fft}: "
            "adjacent centers map to the same FFT bin; reduce n_mels or raise frame_len"
        )

    fb = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        left, center, right = bins[m], bins[m + 1], bins[m + 2]
        up = np.arange(left, center + 1)
        fb[m, up] = (up - left) / (center - left)
        down = np.arange(center, right + 1)
        fb[m, down] = (right - down) / (right - center)
        fb[m, center] = 1.0
    return fb


def log_mel_energies(power: np.ndarray, filterbank: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    """ln(filterbank . power + log_floor); accepts one spectrum or a stack."""
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != filterbank.shape[1]:
        raise ParameterError(
            f"power spectrum has {power.shape[-1]} bins, filterbank expects {filterbank.shape[1]}"
        )
    return np.log(power @ filterbank.T + log_floor)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, n x n: D @ D.T = identity."""
    j = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    d = np.cos(np.pi * j * (m + 0.5) / n)
    d[0] *= np.sqrt(1.0 / n)
    d[1:] *= np.sqrt(2.0 / n)
    return d


def dct_ii(values: np.ndarray, n_out: int) -> np.ndarray:
    """First n_out coefficients of the orthonormal DCT-II of a vector."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    if n_out > n:
        raise ParameterError(f"n_out = {n_out} exceeds input size {n}")
    return values @ dct_matrix(n)[:n_out].T


def frame_log_energy(frame: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    """ln(sum of squared samples + log_floor), computed on the raw frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] == 0:
        raise ParameterError("empty frame")
    return np.log(np.sum(frame * frame, axis=-1) + log_floor)


def delta(features: np.ndarray, window: int = 2) -> np.ndarray:
    """Temporal regression delta with boundary replication.

    d_t = sum_{n=1..W} n (c_{t+n} - c_{t-n}) / (2 sum_{n=1..W} n^2), where
    frames beyond either end are replicated from the nearest valid frame.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] < 1:
        raise ParameterError("need at least one frame")
    padded = np.pad(features, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(features)
    for n in range(1, window + 1):
        out += n * (padded[window + n : window + n + len(features)]
                    - padded[window - n : window - n + len(features)])
    return out / denom


def normalize_centered(matrix: np.ndarray, n_valid: int | None = None) -> np.ndarray:
    """Zero-center and scale into [-1, 1] by the max absolute deviation.

    Statistics are taken over the first n_valid rows only (all rows by
    default); any remaining rows are forced to zero. A constant matrix maps
    to all zeros.
    """
    matrix = np.array(matrix, dtype=np.float64)
    if n_valid is None:
        n_valid = len(matrix)
    if n_valid < 1:
        raise ParameterError("need at least one valid frame")
    valid = matrix[:n_valid]
    mu = valid.mean()
    spread = np.abs(valid - mu).max()
    if spread == 0.0:
        matrix[:n_valid] = 0.0
    else:
        matrix[:n_valid] = (valid - mu) / spread
    matrix[n_valid:] = 0.0
    return matrix


def extract_features(buffer: AudioBuffer, config: FeatureConfig) -> FeatureMatrix:
    """Run the full per-utterance feature pipeline.

    The buffer must already be at config.sample_rate (resample first). Output
    is a max_frames x n_mfcc matrix normalized into [-1, 1]; rows past the
    valid frame count are zero.
    """
    if buffer.sample_rate != config.sample_rate:
        raise ParameterError(
            f"buffer rate {buffer.sample_rate} != config rate {config.sample_rate}; resample first"
        )
    frames = frame_signal(buffer, config.frame_len, config.hop)
    energy = frame_log_energy(frames, config.log_floor)

    windowed = frames * hamming_window(config.frame_len)
    power = fft_power_spectrum(windowed)
    fb = mel_filterbank(config)
    log_e = log_mel_energies(power, fb, config.log_floor)

    if config.feature_mode == "static40":
        basis = dct_matrix(config.n_mels)[: config.n_mfcc]
        raw = log_e @ basis.T
    else:
        basis = dct_matrix(config.n_mels)[:13]
        cepstra = log_e @ basis.T
        base13 = np.column_stack([cepstra[:, 1:13], energy])
        if config.feature_mode == "classic13":
            raw = base13
        else:  # delta39e
            d1 = delta(base13)
            d2 = delta(d1)
            raw = np.column_stack([base13, d1, d2, energy])

    n_valid = min(len(raw), config.max_frames)
    values = np.zeros((config.max_frames, config.n_mfcc))
    values[:n_valid] = normalize_centered(raw[:n_valid])
    return FeatureMatrix(values=values, n_valid_frames=n_valid)


# --- On-disk feature store ----------------------------------------------------
#
# One CSV per sample (row = frame, column = coefficient) plus a JSON sidecar
# recording the config hash, the source content hash, and the valid frame
# count, so stale features are detected cheaply.


def features_paths(directory, sample_id: str):
    directory = Path(directory)
    return directory / f"{sample_id}.features.csv", directory / f"{sample_id}.features.json"


def save_features(fm: FeatureMatrix, directory, sample_id: str, config: FeatureConfig,
                  content_hash: str = "") -> None:
    csv_path, sidecar_path = features_paths(directory, sample_id)
    np.savetxt(csv_path, fm.values, fmt="%.17g", delimiter=",")
    sidecar = {
        "id": sample_id,
        "n_valid_frames": int(fm.n_valid_frames),
        "n_frames": int(fm.values.shape[0]),
        "n_mfcc": int(fm.values.shape[1]),
        "config_hash": config_hash(config),
        "content_hash": content_hash,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_features(directory, sample_id: str) -> FeatureMatrix:
    csv_path, sidecar_path = features_paths(directory, sample_id)
    sidecar = json.loads(sidecar_path.read_text())
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    return FeatureMatrix(values=values, n_valid_frames=int(sidecar["n_valid_frames"]))


def cached_features_fresh(directory, sample_id: str, config: FeatureConfig,
                          content_hash: str) -> bool:
    """True when a stored feature file matches both config and source hashes."""
    csv_path, sidecar_path = features_paths(directory, sample_id)
    if not (csv_path.is_file() and sidecar_path.is_file()):
        return False
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return (
        sidecar.get("config_hash") == config_hash(config)
        and sidecar.get("content_hash") == content_hash
    )
