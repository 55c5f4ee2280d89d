"""Synthetic wireless-device data with per-device spectral signatures.

Each device carries a fixed pseudo-noise signature: smooth random per-bin
gain and phase offsets added to the transmitted message spectrum, bounded to
a tenth of the carrier magnitude so the perturbation stays harmless to the
message itself. A received sample is message spectrum + signature + channel
noise; subtracting the known message spectrum leaves the residual, which by
construction depends on the device and the noise but never on the message.

Samples are rendered as 32x32x3 tensors: residual magnitude, residual phase,
and the baseband (message) spectral magnitude.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

SIG_LEN = 1024
IMG_SIDE = 32
N_CHANNELS = 3
CARRIER_MAG = float(np.sqrt(SIG_LEN))  # RMS spectral magnitude of a unit-power message
MAX_GAIN_FRACTION = 0.1
N_FRAMES = 64  # frames averaged by the receiver when estimating the residual

MAGIC = b"CSIL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
TRAIN_FRACTION = 0.6

# fixed stream tags so every random draw has its own deterministic substream
_TAG_GAIN, _TAG_PHASE, _TAG_SCALE = 101, 102, 103
_TAG_MESSAGE, _TAG_NOISE, _TAG_JITTER = 201, 202, 203
_TAG_PROFILE, _TAG_SAMPLE = 301, 302


class DatasetFormatError(ValueError):
    """Raised when a dataset container cannot be parsed."""


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def _smooth_standard_curve(rng: np.random.Generator, n: int, sigma_bins: float) -> np.ndarray:
    """White noise circularly smoothed across bins, rescaled to unit max-abs."""
    raw = rng.standard_normal(n)
    half = int(4 * sigma_bins)
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / sigma_bins) ** 2)
    kernel /= kernel.sum()
    smooth = np.zeros(n)
    for off, k in zip(offsets, kernel):
        smooth += k * np.roll(raw, off)
    return smooth / np.abs(smooth).max()


@dataclass(frozen=True)
class DeviceProfile:
    """Fixed spectral perturbation of one transmitter."""

    device_id: int
    gain: np.ndarray    # (SIG_LEN,) signed amplitude offsets, |gain| <= 0.1 * carrier
    phase: np.ndarray   # (SIG_LEN,) radians
    drift_scale: float  # per-sample jitter magnitude, as a fraction of the carrier

    def signature(self) -> np.ndarray:
        return self.gain * np.exp(1j * self.phase)


def make_profile(device_id: int, seed: int, drift_scale: float = 0.005) -> DeviceProfile:
    """Deterministic device signature; distinct seeds give uncorrelated curves."""
    bound = MAX_GAIN_FRACTION * CARRIER_MAG
    curve = _smooth_standard_curve(_rng(seed, _TAG_GAIN), SIG_LEN, sigma_bins=4.0)
    curve /= np.sqrt((curve * curve).mean())
    # fill most of the allowed range, hard-limited at the bound
    rms_target = _rng(seed, _TAG_SCALE).uniform(0.45, 0.7) * bound
    gain = np.clip(curve * rms_target, -bound, bound)
    phase = np.pi * _smooth_standard_curve(_rng(seed, _TAG_PHASE), SIG_LEN, sigma_bins=4.0)
    return DeviceProfile(device_id, gain, phase, drift_scale)


def _message_spectrum(message_seed: int) -> np.ndarray:
    rng = _rng(message_seed, _TAG_MESSAGE)
    symbols = (rng.choice([-1.0, 1.0], SIG_LEN) + 1j * rng.choice([-1.0, 1.0], SIG_LEN))
    return np.fft.fft(symbols / np.sqrt(2.0))


def synthesize_residual(profile: DeviceProfile, snr_db: float, message_seed: int,
                        noise_seed: int | None = None) -> np.ndarray:
    """Complex spectral residual: signature + per-sample jitter + channel noise."""
    if noise_seed is None:
        noise_seed = message_seed
    residual = profile.signature().copy()
    if profile.drift_scale > 0:
        jrng = _rng(noise_seed, _TAG_JITTER)
        jitter = jrng.standard_normal(SIG_LEN) + 1j * jrng.standard_normal(SIG_LEN)
        residual += profile.drift_scale * CARRIER_MAG * jitter / np.sqrt(2.0)
    if np.isfinite(snr_db):
        # averaging the residual over repeated frames divides the noise power
        sigma = np.sqrt(10.0 ** (-snr_db / 10.0) / N_FRAMES)
        nrng = _rng(noise_seed, _TAG_NOISE)
        noise = (nrng.standard_normal(SIG_LEN) + 1j * nrng.standard_normal(SIG_LEN))
        residual += np.fft.fft(sigma * noise / np.sqrt(2.0))
    return residual


def synthesize_sample(profile: DeviceProfile, snr_db: float, message_seed: int,
                      noise_seed: int | None = None) -> np.ndarray:
    """One 32x32x3 tensor: |residual|, angle(residual), |message spectrum|."""
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError("snr_db must be finite or +inf (noise-free)")
    residual = synthesize_residual(profile, snr_db, message_seed, noise_seed)
    spectrum = _message_spectrum(message_seed)
    shape = (IMG_SIDE, IMG_SIDE)
    channels = np.stack([
        np.abs(residual).reshape(shape),
        np.angle(residual).reshape(shape),
        np.abs(spectrum).reshape(shape),
    ], axis=-1)
    return channels.astype(np.float32)


@dataclass
class SignalDataset:
    """Sample tensors with labels and a deterministic 60/40 stratified split."""

    tensors: np.ndarray          # (n, 32, 32, 3) float32
    labels: np.ndarray           # (n,) int32
    n_devices: int
    train_idx: np.ndarray = field(default=None)  # type: ignore[assignment]
    val_idx: np.ndarray = field(default=None)    # type: ignore[assignment]
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None

    def __post_init__(self):
        if self.train_idx is None or self.val_idx is None:
            self.train_idx, self.val_idx = stratified_split(self.labels, self.n_devices)

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    def subset(self, classes) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(x_train, y_train, x_val, y_val) restricted to the given class ids."""
        classes = np.asarray(list(classes))
        tr = self.train_idx[np.isin(self.labels[self.train_idx], classes)]
        va = self.val_idx[np.isin(self.labels[self.val_idx], classes)]
        return (self.tensors[tr], self.labels[tr].astype(np.int64),
                self.tensors[va], self.labels[va].astype(np.int64))


def stratified_split(labels: np.ndarray, n_devices: int) -> tuple[np.ndarray, np.ndarray]:
    """Per device, the first 60% of its samples (in stored order) are training."""
    train, val = [], []
    for dev in range(n_devices):
        idx = np.flatnonzero(labels == dev)
        cut = int(np.floor(TRAIN_FRACTION * len(idx)))
        train.append(idx[:cut])
        val.append(idx[cut:])
    return np.concatenate(train), np.concatenate(val)


def make_dataset(n_devices: int, samples_per_device: int, snr_db: float,
                 seed: int, drift_scale: float = 0.005) -> SignalDataset:
    """Generate, split, and per-channel standardize (train statistics only)."""
    if n_devices < 1 or samples_per_device < 2:
        raise ValueError("need at least 1 device and 2 samples per device")
    tensors = np.empty((n_devices * samples_per_device, IMG_SIDE, IMG_SIDE, N_CHANNELS),
                       dtype=np.float32)
    labels = np.empty(n_devices * samples_per_device, dtype=np.int32)
    pos = 0
    for dev in range(n_devices):
        profile_seed = int(np.random.SeedSequence([seed, _TAG_PROFILE, dev]).generate_state(1)[0])
        profile = make_profile(dev, profile_seed, drift_scale)
        for s in range(samples_per_device):
            msg_seed = int(np.random.SeedSequence([seed, _TAG_SAMPLE, dev, s]).generate_state(1)[0])
            tensors[pos] = synthesize_sample(profile, snr_db, msg_seed)
            labels[pos] = dev
            pos += 1
    ds = SignalDataset(tensors, labels, n_devices)
    train = ds.tensors[ds.train_idx].astype(np.float64)
    mean = train.mean(axis=(0, 1, 2))
    std = train.std(axis=(0, 1, 2))
    std[std == 0.0] = 1.0
    ds.tensors = ((ds.tensors.astype(np.float64) - mean) / std).astype(np.float32)
    ds.channel_mean, ds.channel_std = mean, std
    return ds


def save_dataset(ds: SignalDataset, path) -> None:
    """Write the binary container: header, float32 tensors, int32 labels."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, ds.n_devices, ds.n_samples,
                              IMG_SIDE, IMG_SIDE, N_CHANNELS))
        fh.write(np.ascontiguousarray(ds.tensors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i4").tobytes())


def load_dataset(path) -> SignalDataset:
    """Read a container; rejects bad magic, bad version, or truncated data."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than header")
    magic, version, n_devices, n_samples, d0, d1, d2 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if (d0, d1, d2) != (IMG_SIDE, IMG_SIDE, N_CHANNELS):
        raise DatasetFormatError(f"{path}: unexpected tensor dims {(d0, d1, d2)}")
    tensor_bytes = n_samples * d0 * d1 * d2 * 4
    expected = _HEADER.size + tensor_bytes + n_samples * 4
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: size {len(raw)} does not match expected {expected} bytes")
    tensors = np.frombuffer(raw, dtype="<f4", count=n_samples * d0 * d1 * d2,
                            offset=_HEADER.size).reshape(n_samples, d0, d1, d2).copy()
    labels = np.frombuffer(raw, dtype="<i4", count=n_samples,
                           offset=_HEADER.size + tensor_bytes).copy()
    if n_samples and (labels.min() < 0 or labels.max() >= n_devices):
        raise DatasetFormatError(f"{path}: label outside [0, {n_devices})")
    return SignalDataset(tensors, labels, int(n_devices))


def write_manifest(ds: SignalDataset, path) -> None:
    """CSV of device ids with total / train / val sample counts."""
    train_labels = ds.labels[ds.train_idx]
    val_labels = ds.labels[ds.val_idx]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "n_samples", "n_train", "n_val"])
        for dev in range(ds.n_devices):
            writer.writerow([dev, int((ds.labels == dev).sum()),
                             int((train_labels == dev).sum()),
                             int((val_labels == dev).sum())])
