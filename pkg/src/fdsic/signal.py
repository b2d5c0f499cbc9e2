"""Baseband transmit signal synthesis and sequence utilities.

The transmit signal is a QPSK-OFDM waveform with 802.11n-like 20 MHz numerology
(64-point FFT, 52 used subcarriers, 16-sample cyclic prefix).  Sequences are
carried around as :class:`ComplexSeq` and can be written to and read from the
``cs16k v1`` binary format.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .rng import check_seed, generator

CSEQ_MAGIC = b"CSEQ"
CSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIQd")


class ConfigError(ValueError):
    """Invalid configuration values."""


class SequenceFormatError(ValueError):
    """Malformed or truncated ``cs16k`` file."""


@dataclass(frozen=True)
class ComplexSeq:
    """Complex baseband samples plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate_hz: float = 20e6

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.samples, dtype=np.complex128))
        if x.ndim != 1 or x.size < 1:
            raise ValueError("ComplexSeq needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(x)):
            raise ValueError("ComplexSeq samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)

    def with_samples(self, samples):
        return ComplexSeq(samples, self.sample_rate_hz)


def as_array(x):
    """Samples of a ComplexSeq, or ``x`` itself as a complex array."""
    if isinstance(x, ComplexSeq):
        return x.samples
    return np.asarray(x, dtype=np.complex128)


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers_total: int = 64
    n_subcarriers_used: int = 52
    cp_len: int = 16
    n_symbols: int = 250
    target_mean_power: float = 1.0
    sample_rate_hz: float = 20e6
    seed: int = 0

    def validate(self):
        if self.n_subcarriers_total < 2:
            raise ConfigError("n_subcarriers_total must be >= 2")
        if not 1 <= self.n_subcarriers_used <= self.n_subcarriers_total - 1:
            raise ConfigError("n_subcarriers_used must lie in [1, n_subcarriers_total - 1] (DC unused)")
        if self.cp_len < 0 or self.cp_len > self.n_subcarriers_total:
            raise ConfigError("cp_len must lie in [0, n_subcarriers_total]")
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be positive")
        if not (self.target_mean_power > 0 and np.isfinite(self.target_mean_power)):
            raise ConfigError("target_mean_power must be positive and finite")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")
        try:
            check_seed(self.seed)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return self

    @property
    def length(self):
        return self.n_symbols * (self.n_subcarriers_total + self.cp_len)


def used_subcarriers(cfg):
    """FFT bin indices of the used subcarriers, split evenly around DC.

    With an odd count the extra carrier goes to the positive side.
    """
    n_pos = (cfg.n_subcarriers_used + 1) // 2
    n_neg = cfg.n_subcarriers_used // 2
    pos = np.arange(1, n_pos + 1)
    neg = cfg.n_subcarriers_total - np.arange(1, n_neg + 1)[::-1]
    return np.concatenate([neg, pos])


def qpsk_grid(cfg):
    """QPSK symbols (n_symbols x n_subcarriers_used) carried by :func:`generate_ofdm`."""
    cfg.validate()
    bits = generator(cfg.seed).integers(0, 2, size=(cfg.n_symbols, cfg.n_subcarriers_used, 2))
    return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2)


def generate_ofdm(cfg=OfdmConfig()):
    """Synthesize a QPSK-OFDM baseband sequence scaled to ``cfg.target_mean_power``."""
    cfg.validate()
    nfft = cfg.n_subcarriers_total
    grid = np.zeros((cfg.n_symbols, nfft), dtype=np.complex128)
    grid[:, used_subcarriers(cfg)] = qpsk_grid(cfg)
    body = np.fft.ifft(grid, axis=1)
    frames = np.concatenate([body[:, nfft - cfg.cp_len:], body], axis=1)
    x = frames.reshape(-1)
    x *= np.sqrt(cfg.target_mean_power / mean_power(x))
    return ComplexSeq(x, cfg.sample_rate_hz)


def demodulate_ofdm(x, cfg):
    """Strip cyclic prefixes and FFT each symbol; returns the used-subcarrier grid."""
    nfft = cfg.n_subcarriers_total
    frames = as_array(x)[: cfg.length].reshape(cfg.n_symbols, nfft + cfg.cp_len)
    return np.fft.fft(frames[:, cfg.cp_len:], axis=1)[:, used_subcarriers(cfg)]


def mean_power(x):
    x = as_array(x)
    if x.size == 0:
        return 0.0
    return float(np.mean(x.real**2 + x.imag**2))


def welch_psd(x, seg_len=256, overlap=0.5):
    """Two-sided Welch PSD with a Hann window.

    Returns ``(freqs_hz, density)`` with frequencies ascending from -fs/2.  The
    density is rescaled so that ``sum(density) * df`` equals ``mean_power(x)``
    exactly; the averaged periodogram only guarantees that in expectation.
    """
    seq = x if isinstance(x, ComplexSeq) else ComplexSeq(x)
    n = len(seq)
    if seg_len < 1 or seg_len > n:
        raise ValueError(f"seg_len must lie in [1, {n}], got {seg_len}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    fs = seq.sample_rate_hz
    freqs, pxx = scipy.signal.welch(
        seq.samples,
        fs=fs,
        window="hann",
        nperseg=seg_len,
        noverlap=int(round(overlap * seg_len)),
        return_onesided=False,
        scaling="density",
        detrend=False,
    )
    freqs = np.fft.fftshift(freqs)
    pxx = np.fft.fftshift(pxx)
    df = fs / seg_len
    total = pxx.sum() * df
    if total > 0:
        pxx = pxx * (mean_power(seq) / total)
    return freqs, pxx


def write_cseq(path, x):
    """Write ``x`` as a ``cs16k v1`` file (samples stored as float32 pairs)."""
    seq = x if isinstance(x, ComplexSeq) else ComplexSeq(x)
    body = np.empty(2 * len(seq), dtype="<f4")
    body[0::2] = seq.samples.real
    body[1::2] = seq.samples.imag
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(CSEQ_MAGIC, CSEQ_VERSION, len(seq), seq.sample_rate_hz))
        fh.write(body.tobytes())
    tmp.replace(path)


def read_cseq(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SequenceFormatError(f"{path}: file shorter than the cs16k header")
    magic, version, length, fs = _HEADER.unpack_from(raw)
    if magic != CSEQ_MAGIC:
        raise SequenceFormatError(f"{path}: bad magic {magic!r}")
    if version != CSEQ_VERSION:
        raise SequenceFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * length
    if len(raw) != expected:
        raise SequenceFormatError(f"{path}: expected {expected} bytes for {length} samples, found {len(raw)}")
    if length < 1 or not fs > 0:
        raise SequenceFormatError(f"{path}: empty sequence or invalid sample rate")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return body[0::2] + 1j * body[1::2], fs


def quantize_f32(x):
    """Round samples through complex64, as storing them in ``cs16k`` would."""
    seq = x if isinstance(x, ComplexSeq) else ComplexSeq(x)
    return seq.with_samples(seq.samples.astype(np.complex64).astype(np.complex128))
