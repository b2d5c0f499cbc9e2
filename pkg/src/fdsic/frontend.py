"""Self-interference front ends and dataset synthesis.

Two block-structured SI paths are simulated:

* Hammerstein: ``y_H = PA(s) * h + n_H`` with the arctan AM/AM amplifier
  ``PA(s) = f * arctan(c_f |s|) * exp(j arg s)``.
* Wiener: ``y_W = AD(alpha * (z * h + n_W))`` where ``AD`` clips the magnitude
  at ``c_g`` and keeps the phase.

The linear channel ``h`` is a frozen tapped-delay line drawn from an exponential
power-delay profile (an approximation of the indoor WLAN "Model C", RMS delay
spread 30 ns at 20 MHz).
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import check_seed, generator
from .signal import (
    ComplexSeq,
    SequenceFormatError,
    as_array,
    mean_power,
    read_cseq,
    write_cseq,
)

PROVENANCES = ("hammerstein", "wiener", "recorded")


class LoadError(Exception):
    """Base class for recording/dataset load failures."""


class HeaderError(LoadError):
    pass


class LengthMismatchError(LoadError):
    pass


class NonFiniteError(LoadError):
    pass


@dataclass(frozen=True)
class PaParams:
    f: float = 1.0
    c_f: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.f) and np.isfinite(self.c_f) and self.f > 0 and self.c_f > 0):
            raise ValueError("PaParams needs finite f > 0 and c_f > 0")


@dataclass(frozen=True)
class AdParams:
    c_g: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not (self.c_g > 0 and self.alpha > 0):
            raise ValueError("AdParams needs c_g > 0 and alpha > 0")


@dataclass(frozen=True)
class ChannelProfile:
    """Power-delay profile; ``kind`` is ``"exponential"`` or ``"dirac"``."""

    kind: str = "exponential"
    rms_delay_spread_s: float = 30e-9
    sample_rate_hz: float = 20e6

    def tap_powers(self, n_taps):
        if self.kind == "dirac":
            p = np.zeros(n_taps)
            p[0] = 1.0
            return p
        if self.kind == "exponential":
            spacing = 1.0 / self.sample_rate_hz
            return np.exp(-np.arange(n_taps) * spacing / self.rms_delay_spread_s)
        raise ValueError(f"unknown channel profile {self.kind!r}")


@dataclass(frozen=True)
class SiChannel:
    taps: np.ndarray
    seed: int = 0
    profile: ChannelProfile = field(default_factory=ChannelProfile)

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.taps, dtype=np.complex128))
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("SiChannel needs at least one tap")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def impulse(cls, n_taps=1):
        taps = np.zeros(n_taps, dtype=np.complex128)
        taps[0] = 1.0
        return cls(taps, profile=ChannelProfile("dirac"))


@dataclass(frozen=True)
class NoiseSpec:
    """Circular complex Gaussian noise; ``variance`` is per complex sample."""

    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValueError("noise variance must be nonnegative")

    def draw(self, n):
        if self.variance == 0:
            return np.zeros(n, dtype=np.complex128)
        w = generator(self.seed).standard_normal((2, n))
        return np.sqrt(self.variance / 2) * (w[0] + 1j * w[1])


def noise_for_snr(clean, snr_db, seed=0):
    """NoiseSpec whose variance sits ``snr_db`` below the power of ``clean``."""
    return NoiseSpec(mean_power(clean) / 10 ** (snr_db / 10), seed)


@dataclass(frozen=True)
class SiDataset:
    input: ComplexSeq
    target: ComplexSeq
    split_train: range
    split_test: range
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.input)
        if len(self.target) != n:
            raise ValueError("input and target lengths differ")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        tr, te = self.split_train, self.split_test
        covered = sorted([(tr.start, tr.stop), (te.start, te.stop)])
        if covered[0][0] != 0 or covered[0][1] != covered[1][0] or covered[1][1] != n:
            raise ValueError("train/test ranges must be disjoint and cover the sequence")

    def __len__(self):
        return len(self.input)

    def with_target(self, target):
        return SiDataset(self.input, target, self.split_train, self.split_test, self.provenance, dict(self.meta))


def split_ranges(n, test_fraction=0.1):
    """Contiguous split: first samples for training, the last ``test_fraction`` for testing."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise ValueError("sequence too short to split")
    return range(0, n - n_test), range(n - n_test, n)


def _phase(x):
    # arg(0) := 0
    mag = np.abs(x)
    safe = np.where(mag > 0, mag, 1.0)
    # divide the parts separately: complex / real division overflows for subnormal |x|
    u = x.real / safe + 1j * (x.imag / safe)
    return np.where(mag > 0, u, 1.0 + 0j), mag


def pa_apply(s, p):
    """Arctan AM/AM power amplifier, phase preserving; works on scalars and arrays."""
    u, mag = _phase(np.asarray(s, dtype=np.complex128))
    out = p.f * np.arctan(p.c_f * mag) * u
    return out[()] if out.ndim == 0 else out


def ad_apply(y, p):
    """Magnitude clipping at ``p.c_g``; the LNA gain is applied by the caller."""
    u, mag = _phase(np.asarray(y, dtype=np.complex128))
    out = np.minimum(mag, p.c_g) * u
    return out[()] if out.ndim == 0 else out


def make_channel(profile=ChannelProfile(), n_taps=13, seed=0):
    """Draw complex Gaussian taps with the profile's mean powers, normalized to unit energy."""
    if n_taps < 1:
        raise ValueError("n_taps must be positive")
    powers = profile.tap_powers(n_taps)
    w = generator(check_seed(seed)).standard_normal((2, n_taps))
    taps = np.sqrt(powers / 2) * (w[0] + 1j * w[1])
    energy = np.sum(np.abs(taps) ** 2)
    if energy == 0:
        taps[0], energy = 1.0, 1.0
    return SiChannel(taps / np.sqrt(energy), seed, profile)


def fir_convolve(x, h):
    """Causal convolution, truncated to the input length (zero initial state)."""
    taps = h.taps if isinstance(h, SiChannel) else np.asarray(h, dtype=np.complex128)
    xs = as_array(x)
    y = np.convolve(xs, taps)[: xs.size]
    return x.with_samples(y) if isinstance(x, ComplexSeq) else y


def gen_hammerstein(s, pa, ch, noise, split=None):
    """Hammerstein SI dataset: ``target = PA(s) * h + n``."""
    x = s.samples
    y = fir_convolve(pa_apply(x, pa), ch) + noise.draw(x.size)
    train, test = split if split is not None else split_ranges(x.size)
    meta = {"pa": asdict(pa), "channel_seed": ch.seed, "noise": asdict(noise)}
    return SiDataset(s, s.with_samples(y), train, test, "hammerstein", meta)


def gen_wiener(z, ch, ad, noise, split=None):
    """Wiener SI dataset: ``target = AD(alpha * (z * h + n))``; noise enters before gain and clipping."""
    x = z.samples
    y = ad_apply(ad.alpha * (fir_convolve(x, ch) + noise.draw(x.size)), ad)
    train, test = split if split is not None else split_ranges(x.size)
    meta = {"ad": asdict(ad), "channel_seed": ch.seed, "noise": asdict(noise)}
    return SiDataset(z, z.with_samples(y), train, test, "wiener", meta)


def save_dataset(ds, directory, stem="dataset"):
    """Write ``<stem>.input.cseq``, ``<stem>.target.cseq`` and a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cseq(directory / f"{stem}.input.cseq", ds.input)
    write_cseq(directory / f"{stem}.target.cseq", ds.target)
    sidecar = {
        "provenance": ds.provenance,
        "split": {
            "train": [ds.split_train.start, ds.split_train.stop],
            "test": [ds.split_test.start, ds.split_test.stop],
        },
        "meta": ds.meta,
    }
    tmp = directory / f"{stem}.json.tmp"
    tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    tmp.replace(directory / f"{stem}.json")
    return directory / f"{stem}.json"


def _read_cseq_checked(path):
    try:
        x, fs = read_cseq(path)
    except SequenceFormatError as err:
        raise HeaderError(str(err)) from None
    return x, fs


def _read_raw_f32(path, sidecar):
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise HeaderError(f"{path}: size {len(raw)} is not a whole number of float32 pairs")
    body = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return body[0::2] + 1j * body[1::2], float(sidecar.get("sample_rate_hz", 20e6))


def load_recording(input_path, target_path, fmt="cs16k", sidecar_path=None, test_fraction=0.1):
    """Load an externally recorded (input, SI) pair as a ``recorded`` dataset.

    ``fmt`` is ``"cs16k"`` (two cs16k v1 files) or ``"raw"`` (interleaved
    little-endian float32 with a JSON sidecar giving ``sample_rate_hz``).  When
    a sidecar carrying a ``split`` entry is supplied it is honored, otherwise a
    90/10 split is applied.
    """
    sidecar = json.loads(Path(sidecar_path).read_text()) if sidecar_path else {}
    if fmt == "cs16k":
        x, fs = _read_cseq_checked(input_path)
        y, _ = _read_cseq_checked(target_path)
    elif fmt == "raw":
        x, fs = _read_raw_f32(input_path, sidecar)
        y, _ = _read_raw_f32(target_path, sidecar)
    else:
        raise ValueError(f"unknown recording format {fmt!r}")
    if x.size != y.size:
        raise LengthMismatchError(f"input has {x.size} samples, target has {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteError("recording contains non-finite samples")
    if "split" in sidecar:
        train = range(*sidecar["split"]["train"])
        test = range(*sidecar["split"]["test"])
    else:
        train, test = split_ranges(x.size, test_fraction)
    meta = dict(sidecar.get("meta", {}))
    meta["source"] = [str(input_path), str(target_path)]
    return SiDataset(ComplexSeq(x, fs), ComplexSeq(y, fs), train, test, "recorded", meta)


def load_dataset(directory, stem="dataset"):
    """Inverse of :func:`save_dataset`, keeping the stored provenance."""
    directory = Path(directory)
    side = directory / f"{stem}.json"
    ds = load_recording(directory / f"{stem}.input.cseq", directory / f"{stem}.target.cseq", sidecar_path=side)
    provenance = json.loads(side.read_text())["provenance"]
    return SiDataset(ds.input, ds.target, ds.split_train, ds.split_test, provenance, ds.meta)
