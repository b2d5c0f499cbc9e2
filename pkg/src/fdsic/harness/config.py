"""Experiment configuration, seed derivation and dataset synthesis/caching.

All constants the reference comparison leaves open live in one TOML file;
``fdsic init`` writes the defaults.  Every random stream is keyed by
``derive_seed(global_seed, label)`` with these labels:

``ofdm``                             transmit signal
``channel``                          SI channel taps
``noise/hammerstein``, ``noise/wiener``  receiver noise
``train/<model>/<dataset>/<plain|premodel>``  training initialization
"""

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli_w

from ..frontend import (
    AdParams,
    ChannelProfile,
    PaParams,
    SiDataset,
    fir_convolve,
    gen_hammerstein,
    gen_wiener,
    load_dataset,
    load_recording,
    make_channel,
    noise_for_snr,
    pa_apply,
    save_dataset,
    split_ranges,
)
from ..neuralnet import KINDS
from ..rng import check_seed, derive_seed
from ..signal import ConfigError, OfdmConfig, generate_ofdm, quantize_f32
from ..training import AdamConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SYNTHETIC = ("hammerstein", "wiener")


def default_adam():
    return {
        "linear": AdamConfig(lr=1e-2, lr_final=1e-4, epochs=500),
        "hammerstein": AdamConfig(lr=1e-2, lr_final=1e-4, epochs=1000, batch_len=2000),
        "wiener": AdamConfig(lr=1e-2, lr_final=1e-4, epochs=1000, batch_len=2000),
        "wiener_hammerstein": AdamConfig(lr=1e-2, lr_final=1e-4, epochs=2000, batch_len=2000, restarts=3),
        "ffnn": AdamConfig(lr=3e-3, lr_final=1e-4, epochs=1000, batch_len=2000),
    }


@dataclass(frozen=True)
class ChannelSection:
    profile: str = "exponential"
    rms_delay_spread_s: float = 30e-9
    n_taps: int = 13


@dataclass(frozen=True)
class NoiseSection:
    snr_db: float = 60.0


@dataclass(frozen=True)
class GridSection:
    models: tuple = KINDS
    datasets: tuple = SYNTHETIC
    premodel: str = "both"

    @property
    def premodel_flags(self):
        return {"off": (False,), "on": (True,), "both": (False, True)}[self.premodel]


@dataclass(frozen=True)
class ExperimentConfig:
    global_seed: int = 0
    output_dir: str = "out"
    test_fraction: float = 0.1
    context_len: int = 13
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    pa: PaParams = PaParams(f=1.0, c_f=2.0)
    ad: AdParams = AdParams(c_g=0.75, alpha=1.0)
    channel: ChannelSection = field(default_factory=ChannelSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    grid: GridSection = field(default_factory=GridSection)
    adam: dict = field(default_factory=default_adam)

    def validate(self):
        try:
            check_seed(self.global_seed)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        self.ofdm_config().validate()
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.context_len < 1 or self.channel.n_taps < 1:
            raise ConfigError("context_len and channel.n_taps must be positive")
        if self.channel.profile not in ("exponential", "dirac"):
            raise ConfigError(f"unknown channel profile {self.channel.profile!r}")
        if self.grid.premodel not in ("off", "on", "both"):
            raise ConfigError("grid.premodel must be one of off, on, both")
        unknown = set(self.grid.models) - set(KINDS)
        if unknown:
            raise ConfigError(f"unknown models {sorted(unknown)}")
        unknown = set(self.grid.datasets) - set(SYNTHETIC + ("recorded",))
        if unknown:
            raise ConfigError(f"unknown datasets {sorted(unknown)}")
        missing = set(self.grid.models) - set(self.adam)
        if missing:
            raise ConfigError(f"no adam settings for {sorted(missing)}")
        return self

    def ofdm_config(self):
        return replace(self.ofdm, seed=derive_seed(self.global_seed, "ofdm"))

    def channel_profile(self):
        return ChannelProfile(self.channel.profile, self.channel.rms_delay_spread_s, self.ofdm.sample_rate_hz)

    def train_seed(self, model, dataset, premodel):
        return derive_seed(self.global_seed, f"train/{model}/{dataset}/{'premodel' if premodel else 'plain'}")

    # -- serialization ---------------------------------------------------------

    def to_dict(self):
        ofdm = asdict(self.ofdm)
        ofdm.pop("seed")
        adam = {}
        for kind, cfg in self.adam.items():
            d = asdict(cfg)
            d.pop("seed")
            adam[kind] = {k: v for k, v in d.items() if v is not None}
        return {
            "experiment": {
                "global_seed": self.global_seed,
                "output_dir": self.output_dir,
                "test_fraction": self.test_fraction,
                "context_len": self.context_len,
            },
            "ofdm": ofdm,
            "pa": asdict(self.pa),
            "ad": asdict(self.ad),
            "channel": asdict(self.channel),
            "noise": asdict(self.noise),
            "grid": {**asdict(self.grid), "models": list(self.grid.models), "datasets": list(self.grid.datasets)},
            "adam": adam,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        known = {"experiment", "ofdm", "pa", "ad", "channel", "noise", "grid", "adam"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        try:
            exp = doc.get("experiment", {})
            adam = default_adam()
            for kind, section in doc.get("adam", {}).items():
                adam[kind] = replace(adam[kind], **section) if kind in adam else AdamConfig(**section)
            grid = dict(doc.get("grid", {}))
            for key in ("models", "datasets"):
                if key in grid:
                    grid[key] = tuple(grid[key])
            defaults = cls()
            cfg = cls(
                global_seed=int(exp.get("global_seed", 0)),
                output_dir=str(exp.get("output_dir", "out")),
                test_fraction=float(exp.get("test_fraction", 0.1)),
                context_len=int(exp.get("context_len", 13)),
                ofdm=OfdmConfig(**doc.get("ofdm", {})),
                pa=replace(defaults.pa, **doc.get("pa", {})),
                ad=replace(defaults.ad, **doc.get("ad", {})),
                channel=ChannelSection(**doc.get("channel", {})),
                noise=NoiseSection(**doc.get("noise", {})),
                grid=GridSection(**grid),
                adam=adam,
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid config: {err}") from None
        return cfg.validate()

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def hash(self):
        """Content hash of everything that affects numbers (output_dir excluded)."""
        doc = self.to_dict()
        doc["experiment"].pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None, **overrides):
    """Read a TOML config (defaults when ``path`` is None) and apply overrides."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
        cfg = ExperimentConfig.from_dict(doc)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    grid_keys = {f.name for f in fields(GridSection)}
    grid_over = {k: v for k, v in overrides.items() if k in grid_keys}
    top_over = {k: v for k, v in overrides.items() if k not in grid_keys}
    if grid_over:
        top_over["grid"] = replace(cfg.grid, **grid_over)
    return replace(cfg, **top_over).validate()


# -- datasets -------------------------------------------------------------------


def dataset_subconfig(cfg, kind):
    """The part of the config that determines dataset ``kind``."""
    doc = cfg.to_dict()
    sub = {
        "kind": kind,
        "global_seed": cfg.global_seed,
        "test_fraction": cfg.test_fraction,
        "ofdm": doc["ofdm"],
        "channel": doc["channel"],
        "noise": doc["noise"],
    }
    sub["pa" if kind == "hammerstein" else "ad"] = doc["pa" if kind == "hammerstein" else "ad"]
    return sub


def dataset_key(cfg, kind):
    blob = json.dumps(dataset_subconfig(cfg, kind), sort_keys=True, separators=(",", ":")).encode()
    return f"{kind}-{hashlib.sha256(blob).hexdigest()[:16]}"


def _quantized(ds):
    # datasets are used exactly as they would be read back from cs16k files
    return SiDataset(
        quantize_f32(ds.input), quantize_f32(ds.target), ds.split_train, ds.split_test, ds.provenance, ds.meta
    )


def synth_signals(cfg):
    """Transmit signal, channel and noise-free SI paths for ``cfg``."""
    s = generate_ofdm(cfg.ofdm_config())
    ch = make_channel(cfg.channel_profile(), cfg.channel.n_taps, derive_seed(cfg.global_seed, "channel"))
    clean_h = fir_convolve(pa_apply(s.samples, cfg.pa), ch)
    clean_w = fir_convolve(s.samples, ch)
    noise_h = noise_for_snr(clean_h, cfg.noise.snr_db, derive_seed(cfg.global_seed, "noise/hammerstein"))
    noise_w = noise_for_snr(clean_w, cfg.noise.snr_db, derive_seed(cfg.global_seed, "noise/wiener"))
    return s, ch, noise_h, noise_w


def build_dataset(cfg, kind):
    s, ch, noise_h, noise_w = synth_signals(cfg)
    split = split_ranges(len(s), cfg.test_fraction)
    if kind == "hammerstein":
        ds = gen_hammerstein(s, cfg.pa, ch, noise_h, split)
    elif kind == "wiener":
        ds = gen_wiener(s, ch, cfg.ad, noise_w, split)
    else:
        raise ConfigError(f"cannot synthesize dataset {kind!r}")
    meta = dict(ds.meta, key=dataset_key(cfg, kind), global_seed=cfg.global_seed, config_hash=cfg.hash())
    return _quantized(SiDataset(ds.input, ds.target, ds.split_train, ds.split_test, ds.provenance, meta))


def cache_dataset(cfg, kind, cache_dir):
    """Synthesize ``kind`` into ``cache_dir/<key>/`` unless already present."""
    target = Path(cache_dir) / dataset_key(cfg, kind)
    if not (target / "dataset.json").exists():
        save_dataset(build_dataset(cfg, kind), target)
    return target


def load_cached_dataset(cfg, kind, cache_dir):
    target = Path(cache_dir) / dataset_key(cfg, kind)
    if not (target / "dataset.json").exists():
        raise FileNotFoundError(f"no cached {kind} dataset at {target}; run `fdsic gen` first")
    return load_dataset(target)


def resolve_datasets(cfg, from_cache=None, real_data=None):
    """Datasets named in ``cfg.grid.datasets``; ``recorded`` needs ``real_data``."""
    out = {}
    for kind in cfg.grid.datasets:
        if kind == "recorded":
            if real_data is None:
                continue
            fmt = "raw" if str(real_data[0]).endswith((".f32", ".raw", ".bin")) else "cs16k"
            sidecar = real_data[2] if len(real_data) > 2 else None
            out[kind] = load_recording(real_data[0], real_data[1], fmt, sidecar, cfg.test_fraction)
        elif from_cache is not None:
            out[kind] = load_cached_dataset(cfg, kind, from_cache)
        else:
            out[kind] = build_dataset(cfg, kind)
    return out


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    tmp.replace(path)


def noise_floors(cfg):
    """Receiver noise sequences as they appear at the dataset output (Wiener noise scaled by the LNA gain)."""
    s, _, noise_h, noise_w = synth_signals(cfg)
    n = len(s)
    return s.with_samples(noise_h.draw(n)), s.with_samples(cfg.ad.alpha * noise_w.draw(n))
