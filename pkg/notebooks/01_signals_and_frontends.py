# %% [markdown]
# # Transmit signal, front-end nonlinearities and the SI channel
#
# Walk through the synthetic data pipeline: a QPSK-OFDM transmit signal, the
# power-amplifier (Hammerstein) and A/D-saturation (Wiener) receive paths, and
# how strongly each bends the signal away from a purely linear channel.

# %%
import numpy as np

from fdsic.frontend import AdParams, PaParams, ad_apply, pa_apply
from fdsic.harness.config import build_dataset, load_config, noise_floors
from fdsic.signal import generate_ofdm, mean_power, welch_psd

cfg = load_config()
s = generate_ofdm(cfg.ofdm_config())
print(len(s), "samples at", s.sample_rate_hz / 1e6, "MHz, mean power", round(mean_power(s), 6))

# %%
# Peak-to-average power ratio: OFDM is peaky, which is what the PA and the
# A/D clipper act on.
mag = np.abs(s.samples)
print("PAPR %.1f dB" % (10 * np.log10(mag.max() ** 2 / mean_power(s))))

# %%
# AM/AM curves of the two memoryless nonlinearities at the default settings.
r = np.linspace(0, 3, 7)
print("|x|        ", np.round(r, 2))
print("PA  arctan ", np.round(np.abs(pa_apply(r, cfg.pa)), 3))
print("A/D clip   ", np.round(np.abs(ad_apply(r, cfg.ad)), 3))
print("fraction of samples clipped: %.2f" % np.mean(mag > cfg.ad.c_g))

# %%
# Both datasets share the same transmit signal and channel.  The noise is set
# 60 dB below the SI before the receiver nonlinearity, so the Wiener ratio
# measured after clipping comes out lower.
ds_h = build_dataset(cfg, "hammerstein")
ds_w = build_dataset(cfg, "wiener")
noise_h, noise_w = noise_floors(cfg)
for name, ds, n in (("hammerstein", ds_h, noise_h), ("wiener", ds_w, noise_w)):
    snr = 10 * np.log10(mean_power(ds.target) / mean_power(n))
    print(f"{name:12s} target power {mean_power(ds.target):.3f}  SI-to-noise {snr:.1f} dB")

# %%
# Welch PSDs: in-band power versus the noise floor and the spectral regrowth
# the nonlinearities leave outside the 52 used subcarriers.
for name, x in (("s", s), ("y_H", ds_h.target), ("y_W", ds_w.target), ("noise_H", noise_h)):
    f, p = welch_psd(x, 256)
    inband = np.abs(f) <= 26 * 20e6 / 64
    print(f"{name:8s} in-band {10*np.log10(p[inband].mean()):7.1f} dB/Hz   "
          f"out-of-band {10*np.log10(p[~inband].mean()):7.1f} dB/Hz")
