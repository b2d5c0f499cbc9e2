# %% [markdown]
# # Training a single canceller
#
# Fit the least-squares linear canceller and a Wiener model on the Wiener
# dataset, then compare their self-interference attenuation (SIA) on the
# held-out test split.  A shortened epoch budget keeps this quick.

# %%
from dataclasses import replace

from fdsic.evaluation import test_sia
from fdsic.harness.config import build_dataset, load_config
from fdsic.neuralnet import count_params, default_arch
from fdsic.training import fit_linear_ls, linear_predict, predict, train, two_stage

cfg = load_config()
ds = build_dataset(cfg, "wiener")

# %%
lin = fit_linear_ls(ds)
print("linear LS SIA: %.1f dB" % test_sia(ds, linear_predict(lin, ds.input.samples)))

# %%
arch = default_arch("wiener")
adam = replace(cfg.adam["wiener"], epochs=200, seed=cfg.train_seed("wiener", "wiener", False))
print(arch.kind, count_params(arch), "parameters")
params, report = train(arch, ds, adam)
print("Wiener model SIA: %.1f dB (best epoch %d, %.1f s)" % (
    test_sia(ds, predict(arch, params, ds.input.samples)), report.best_epoch, report.wall_time_s))
print("loss curve (every 40 epochs):", [f"{l:.2e}" for _, l in report.loss_curve[::40]])

# %%
# With linear premodeling the nonlinear model only sees the LS residual; the
# combined canceller starts at the linear solution and cannot end below it.
lin, params2, _ = two_stage(arch, ds, adam)
print("premodeled Wiener SIA: %.1f dB" % test_sia(ds, predict(arch, params2, ds.input.samples, lin)))
