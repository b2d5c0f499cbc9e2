# %% [markdown]
# # Model x dataset comparison
#
# Runs the full default grid (five models, two synthetic datasets, with and
# without linear premodeling) and prints it in the layout of the reference
# comparison table.  This takes around ten minutes on one core; pass
# ``--quick`` for a reduced epoch budget.

# %%
import sys
from dataclasses import replace

from fdsic.evaluation import GridConfig, format_table, run_grid
from fdsic.harness.config import load_config, resolve_datasets

cfg = load_config()
adam = cfg.adam
if "--quick" in sys.argv:
    adam = {k: replace(v, epochs=max(1, v.epochs // 10), restarts=1) for k, v in adam.items()}

datasets = resolve_datasets(cfg)
seeds = {(m, d, f): cfg.train_seed(m, d, f) for m in cfg.grid.models for d in datasets for f in (False, True)}
reports = run_grid(GridConfig(datasets, adam, seeds=seeds))

# %%
print(format_table(reports))
print()
for r in reports:
    if r.sia_db_paper is not None:
        print(f"{r.model_kind:18s} {r.dataset_provenance:11s} premodel={str(r.premodeling):5s} "
              f"SIA {r.sia_db:5.1f} dB   reference {r.sia_db_paper:5.1f} dB")
