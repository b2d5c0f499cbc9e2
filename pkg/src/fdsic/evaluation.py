"""Self-interference attenuation and the model x dataset comparison grid."""

import csv
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .neuralnet import KINDS, count_macs, count_params, default_arch, save_checkpoint
from .signal import as_array
from .training import AdamConfig, predict, train, two_stage

log = logging.getLogger(__name__)

SIA_CAP_DB = 120.0

# Reference values of the original comparison (synthetic columns plus the
# recorded-data column).  Keys: (model, dataset, premodeling).
REFERENCE_SIA_DB = {
    ("linear", "recorded", False): 37.9,
    ("linear", "hammerstein", False): 10.2,
    ("linear", "wiener", False): 10.5,
    ("ffnn", "recorded", False): 39.8,
    ("ffnn", "recorded", True): 44.6,
    ("ffnn", "hammerstein", False): 20.2,
    ("ffnn", "hammerstein", True): 21.1,
    ("ffnn", "wiener", False): 30.3,
    ("ffnn", "wiener", True): 31.0,
    ("hammerstein", "recorded", False): 38.1,
    ("hammerstein", "recorded", True): 42.9,
    ("hammerstein", "hammerstein", False): 53.3,
    ("hammerstein", "hammerstein", True): 39.3,
    ("hammerstein", "wiener", False): 12.0,
    ("hammerstein", "wiener", True): 12.6,
    ("wiener", "recorded", False): 39.0,
    ("wiener", "recorded", True): 42.4,
    ("wiener", "hammerstein", False): 14.3,
    ("wiener", "hammerstein", True): 10.3,
    ("wiener", "wiener", False): 59.9,
    ("wiener", "wiener", True): 40.6,
    ("wiener_hammerstein", "recorded", False): 39.1,
    ("wiener_hammerstein", "recorded", True): 42.9,
    ("wiener_hammerstein", "hammerstein", False): 58.1,
    ("wiener_hammerstein", "hammerstein", True): 39.6,
    ("wiener_hammerstein", "wiener", False): 59.7,
    ("wiener_hammerstein", "wiener", True): 12.6,
}
REFERENCE_PARAMS = {"linear": 26, "ffnn": 495, "hammerstein": 42, "wiener": 51, "wiener_hammerstein": 66}
REFERENCE_GMACS = {
    "linear": 0.00053,
    "ffnn": 0.01468,
    "hammerstein": 0.00143,
    "wiener": 0.00152,
    "wiener_hammerstein": 0.00187,
}

CSV_COLUMNS = [
    "model",
    "dataset",
    "premodeling",
    "status",
    "sia_db",
    "sia_db_paper",
    "param_count",
    "param_count_paper",
    "gmacs_computed",
    "gmacs_paper",
    "train_mse",
    "test_mse",
    "epochs_run",
    "best_epoch",
    "train_seed",
    "global_seed",
    "config_hash",
    "error",
]


class UndefinedMetricError(ValueError):
    pass


def sia(target, pred):
    """Self-interference attenuation in dB, capped at +120 dB for a zero residual."""
    t, p = as_array(target), as_array(pred)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} vs {p.size}")
    signal = float(np.sum(t.real**2 + t.imag**2))
    if signal == 0:
        raise UndefinedMetricError("SIA is undefined for an all-zero target")
    e = t - p
    residual = float(np.sum(e.real**2 + e.imag**2))
    if residual == 0:
        return SIA_CAP_DB
    return float(min(10 * np.log10(signal / residual), SIA_CAP_DB))


def test_sia(dataset, pred):
    te = dataset.split_test
    return sia(dataset.target.samples[te.start: te.stop], as_array(pred)[te.start: te.stop])


@dataclass
class EvalReport:
    model_kind: str
    dataset_provenance: str
    premodeling: bool
    sia_db: float
    param_count: int
    gmacs_computed: float
    gmacs_paper: float | None = None
    sia_db_paper: float | None = None
    train_meta: dict = field(default_factory=dict)
    status: str = "ok"
    error: str = ""

    @property
    def key(self):
        return (self.model_kind, self.dataset_provenance, self.premodeling)

    def to_dict(self):
        return asdict(self)


def evaluate_cell(arch, dataset, premodeling=False, cfg=AdamConfig(), checkpoint=None):
    """Train one (model, dataset, premodeling) cell and measure test-range SIA.

    Training failures are caught and reported with ``status="failed"``.
    """
    kind, prov = arch.kind, dataset.provenance
    base = dict(
        model_kind=kind,
        dataset_provenance=prov,
        premodeling=premodeling,
        param_count=count_params(arch),
        gmacs_computed=count_macs(arch, len(dataset)),
        gmacs_paper=REFERENCE_GMACS.get(kind),
        sia_db_paper=REFERENCE_SIA_DB.get((kind, prov, premodeling)),
    )
    try:
        if premodeling:
            lin, params, report = two_stage(arch, dataset, cfg)
        else:
            lin = None
            params, report = train(arch, dataset, cfg)
        value = test_sia(dataset, predict(arch, params, dataset.input.samples, lin))
    except Exception as err:  # noqa: BLE001 - a failed cell must not stop the grid
        log.warning("cell %s/%s/%s failed: %s", kind, prov, premodeling, err)
        return EvalReport(sia_db=float("nan"), status="failed", error=f"{type(err).__name__}: {err}", **base)
    if checkpoint is not None:
        save_checkpoint(checkpoint, arch, params, report.seed)
        if lin is not None:
            save_checkpoint(Path(str(checkpoint) + ".premodel"), default_arch("linear", arch.context_len), lin)
    meta = report.to_dict()
    meta.pop("loss_curve")
    meta["loss_curve_tail"] = report.loss_curve[-5:]
    meta["lr"] = cfg.lr
    meta["configured_epochs"] = cfg.epochs
    return EvalReport(sia_db=value, train_meta=meta, **base)


@dataclass
class GridConfig:
    """What to evaluate.

    ``datasets`` maps a provenance name to an SiDataset; ``adam`` maps a model
    kind to its AdamConfig; ``seeds`` optionally maps (model, dataset, flag)
    to a training seed overriding the AdamConfig seed.
    """

    datasets: dict
    adam: dict
    models: tuple = KINDS
    premodel: tuple = (False, True)
    context_len: int = 13
    seeds: dict = field(default_factory=dict)
    checkpoint_dir: str | None = None
    jobs: int = 1


def _run_cell(job):
    arch, dataset, flag, cfg, checkpoint = job
    t0 = time.perf_counter()
    rep = evaluate_cell(arch, dataset, flag, cfg, checkpoint)
    log.info(
        "%-18s %-11s premodel=%-5s SIA %6.2f dB (%.1fs)",
        arch.kind, dataset.provenance, flag, rep.sia_db, time.perf_counter() - t0,
    )
    return rep


def grid_cells(grid):
    """Cell jobs in canonical (model, dataset, premodeling) order."""
    jobs = []
    for kind in grid.models:
        arch = default_arch(kind, grid.context_len)
        for name, dataset in grid.datasets.items():
            for flag in grid.premodel:
                cfg = grid.adam[kind]
                seed = grid.seeds.get((kind, name, flag))
                if seed is not None:
                    cfg = AdamConfig(**{**asdict(cfg), "seed": seed})
                ckpt = None
                if grid.checkpoint_dir is not None:
                    ckpt = Path(grid.checkpoint_dir) / f"{kind}__{name}__{'premodel' if flag else 'plain'}"
                jobs.append((arch, dataset, flag, cfg, ckpt))
    return jobs


def run_grid(grid):
    """Evaluate every requested cell; per-cell failures are recorded, not raised."""
    jobs = grid_cells(grid)
    if grid.jobs > 1:
        with ProcessPoolExecutor(max_workers=grid.jobs) as pool:
            reports = list(pool.map(_run_cell, jobs))
    else:
        reports = [_run_cell(job) for job in jobs]
    # merge by key, never by completion order
    order = {(a.kind, d.provenance, f): i for i, (a, d, f, _, _) in enumerate(jobs)}
    return sorted(reports, key=lambda r: order[r.key])


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(round(value, 10))
    return str(value)


def table_rows(reports, global_seed=None, config_hash=""):
    rows = []
    for r in reports:
        meta = r.train_meta
        rows.append({
            "model": r.model_kind,
            "dataset": r.dataset_provenance,
            "premodeling": r.premodeling,
            "status": r.status,
            "sia_db": r.sia_db,
            "sia_db_paper": r.sia_db_paper,
            "param_count": r.param_count,
            "param_count_paper": REFERENCE_PARAMS.get(r.model_kind),
            "gmacs_computed": r.gmacs_computed,
            "gmacs_paper": r.gmacs_paper,
            "train_mse": meta.get("final_train_mse"),
            "test_mse": meta.get("final_test_mse"),
            "epochs_run": meta.get("epochs_run"),
            "best_epoch": meta.get("best_epoch"),
            "train_seed": meta.get("seed"),
            "global_seed": global_seed,
            "config_hash": config_hash,
            "error": r.error,
        })
    return rows


def to_csv(reports, global_seed=None, config_hash=""):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in table_rows(reports, global_seed, config_hash):
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def to_json(reports, global_seed=None, config_hash=""):
    doc = {
        "global_seed": global_seed,
        "config_hash": config_hash,
        "sia_scope": "test split only",
        "gmacs_convention": "one MAC per real parameter per output sample",
        "cells": [r.to_dict() for r in reports],
    }
    return json.dumps(doc, indent=2, default=float)


def format_table(reports):
    """Plain-text rendering in the layout of the reference comparison table."""
    by_key = {r.key: r for r in reports}
    datasets = sorted({r.dataset_provenance for r in reports}, key=("recorded", "hammerstein", "wiener").index)
    head = f"{'model':<20}{'#params':>8}{'GMACs':>10}{'(ref)':>10}" + "".join(f"{d:>22}" for d in datasets)
    lines = [head, "-" * len(head)]
    for kind in KINDS:
        if not any(r.model_kind == kind for r in reports):
            continue
        arch = default_arch(kind)
        line = f"{kind:<20}{count_params(arch):>8}{count_macs(arch, 20000):>10.5f}{REFERENCE_GMACS[kind]:>10.5f}"
        for d in datasets:
            plain, pre = by_key.get((kind, d, False)), by_key.get((kind, d, True))
            cell = f"{plain.sia_db:6.1f}" if plain else "     -"
            cell += f" ({pre.sia_db:5.1f})" if pre else "        "
            line += f"{cell:>22}"
        lines.append(line)
    return "\n".join(lines)
