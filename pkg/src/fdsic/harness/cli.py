"""Command line entry point: ``fdsic {init,gen,train,grid,psd,check}``."""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from .. import evaluation, neuralnet, training
from ..evaluation import GridConfig, evaluate_cell, format_table, run_grid, to_csv, to_json
from ..frontend import LoadError, NoiseSpec, PaParams, SiChannel, fir_convolve, gen_hammerstein, split_ranges
from ..neuralnet import KINDS, default_arch
from ..signal import ComplexSeq, ConfigError, OfdmConfig, demodulate_ofdm, generate_ofdm, qpsk_grid, welch_psd
from .config import (
    SYNTHETIC,
    atomic_write_text,
    cache_dataset,
    load_config,
    noise_floors,
    resolve_datasets,
    synth_signals,
    build_dataset,
)

log = logging.getLogger("fdsic")


class UsageError(Exception):
    pass


def _csv_list(choices):
    def parse(text):
        items = tuple(item.strip() for item in text.split(",") if item.strip())
        bad = [item for item in items if item not in choices]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown entries {bad}; choose from {list(choices)}")
        return items

    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config (defaults when omitted)")
    common.add_argument("--out", help="output directory (overrides experiment.output_dir)")
    common.add_argument("--seed", type=int, help="global seed (overrides experiment.global_seed)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for grid cells")
    common.add_argument("--models", type=_csv_list(KINDS), help="comma-separated model kinds")
    common.add_argument("--datasets", type=_csv_list(SYNTHETIC + ("recorded",)), help="comma-separated datasets")
    common.add_argument("--premodel", choices=("on", "off", "both"), help="linear premodeling selection")
    common.add_argument(
        "--real-data", nargs="+", metavar="FILE",
        help="recorded input and target files (cs16k, or raw float32 by .f32/.raw/.bin extension), optional JSON sidecar",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fdsic", description="Digital self-interference model cross-comparison")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("init", parents=[common], help="write the default config file")
    p.add_argument("path", nargs="?", default="fdsic.toml")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p = sub.add_parser("gen", parents=[common], help="synthesize and cache the datasets")
    p.add_argument("--cache-dir", help="cache directory (default <out>/cache)")
    p = sub.add_parser("train", parents=[common], help="train and evaluate a single cell")
    p.add_argument("--model", required=True, choices=KINDS)
    p.add_argument("--dataset", required=True, choices=SYNTHETIC + ("recorded",))
    p.add_argument("--from-cache", nargs="?", const="", default=None, metavar="DIR")
    p = sub.add_parser("grid", parents=[common], help="run the full model x dataset comparison")
    p.add_argument("--from-cache", nargs="?", const="", default=None, metavar="DIR")
    p = sub.add_parser("psd", parents=[common], help="write Welch PSD CSVs of the SI signals and noise floors")
    p.add_argument("--seg-len", type=int, default=256)
    p.add_argument("--overlap", type=float, default=0.5)
    p = sub.add_parser("check", parents=[common], help="gradient checks and oracle self-tests")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative gradient error")
    return parser


def _config(args):
    datasets = args.datasets
    if args.real_data and datasets is None:
        datasets = SYNTHETIC + ("recorded",)
    return load_config(
        args.config,
        global_seed=args.seed,
        output_dir=args.out,
        models=args.models,
        datasets=datasets,
        premodel=args.premodel,
    )


def _real_data(args):
    if not args.real_data:
        return None
    if len(args.real_data) not in (2, 3):
        raise UsageError("--real-data takes an input file, a target file and an optional sidecar")
    return args.real_data


def _cache_dir(cfg, value):
    return Path(value) if value else Path(cfg.output_dir) / "cache"


def cmd_init(args):
    path = Path(args.path)
    if path.exists() and not args.force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    cfg = _config(args)
    atomic_write_text(path, cfg.to_toml())
    return {"written": str(path), "config_hash": cfg.hash()}


def cmd_gen(args):
    cfg = _config(args)
    cache = _cache_dir(cfg, args.cache_dir)
    written = {kind: str(cache_dataset(cfg, kind, cache)) for kind in cfg.grid.datasets if kind in SYNTHETIC}
    return {"cache": str(cache), "datasets": written, "config_hash": cfg.hash(), "global_seed": cfg.global_seed}


def _grid_config(cfg, datasets, out, jobs):
    seeds = {
        (m, d, f): cfg.train_seed(m, d, f)
        for m in cfg.grid.models
        for d in datasets
        for f in cfg.grid.premodel_flags
    }
    return GridConfig(
        datasets=datasets,
        adam=cfg.adam,
        models=cfg.grid.models,
        premodel=cfg.grid.premodel_flags,
        context_len=cfg.context_len,
        seeds=seeds,
        checkpoint_dir=str(out / "checkpoints"),
        jobs=jobs,
    )


def _write_reports(cfg, reports, out):
    h, seed = cfg.hash(), cfg.global_seed
    for r in reports:
        name = f"{r.model_kind}__{r.dataset_provenance}__{'premodel' if r.premodeling else 'plain'}.json"
        cell = {"config_hash": h, "global_seed": seed, **r.to_dict()}
        atomic_write_text(out / "cells" / name, json.dumps(cell, indent=2, default=float))


def cmd_train(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    from_cache = None if args.from_cache is None else _cache_dir(cfg, args.from_cache)
    cfg_one = load_config(args.config, global_seed=cfg.global_seed, output_dir=cfg.output_dir, datasets=(args.dataset,))
    datasets = resolve_datasets(cfg_one, from_cache, _real_data(args))
    if args.dataset not in datasets:
        raise UsageError("dataset 'recorded' needs --real-data")
    flags = cfg.grid.premodel_flags if args.premodel else (False,)
    reports = []
    for flag in flags:
        adam = cfg.adam[args.model]
        adam = training.AdamConfig(**{**adam.__dict__, "seed": cfg.train_seed(args.model, args.dataset, flag)})
        ckpt = out / "checkpoints" / f"{args.model}__{args.dataset}__{'premodel' if flag else 'plain'}"
        reports.append(evaluate_cell(default_arch(args.model, cfg.context_len), datasets[args.dataset], flag, adam, ckpt))
    _write_reports(cfg, reports, out)
    return {"cells": [{"premodeling": r.premodeling, "sia_db": r.sia_db, "status": r.status} for r in reports]}


def cmd_grid(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    from_cache = None if args.from_cache is None else _cache_dir(cfg, args.from_cache)
    real = _real_data(args)
    if "recorded" in cfg.grid.datasets and real is None:
        log.warning("no --real-data given; skipping the recorded-data column")
    datasets = resolve_datasets(cfg, from_cache, real)
    reports = run_grid(_grid_config(cfg, datasets, out, args.jobs))
    atomic_write_text(out / "table.csv", to_csv(reports, cfg.global_seed, cfg.hash()))
    atomic_write_text(out / "table.json", to_json(reports, cfg.global_seed, cfg.hash()))
    atomic_write_text(out / "config.toml", cfg.to_toml())
    _write_reports(cfg, reports, out)
    print(format_table(reports), file=sys.stderr)
    failed = [r.key for r in reports if r.status != "ok"]
    return {"table": str(out / "table.csv"), "cells": len(reports), "failed": failed, "config_hash": cfg.hash()}


def _psd_csv(freqs, density, cfg, name):
    lines = [f"# signal={name} config_hash={cfg.hash()} global_seed={cfg.global_seed}", "frequency_hz,density"]
    lines += [f"{f!r},{d!r}" for f, d in zip(freqs.tolist(), density.tolist())]
    return "\n".join(lines) + "\n"


def cmd_psd(args):
    cfg = _config(args)
    out = Path(cfg.output_dir) / "psd"
    s, _, _, _ = synth_signals(cfg)
    noise_h, noise_w = noise_floors(cfg)
    signals = {
        "s": s,
        "y_H": build_dataset(cfg, "hammerstein").target,
        "y_W": build_dataset(cfg, "wiener").target,
        "noise_H": noise_h,
        "noise_W": noise_w,
    }
    real = _real_data(args)
    if real is not None:
        rec = resolve_datasets(load_config(args.config, datasets=("recorded",)), None, real)["recorded"]
        signals["y_R"] = rec.target
    written = {}
    for name, seq in signals.items():
        freqs, density = welch_psd(seq, args.seg_len, args.overlap)
        path = out / f"psd_{name}.csv"
        atomic_write_text(path, _psd_csv(freqs, density, cfg, name))
        written[name] = str(path)
    return {"psd": written, "config_hash": cfg.hash()}


def self_check(tolerance=1e-4):
    """Gradient checks for every architecture plus the oracle self-tests."""
    results = {}
    for kind in KINDS:
        err = training.gradient_check(default_arch(kind), n=64, seed=1)
        results[f"gradient/{kind}"] = {"value": err, "limit": tolerance, "ok": err < tolerance}

    rng = np.random.default_rng(7)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    brute = np.array([sum(h[l] * x[k - l] for l in range(5) if k - l >= 0) for k in range(64)])
    err = float(np.max(np.abs(fir_convolve(x, h) - brute)))
    results["oracle/fir_convolve"] = {"value": err, "limit": 1e-12, "ok": err < 1e-12}

    s = generate_ofdm(OfdmConfig(n_symbols=40, seed=3))
    ch = SiChannel(h / np.linalg.norm(h))
    ds = gen_hammerstein(s, PaParams(1e6, 1e-6), ch, NoiseSpec(0.0), split_ranges(len(s)))
    ds = ds.with_target(s.with_samples(fir_convolve(s.samples, ch)))
    lin = training.fit_linear_ls(ds, 5)
    est = lin.segment("fir.taps")
    nmse = float(10 * np.log10(np.sum(np.abs(est - ch.taps) ** 2) / np.sum(np.abs(ch.taps) ** 2)))
    results["oracle/fit_linear_ls_nmse_db"] = {"value": nmse, "limit": -80.0, "ok": nmse < -80}

    cfg = OfdmConfig(n_symbols=8, seed=5)
    ratio = demodulate_ofdm(generate_ofdm(cfg), cfg) / qpsk_grid(cfg)
    err = float(np.max(np.abs(ratio / ratio.flat[0] - 1)))
    results["oracle/ofdm_roundtrip"] = {"value": err, "limit": 1e-9, "ok": err < 1e-9}

    t = np.exp(1j * np.arange(32.0))
    checks = [
        (evaluation.sia(t, 0 * t), 0.0),
        (evaluation.sia(t, 0.5 * t), 10 * np.log10(4)),
        (evaluation.sia(t, t), evaluation.SIA_CAP_DB),
    ]
    err = float(max(abs(a - b) for a, b in checks))
    results["oracle/sia_cases"] = {"value": err, "limit": 1e-9, "ok": err < 1e-9}

    counts = {k: neuralnet.count_params(default_arch(k)) for k in KINDS}
    results["count_params"] = {"value": counts, "ok": counts == evaluation.REFERENCE_PARAMS}
    return results


def cmd_check(args):
    results = self_check(args.tolerance)
    failed = [name for name, r in results.items() if not r["ok"]]
    report = {"ok": not failed, "failed": failed, "results": results}
    if failed:
        raise CheckFailed(report)
    return report


class CheckFailed(Exception):
    def __init__(self, report):
        super().__init__("self-check failed")
        self.report = report


COMMANDS = {
    "init": cmd_init,
    "gen": cmd_gen,
    "train": cmd_train,
    "grid": cmd_grid,
    "psd": cmd_psd,
    "check": cmd_check,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        result = COMMANDS[args.command](args)
    except (UsageError, ConfigError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2
    except CheckFailed as err:
        print(json.dumps(err.report, indent=2), file=sys.stdout)
        return 1
    except (LoadError, FileNotFoundError, ArithmeticError, RuntimeError, ValueError, OSError) as err:
        diag = {"error": type(err).__name__, "message": str(err), "traceback": traceback.format_exc().splitlines()[-3:]}
        print(json.dumps(diag), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
