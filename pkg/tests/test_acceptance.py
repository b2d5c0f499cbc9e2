"""The ten acceptance criteria, each at its stated tolerance.

The default synthetic grid (5 models x 2 datasets x premodeling on/off) is run
through the CLI once for criteria 3-7 and 10, and a second time for the
determinism criterion 9.  Each test prints one ``CRITERION n: PASS|FAIL`` line.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_dataset
from fdsic.evaluation import REFERENCE_PARAMS, SIA_CAP_DB, evaluate_cell, sia
from fdsic.frontend import SiChannel, fir_convolve
from fdsic.harness.cli import main
from fdsic.harness.config import ExperimentConfig, build_dataset, load_config
from fdsic.neuralnet import KINDS, count_params, default_arch
from fdsic.signal import OfdmConfig, demodulate_ofdm, generate_ofdm, qpsk_grid
from fdsic.training import fit_linear_ls, gradient_check

BUDGET_S = 15 * 60


def report(number, ok, detail, capsys=None):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    return ok


def _run_grid(out):
    t0 = time.perf_counter()
    code = main(["grid", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    text = (Path(out) / "table.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    cells = {}
    for path in (Path(out) / "cells").glob("*.json"):
        doc = json.loads(path.read_text())
        cells[(doc["model_kind"], doc["dataset_provenance"], doc["premodeling"])] = doc
    return text, rows, cells, elapsed


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    return _run_grid(tmp_path_factory.mktemp("grid_a"))


def _sia(rows):
    return {(r["model"], r["dataset"], r["premodeling"] == "on"): float(r["sia_db"]) for r in rows}


def test_criterion_01_parameter_counts(capsys):
    counts = {k: count_params(default_arch(k)) for k in KINDS}
    expected = {"linear": 26, "hammerstein": 42, "wiener": 51, "wiener_hammerstein": 66, "ffnn": 495}
    ok = counts == expected == REFERENCE_PARAMS
    assert report(1, ok, f"counts {counts}", capsys)


def test_criterion_02_gradients(capsys):
    errors = {k: gradient_check(default_arch(k), n=64, seed=0) for k in KINDS}
    worst = max(errors.values())
    ok = worst < 1e-4
    assert report(2, ok, "max rel. error " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items()), capsys)


def test_criterion_03_matched_vs_mismatched(grid, capsys):
    _, rows, cells, _ = grid
    s = _sia(rows)
    matched = {"H/H": s["hammerstein", "hammerstein", False], "W/W": s["wiener", "wiener", False]}
    mismatched = {"W/H": s["wiener", "hammerstein", False], "H/W": s["hammerstein", "wiener", False]}
    margin = min(matched.values()) - max(mismatched.values())
    keys = [("hammerstein", "hammerstein", False), ("wiener", "wiener", False),
            ("wiener", "hammerstein", False), ("hammerstein", "wiener", False)]
    runtime = sum(cells[k]["train_meta"]["wall_time_s"] for k in keys)
    ok = (
        min(matched.values()) >= 40
        and max(mismatched.values()) <= 20
        and margin >= 20
        and runtime <= 300
    )
    detail = (
        f"matched {matched} (>= 40), mismatched {mismatched} (<= 20), "
        f"margin {margin:.1f} dB (>= 20), training time {runtime:.0f} s (<= 300)"
    )
    assert report(3, ok, detail, capsys)


def test_criterion_04_wiener_hammerstein_generalizes(grid, capsys):
    _, rows, cells, _ = grid
    s = _sia(rows)
    gap_h = s["hammerstein", "hammerstein", False] - s["wiener_hammerstein", "hammerstein", False]
    gap_w = s["wiener", "wiener", False] - s["wiener_hammerstein", "wiener", False]
    restarts = len(cells["wiener_hammerstein", "hammerstein", False]["train_meta"]["restart_test_mse"])
    ok = gap_h <= 3 and gap_w <= 3 and restarts == 3
    assert report(4, ok, f"WH deficit vs matched: H {gap_h:.2f} dB, W {gap_w:.2f} dB (<= 3), restarts {restarts}", capsys)


def test_criterion_05_linear_baseline(grid, capsys):
    s = _sia(grid[1])
    values = {d: s["linear", d, False] for d in ("hammerstein", "wiener")}
    ok = all(5 <= v <= 15 for v in values.values())
    assert report(5, ok, f"linear SIA {values} (5..15 dB)", capsys)


def _near_linear_dataset():
    doc = ExperimentConfig().to_dict()
    doc["pa"]["c_f"] = 0.05
    doc["pa"]["f"] = 20.0  # small-signal gain f * c_f = 1
    doc["channel"]["profile"] = "dirac"
    return build_dataset(ExperimentConfig.from_dict(doc), "hammerstein")


def test_criterion_06_premodeling_effect(grid, capsys):
    s = _sia(grid[1])
    matched = {
        m: (s[m, m, False], s[m, m, True]) for m in ("hammerstein", "wiener")
    }
    synthetic_ok = all(pre <= plain for plain, pre in matched.values())
    cfg = load_config()
    ds = _near_linear_dataset()
    arch = default_arch("ffnn")
    adam = cfg.adam["ffnn"]
    plain = evaluate_cell(arch, ds, False, adam).sia_db
    pre = evaluate_cell(arch, ds, True, adam).sia_db
    ok = synthetic_ok and pre >= plain
    detail = (
        "matched (plain, premodeled): "
        + ", ".join(f"{m} ({a:.1f}, {b:.1f})" for m, (a, b) in matched.items())
        + f"; near-linear FFNN plain {plain:.1f} dB, premodeled {pre:.1f} dB"
    )
    assert report(6, ok, detail, capsys)


def test_criterion_07_ffnn_below_block_models(grid, capsys):
    s = _sia(grid[1])
    gaps = {d: s[d, d, False] - s["ffnn", d, False] for d in ("hammerstein", "wiener")}
    ok = all(g >= 15 for g in gaps.values())
    assert report(7, ok, "matched minus FFNN: " + ", ".join(f"{d} {g:.1f} dB" for d, g in gaps.items()) + " (>= 15)", capsys)


def test_criterion_08_oracles(capsys):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    h = rng.standard_normal(13) + 1j * rng.standard_normal(13)
    brute = np.array([sum(h[l] * x[k - l] for l in range(13) if k >= l) for k in range(256)])
    fir_err = float(np.max(np.abs(fir_convolve(x, h) - brute)))

    s = generate_ofdm(OfdmConfig(n_symbols=50, seed=1)).samples
    ch = SiChannel(h / np.linalg.norm(h))
    est = fit_linear_ls(make_dataset(s, fir_convolve(s, ch))).segment("fir.taps")
    nmse = 10 * np.log10(np.sum(np.abs(est - ch.taps) ** 2) / np.sum(np.abs(ch.taps) ** 2))

    cfg = OfdmConfig(n_symbols=20, seed=2)
    ratio = demodulate_ofdm(generate_ofdm(cfg), cfg) / qpsk_grid(cfg)
    rt_err = float(np.max(np.abs(ratio - ratio.flat[0])))

    t = np.exp(1j * rng.uniform(0, 2 * np.pi, 100))
    sia_cases = (sia(t, 0 * t), sia(t, 0.5 * t), sia(t, t))
    sia_ok = (
        abs(sia_cases[0]) < 1e-12 and abs(sia_cases[1] - 6.0206) < 1e-4 and sia_cases[2] == SIA_CAP_DB
    )
    ok = fir_err < 1e-12 and nmse < -80 and rt_err < 1e-12 and sia_ok
    detail = (
        f"fir max err {fir_err:.1e} (< 1e-12), LS NMSE {nmse:.0f} dB (< -80), OFDM round-trip err {rt_err:.1e}, "
        f"SIA cases {[round(v, 4) for v in sia_cases]}"
    )
    assert report(8, ok, detail, capsys)


def test_criterion_09_determinism(grid, tmp_path, capsys):
    text_a = grid[0]
    text_b = _run_grid(tmp_path / "grid_b")[0]
    ok = text_a == text_b
    n_rows = len(text_a.splitlines()) - 1
    assert report(9, ok, f"second full grid run: CSV {'identical' if ok else 'DIFFERS'} ({n_rows} rows)", capsys)


def test_criterion_10_budget(grid, capsys):
    _, rows, _, elapsed = grid
    ok = len(rows) == 20 and all(r["status"] == "ok" for r in rows) and elapsed < BUDGET_S
    assert report(10, ok, f"{len(rows)} cells in {elapsed / 60:.1f} min single-threaded (< 15 min)", capsys)
