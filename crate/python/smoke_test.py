#!/usr/bin/env python3
"""End-to-end smoke test for the pylens bindings.

Builds nothing itself: it locates the cdylib produced by
`cargo build -p pylens` (release preferred), exposes it as an importable
module, and drives one simulate -> analyze round trip.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_pylens():
    for profile in ("release", "debug"):
        built = ROOT / "target" / profile / "libpylens.so"
        if built.exists():
            staging = Path(tempfile.mkdtemp(prefix="pylens-"))
            shutil.copy2(built, staging / "pylens.so")
            sys.path.insert(0, str(staging))
            import pylens

            return pylens
    sys.exit("libpylens.so not found; run `cargo build -p pylens` first")


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    pylens = import_pylens()
    scenario = ROOT / "crates" / "core" / "scenarios" / "planted-transfer.json"

    panel, truth = pylens.simulate(str(scenario), seed=11)
    assert panel.channels == [f"ch{i:02}" for i in range(6)], panel.channels
    assert panel.n_observations > 10_000
    assert truth["transfers"], "scenario plants transfers"

    # same seed regenerates the identical panel
    panel2, _ = pylens.simulate(str(scenario), seed=11)
    assert panel2.n_observations == panel.n_observations
    assert repr(panel2) == repr(panel)

    # CSV round trip through a cache file
    with tempfile.TemporaryDirectory() as td:
        cache = Path(td) / "panel.bin"
        panel.save_cache(str(cache))
        reloaded = pylens.Panel.from_cache(str(cache))
        assert repr(reloaded) == repr(panel)

    m = pylens.overlap(panel, delta=8)
    assert m["channels"] == panel.channels
    assert m["symmetrized"]
    n = len(m["channels"])
    for i in range(n):
        assert m["values"][i][i] is None

    t = pylens.transfers(panel)
    planted = {(p["source_stream"], p["receiving_stream"], p["t_e"]) for p in truth["transfers"]}
    hits = sum(
        1
        for e in t["events"]
        if (e["source_stream"], e["receiving_stream"], e["t_e"]) in planted
    )
    recall = hits / len(planted)
    precision = hits / len(t["events"])
    assert recall >= 0.9, f"recall {recall}"
    assert precision >= 0.9, f"precision {precision}"
    assert 0.4 <= t["summary"]["median_efficiency"] <= 0.6

    d = pylens.dilution(panel, iterations=200, seed=3)
    assert d["n_samples"] > 0
    assert d["residual_ci"]["ci_low"] <= d["rho_residual"] <= d["residual_ci"]["ci_high"]
    assert d["buckets"][0]["k"] == 1

    rows = pylens.loyalty(panel)
    assert len(rows) == 6
    for row in rows:
        for key in ("S", "R", "P", "F"):
            assert row[key] is None or 0.0 <= row[key] <= 1.0

    p = pylens.permtest(panel, iterations=200, seed=3)
    assert p["n_pairs"] == 15
    assert all(0.0 < pair["p_value"] <= 1.0 for pair in p["pairs"])

    approx(pylens.spearman([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 4.0, 3.0]), 0.8)

    print("pylens smoke test passed")


if __name__ == "__main__":
    main()
