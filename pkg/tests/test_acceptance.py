"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section at the
end lists every criterion with the measured numbers.
"""
import hashlib
import json
import math
import time
import warnings

import numpy as np
import pytest

import test_analyze as refit
from dtcsim import analyze as an
from dtcsim import dephase, evolve
from dtcsim import meanfield as mf
from dtcsim.cli import campaign as cp
from dtcsim.cli.main import main
from dtcsim.cli.manifest import parse_manifest_text
from dtcsim.model import ModelTemplate, meanfield_spec

pytestmark = pytest.mark.slow

EPS06 = 0.06 * math.pi
HALF_EPS2 = EPS06**2 / 2


def _run_campaign(tmp_path_factory, name, text):
    m = parse_manifest_text(text)
    out = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cp.simulate(m, out)
        rec = cp.analyze(m, out)
    elapsed = time.perf_counter() - t0
    tables = {a["name"]: json.loads((out / a["file"]).read_text()) if a["ok"] else a["error"]
              for a in rec["analysis"]}
    return tables, elapsed


# ------------------------------------------------------------------ 1, 2

def test_criterion_01_meanfield_boundaries(criterion):
    t0 = time.perf_counter()
    got = {p: mf.existence_boundary(p, tol=1e-8) for p in ("Z2Ising", "Z2", "Z3")}
    elapsed = time.perf_counter() - t0
    want = {"Z2Ising": 0.5, "Z2": 1.0, "Z3": 4 / 3}
    err = max(abs(got[p] - want[p]) for p in want)
    ok = err < 1e-6 and elapsed < 10
    criterion(1, ok, f"max |coef - closed form| = {err:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_meanfield_closed_forms(criterion):
    g = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        jmf = g.uniform(0.2, 5.0)
        for protocol, bound in (("Z2Ising", 0.5), ("Z2", 1.0), ("Z3", 4 / 3)):
            h = g.uniform(0.01, 0.98) * bound * jmf
            period = g.uniform(0.2, 3.0)
            sol = mf.solve_stationary(meanfield_spec(protocol, h * period, period, jmf))
            if not sol.exists:
                worst = math.inf
                continue
            r = sol.rho
            if protocol == "Z2Ising":
                dev = max(abs(r[0] - 2 * h / jmf), abs(r[1]))
            elif protocol == "Z2":
                dev = max(abs(r[0]), abs(r[1] - h / jmf))
            else:
                q = h / (4 * jmf)
                dev = max(abs(r[0] - q), abs(r[1] - q), abs(r[5] + q), *np.abs(r[2:5]))
            worst = max(worst, dev)
    ok = worst < 1e-8
    criterion(2, ok, f"max deviation over 20 draws x 3 protocols = {worst:.1e}")
    assert ok


# -------------------------------------------------------------------- 3

def test_criterion_03_dephasing_rates(criterion):
    t0 = time.perf_counter()
    eps = np.linspace(0.01, 0.1, 46) * math.pi
    z2 = np.array([dephase.subharmonic_decay_rate("Z2", e) for e in eps])
    z3 = np.array([dephase.subharmonic_decay_rate("Z3", e) for e in eps])
    elapsed = time.perf_counter() - t0
    r2 = np.max(np.abs(z2 - eps**2 / 2) / eps**4)
    r3 = np.max(np.abs(z3 - eps**2 / 2) / eps**4)
    exact = np.max(np.abs(z2 + np.log(np.cos(eps))))
    ok = r2 <= 1 and r3 <= 5 and exact < 1e-12 and elapsed < 1
    criterion(3, ok, f"Z2 |g-e^2/2|/e^4 <= {r2:.3f}, Z3 <= {r3:.3f}, |Z2 + ln cos| = {exact:.1e}, {elapsed:.3f} s")
    assert ok


# ---------------------------------------------------------------- 4, 5

S7_MANIFEST = """\
campaign: toy_thermalizing
seed: 1801
model:
  protocol: ToyModel
  n: 10
  epsilon_over_pi: [0.03, 0.06, 0.09, 0.12]
  jt: 10
  alpha: 1
  realizations: 100
  cycles: 120
analysis:
  - rate_histogram
  - quadratic_rate: {source: histogram}
"""


@pytest.fixture(scope="module")
def s7(tmp_path_factory):
    return _run_campaign(tmp_path_factory, "s7", S7_MANIFEST)


def test_criterion_04_toy_histogram_mode(s7, criterion):
    tables, elapsed = s7
    row = next(r for r in tables["rate_histogram"] if abs(r["epsilon"] - EPS06) < 1e-12)
    rel = abs(row["mode"] - HALF_EPS2) / HALF_EPS2
    ok = rel <= 0.25
    criterion(4, ok, f"N=10 mode = {row['mode']:.5f} vs eps^2/2 = {HALF_EPS2:.5f} ({100 * rel:.0f}% off), "
                     f"campaign {elapsed:.0f} s on 1 core")
    assert ok


def test_criterion_05_quadratic_collapse(s7, criterion):
    tables, _ = s7
    row = tables["quadratic_rate"][0]
    ok = 0.35 <= row["a"] <= 0.65
    modes = ", ".join(f"{r:.5f}" for r in row["rate"])
    criterion(5, ok, f"a = {row['a']:.3f}, Gamma0 = {row['gamma0']:.2e} (modes {modes})")
    assert ok


# -------------------------------------------------------------------- 6

S8_MANIFEST = """\
campaign: ising_finite_size
seed: 1802
model:
  protocol: ToyModel
  n: [8, 10, 12]
  epsilon_over_pi: 0.06
  jt: 10
  alpha: 0
  realizations: 100
  cycles: 120
  observable: localZ(0)
  initial: random_environment
analysis:
  - trace_rate
"""


def test_criterion_06_ising_finite_size_trend(tmp_path_factory, criterion):
    tables, elapsed = _run_campaign(tmp_path_factory, "s8", S8_MANIFEST)
    medians = {}
    for n in (8, 10, 12):
        medians[n] = float(np.median([r["rate"] for r in tables["trace_rate"] if r["n"] == n]))
    vals = [medians[n] for n in (8, 10, 12)]
    ok = all(v < HALF_EPS2 for v in vals) and vals[0] <= vals[1] <= vals[2]
    criterion(6, ok, "median rates " + ", ".join(f"N={n}: {medians[n]:.5f}" for n in medians)
              + f" (eps^2/2 = {HALF_EPS2:.5f}), {elapsed:.0f} s")
    assert ok


# -------------------------------------------------------------------- 7

def test_criterion_07_eps_zero_exactness(criterion):
    worst = 0.0
    for seed in range(20):
        n = 4 + seed % 5
        tpl1 = ModelTemplate("ToyModel", n, 0.0, jt=10.0, alpha=1.0)
        tr = evolve.run_realization(tpl1, seed, 100)
        worst = max(worst, np.max(np.abs(tr.values - (-1.0) ** np.arange(101))))
        tpl0 = ModelTemplate("ToyModel", n, 0.0, jt=10.0, alpha=0.0)
        tr0 = evolve.run_realization(tpl0, seed, 100, "localZ(0)", "random_environment")
        worst = max(worst, np.max(np.abs(tr0.values - (-1.0) ** np.arange(101) * tr0.values[0])))
    ok = worst < 1e-10
    criterion(7, ok, f"max deviation from exact sign flips = {worst:.1e} over 20 realizations x 2 cases")
    assert ok


# -------------------------------------------------------------------- 8

REFIT_CHECKS = [
    refit.test_super_gaussian_generate_and_refit_draws,
    refit.test_boundary_identity_with_offset_draws,
    refit.test_stretched_generate_and_refit_draws,
    refit.test_saturation_generate_and_refit_draws,
    refit.test_quadratic_generate_and_refit_draws,
    refit.test_histogram_generate_and_refit_draws,
    refit.test_late_time_exact_exponential,
    refit.test_late_time_with_noise_floor,
    refit.test_late_time_error_is_max_of_spread_and_stderr,
    refit.test_peak_heights_decay_and_brute_force,
]


def test_criterion_08_analysis_fidelity(criterion):
    failed = []
    for check in REFIT_CHECKS:
        try:
            check()
        except AssertionError as exc:
            failed.append(f"{check.__name__}: {exc}".splitlines()[0])
    conventions = (an.spectral.DEFAULT_WINDOW == 36 and an.fitting.LATE_TIME_STARTS == tuple(range(15, 21)))
    ok = not failed and conventions
    detail = f"{len(REFIT_CHECKS) - len(failed)}/{len(REFIT_CHECKS)} refit families pass; L=36, starts 15-20"
    criterion(8, ok, detail if not failed else detail + "; failed: " + "; ".join(failed))
    assert ok


# -------------------------------------------------------------------- 9

def test_criterion_09_crystalline_fraction(criterion):
    n = np.arange(36)
    z2 = an.spectrum(np.cos(np.pi * n))
    z3 = an.spectrum(np.cos(2 * np.pi * n / 3))
    devs = [abs(an.crystalline_fraction(z2, 2) - 1), abs(an.crystalline_fraction(z3, 3) - 1),
            an.crystalline_fraction(z2, 3), an.crystalline_fraction(z3, 2)]
    ok = max(devs) < 1e-10
    criterion(9, ok, f"max deviation = {max(devs):.1e}")
    assert ok


# ------------------------------------------------------------------- 10

CROSSOVER_MANIFEST = """\
campaign: crossover
seed: 1804
model:
  protocol: ToyModel
  n: 10
  epsilon_over_pi: [0.1, 0.15, 0.2]
  jt: [0.5, 1, 2, 5, 10]
  alpha: 1
  realizations: 24
  cycles: 200
analysis:
  - stretched_exponential
  - saturation
"""


def test_criterion_10_crossover(tmp_path_factory, criterion):
    tables, elapsed = _run_campaign(tmp_path_factory, "crossover", CROSSOVER_MANIFEST)
    sat = tables["saturation"]
    if isinstance(sat, str):
        criterion(10, False, f"saturation analysis failed: {sat}")
        pytest.fail(sat)
    row = sat[0]
    beta = dict(zip(row["T"], row["beta_mean"]))
    trio = [beta[0.5], beta[2.0], beta[10.0]]
    increasing = trio[0] < trio[1] < trio[2]
    ok = increasing and row["present"] and math.isfinite(row["t_star"] or math.nan)
    shown = ", ".join(f"JT={t:g}: {b:.3f}" for t, b in beta.items())
    ts = f"{row['t_star']:.2f} +/- {row['t_star_error']:.2f}" if row["present"] else "absent"
    criterion(10, ok, f"beta-bar {shown}; JT* = {ts}; {elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------- 11

REPRO_MANIFEST = """\
campaign: repro
seed: 1805
model:
  protocol: ToyModel
  n: 8
  epsilon_over_pi: [0.04, 0.08, 0.12, 0.16]
  jt: 10
  alpha: 1
  realizations: 4
  cycles: 100
analysis:
  - trace_rate
  - crystalline_fraction
  - peak_heights
  - late_time_rate
  - stretched_exponential
  - quadratic_rate
"""


def test_criterion_11_reproducibility(tmp_path, criterion):
    man = tmp_path / "m.yaml"
    man.write_text(REPRO_MANIFEST)
    digests = []
    for name in ("first", "second"):
        out = tmp_path / name
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            main(["simulate", "--manifest", str(man), "--out", str(out)])
            main(["analyze", "--manifest", str(man), "--out", str(out)])
        digests.append({str(f.relative_to(out)): hashlib.sha256(f.read_bytes()).hexdigest()
                        for f in sorted(out.rglob("*")) if f.is_file() and f.name != "timing.json"})
    traces = sum(1 for k in digests[0] if k.startswith("traces"))
    diff = sorted(k for k in digests[0].keys() | digests[1].keys() if digests[0].get(k) != digests[1].get(k))
    ok = not diff and traces >= 16
    criterion(11, ok, f"{len(digests[0])} output files ({traces} under traces/), "
                      + ("all hash-identical across two runs" if ok else f"differing: {diff[:5]}"))
    assert ok
