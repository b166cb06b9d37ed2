"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The Monte Carlo sweeps run once per session at 100 trials (override with
SECURENOMA_ACCEPTANCE_TRIALS for a quick smoke pass; the printed lines
state the trial count used).  The full module takes roughly two hours on
one core.
"""
import os

import numpy as np
import pytest

from oracles import bisect_threshold, brute_force_scalar, scalar_gains
from securenoma.config import Scenario
from securenoma.experiments import (PRESETS, ExperimentConfig, paired_objectives, records_csv, run_sweep,
                                    summarize)
from securenoma.metrics import eh_rf_threshold, harvested_power
from securenoma.model import EhCircuitParams, EhParams, NetworkTopology, QosRequirements, generate_channels
from securenoma.sca import Scheme, SolverSettings, run_sca

TRIALS = int(os.environ.get("SECURENOMA_ACCEPTANCE_TRIALS", "100"))
WORKERS = max(1, os.cpu_count() or 1)

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="session")
def fig2a():
    cfg = ExperimentConfig(Scenario(), sweep="Ks", values=PRESETS["fig2a"]["values"], trials=TRIALS,
                           schemes=PRESETS["fig2a"]["schemes"], master_seed=0, name="fig2a",
                           workers=WORKERS)
    return run_sweep(cfg)


@pytest.fixture(scope="session")
def fig2c():
    cfg = ExperimentConfig(Scenario(), sweep="gamma_P", values=PRESETS["fig2c"]["values"], trials=TRIALS,
                           schemes=PRESETS["fig2c"]["schemes"], master_seed=0, name="fig2c",
                           workers=WORKERS)
    return run_sweep(cfg)


def test_criterion_1_eh_model(acceptance_report):
    c = EhCircuitParams(a=1500.0, b=0.0022, p_max=0.024)
    zero_ok = harvested_power(0.0, c) == 0.0
    rf = np.geomspace(c.b + 100.0 / c.a, 10.0, 200)
    sat_err = float(np.max(np.abs(harvested_power(rf, c) - c.p_max)))
    rng = np.random.default_rng(2024)
    zetas = rng.uniform(0.0, c.p_max, 100)
    zetas = zetas[zetas > 0]
    thr = np.array([eh_rf_threshold(z, c) for z in zetas])
    roundtrip = float(np.max(np.abs(harvested_power(thr, c) - zetas) / zetas))
    oracle = np.array([bisect_threshold(z, c.a, c.b, c.p_max) for z in zetas])
    vs_oracle = float(np.max(np.abs(thr - oracle) / oracle))
    ok = zero_ok and sat_err <= 1e-6 * c.p_max and roundtrip < 1e-9 and vs_oracle <= 1e-9
    acceptance_report(1, ok, f"Phi(0)==0 {zero_ok}; saturation error {sat_err:.2e} W; "
                             f"roundtrip {roundtrip:.2e}; vs bisection {vs_oracle:.2e}")


def test_criterion_2_monotone_convergence(fig2a, acceptance_report):
    runs = [r for r in fig2a if r.scheme == "noma-jamming" and r.value == 2]
    feasible = [r for r in runs if r.status != "infeasible"]
    worst_rise = max((float(np.max(np.diff(r.trace))) for r in feasible if len(r.trace) > 1), default=0.0)
    conv = [r for r in feasible if r.status == "converged" and r.iterations <= 50
            and (len(r.trace) < 2 or abs(r.trace[-1] - r.trace[-2]) <= 1e-4)]
    share = len(conv) / max(len(feasible), 1)
    iters = np.median([r.iterations for r in conv]) if conv else float("nan")
    ok = bool(feasible) and worst_rise <= 1e-9 and share >= 0.9
    acceptance_report(2, ok, f"{len(feasible)}/{len(runs)} feasible default instances; largest trace rise "
                             f"{worst_rise:.2e} W; converged within 50 iterations {share:.1%} "
                             f"(median {iters} iterations)")


def test_criterion_3_feasibility_transfer(fig2a, fig2c, acceptance_report):
    conv = [r for r in fig2a + fig2c if r.status == "converged"]
    bad = [r for r in conv if r.verified is not True]
    methods = {m: sum(r.extraction == m for r in conv) for m in ("eigen", "randomized", "relaxed")}
    acceptance_report(3, bool(conv) and not bad,
                      f"{len(conv) - len(bad)}/{len(conv)} converged runs verify on C1-C5 "
                      f"(extraction: {methods})")


def test_criterion_4_oracle_equivalence(acceptance_report):
    topo = NetworkTopology(1, (1,), (1,), 1, 1, 1, 1)
    gamma = 0.5
    reqs = QosRequirements.uniform(topo, gamma_P=gamma, gamma_S=gamma)
    eh = EhParams.shared(topo)
    c = eh.secondary[0]
    req = dict(gamma_P=gamma, gamma_S=gamma, upsilon=reqs.upsilon[0][0],
               thr_A1=bisect_threshold(reqs.zeta_A1, c.a, c.b, c.p_max),
               thr_A2=bisect_threshold(reqs.zeta_A2, c.a, c.b, c.p_max))
    tight = SolverSettings(tolerance=1e-8, max_iterations=200)
    errors, inconsistent, seed = [], 0, 0
    while len(errors) < 20 and seed < 1000:
        ch = generate_channels(seed, topo, noise=1e-15)
        G = scalar_gains(ch)
        # refine the grid until two resolutions agree to 1%
        best = None
        for pts in (21, 33, 65):
            val = brute_force_scalar(G, req, points=pts)[0]
            if best is not None and np.isfinite(val) and abs(val - best) <= 0.01 * min(val, best):
                best = min(best, val)
                break
            best = val if best is None else min(best, val)
        else:
            inconsistent += np.isfinite(best)
        if np.isfinite(best):
            res = run_sca(ch, reqs, eh, tight, seed)
            errors.append(abs(res.objective - best) / best if res.converged else np.inf)
        seed += 1
    worst = max(errors)
    ok = len(errors) == 20 and worst <= 0.05 and inconsistent == 0
    acceptance_report(4, ok, f"{len(errors)} grid-feasible single-antenna instances (seeds < {seed}); "
                             f"worst relative gap {worst:.2%}; oracle inconsistent on {inconsistent}")


def test_criterion_5_jamming_benefit(fig2a, acceptance_report):
    parts, ok = [], True
    for v in PRESETS["fig2a"]["values"]:
        p = paired_objectives(fig2a, v, ["noma-jamming", "noma-nojam"])
        full, noj = p["noma-jamming"], p["noma-nojam"]
        dominated = float(np.mean(full <= noj + 1e-6)) if full.size else float("nan")
        lower = full.size > 0 and full.mean() < noj.mean()
        ok &= full.size > 0 and dominated == 1.0 and lower
        parts.append(f"Ks={v}: n={full.size} dominated {dominated:.0%} mean {full.mean() * 1e3:.4f} vs "
                     f"{noj.mean() * 1e3:.4f} mW")
    acceptance_report(5, ok, "; ".join(parts))


def test_criterion_6_noma_vs_oma(fig2a, acceptance_report):
    parts, ok = [], True
    for v in PRESETS["fig2a"]["values"]:
        p = paired_objectives(fig2a, v, ["noma-jamming", "oma-tdma"])
        noma, oma = p["noma-jamming"], p["oma-tdma"]
        wins = float(np.mean(noma < oma)) if noma.size else float("nan")
        lower = noma.size > 0 and noma.mean() < oma.mean()
        ok &= bool(lower) and (v != 2 or wins >= 0.7)
        parts.append(f"Ks={v}: n={noma.size} NOMA {noma.mean() * 1e3:.4f} vs OMA {oma.mean() * 1e3:.4f} mW, "
                     f"wins {wins:.0%}")
    acceptance_report(6, ok, "; ".join(parts))


def test_criterion_7_qos_trend(fig2c, acceptance_report):
    rows = summarize(fig2c)
    parts, ok = [], True
    for s in PRESETS["fig2c"]["schemes"]:
        mine = sorted((r for r in rows if r["scheme"] == s.value), key=lambda r: r["value"])
        bad = []
        for a, b in zip(mine, mine[1:]):
            if b["mean_w"] < a["mean_w"] and b["ci_high_w"] < a["ci_low_w"]:
                bad.append(f"{a['value']}->{b['value']}")
        ok &= not bad and all(np.isfinite(r["mean_w"]) for r in mine)
        means = ", ".join(f"{r['mean_w'] * 1e3:.3f}" for r in mine)
        parts.append(f"{s.value} means [{means}] mW, CI-separated drops {bad or 'none'}")
    acceptance_report(7, ok, "; ".join(parts))


def test_criterion_8_determinism(acceptance_report):
    def once():
        cfg = ExperimentConfig(Scenario(), sweep="Ks", values=[1, 2], trials=2, schemes=list(Scheme),
                               master_seed=11, name="determinism")
        return records_csv(run_sweep(cfg))

    a, b = once(), once()
    acceptance_report(8, a == b, f"two runs of the same config: {len(a.encode())} bytes, "
                                 f"byte-identical {a == b}")
