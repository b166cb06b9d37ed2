import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from securenoma.metrics import (InfeasibleRequirementError, NumericDomainError, constraint_margins,
                                eh_rf_threshold, harvested_power, margins_ok, power_terms,
                                pu_secrecy_rate, rank_ratio, secondary_ehr_rf, su_secrecy_rate,
                                su_single_user_rate, total_power, verify_feasibility)
from securenoma.model import (CovarianceSolution, EhCircuitParams, EhParams, QosRequirements,
                              ValidationError, generate_channels, outer)

from conftest import random_psd
from oracles import bisect_threshold, sample_received_power, sigmoid_harvest

CIRCUIT = EhCircuitParams()


def _solution(rng, t, scale=1e-3):
    nP, nS = t.pbs_antennas, t.cbs_antennas
    return CovarianceSolution([random_psd(rng, nP, scale) for _ in range(t.M)],
                              [random_psd(rng, nP, scale / 3) for _ in range(t.M)],
                              [random_psd(rng, nS, scale * (j + 1)) for j in range(t.Ns)],
                              random_psd(rng, nS, scale / 2))


def test_power_terms_match_symbol_level_simulation(small_topology):
    """Every received power against an empirical average over transmitted Gaussian symbols."""
    t = small_topology
    ch = generate_channels(4, t, noise=1e-6)
    rng = np.random.default_rng(0)
    sol = _solution(rng, t)
    terms = power_terms(ch, sol)
    mc = np.random.default_rng(1)
    n = 200_000
    pbs_all = list(sol.W_p) + list(sol.Sigma_p)

    def rx(v_p, v_s, pbs, cbs):
        return sample_received_power(mc, v_p, pbs, n) + sample_received_power(mc, v_s, cbs, n)

    for m in range(t.M):
        for i in range(t.pu_counts[m]):
            got = rx(ch.h_P[m][i], ch.f_S[m][i], pbs_all, list(sol.W_s) + [sol.Sigma_s])
            assert terms.Gamma_P[m][i] - ch.sigma2_P[m][i] == pytest.approx(got, rel=0.02)
        for k in range(t.ehr_counts_primary[m]):
            got = rx(ch.g_Em[m][k], ch.f_Em[m][k], pbs_all, list(sol.W_s) + [sol.Sigma_s])
            assert terms.Gamma_E[m][k] == pytest.approx(got, rel=0.02)
    for j in range(t.Ns):
        for z in range(t.Ns):
            later = [sol.W_s[u] for u in range(j, t.Ns)] + [sol.Sigma_s]
            got = rx(ch.q_P[z], ch.h_S[z], pbs_all, later)
            assert terms.Lambda_S[j, z] - ch.sigma2_S[z] == pytest.approx(got, rel=0.02)
        for l in range(t.Ks):
            later = [sol.W_s[u] for u in range(j, t.Ns)] + [sol.Sigma_s]
            got = rx(ch.q_El[l], ch.g_El[l], pbs_all, later)
            assert terms.Lambda_sl[l, j] - ch.sigma2_El[l] == pytest.approx(got, rel=0.02)
            got = rx(ch.q_El[l], ch.g_El[l], pbs_all, [sol.W_s[j], sol.Sigma_s])
            assert terms.Lambda_E[l, j] - ch.sigma2_El[l] == pytest.approx(got, rel=0.02)
        got = rx(ch.q_P[j], ch.h_S[j], pbs_all, [sol.W_s[j], sol.Sigma_s])
        assert terms.Gamma_S[j] - ch.sigma2_S[j] == pytest.approx(got, rel=0.02)


@given(st.integers(0, 2**32 - 1))
def test_interference_terms_are_totals_minus_own_signal(seed):
    from securenoma.model import NetworkTopology

    t = NetworkTopology(2, (1, 2), (2, 1), 3, 2, 3, 2)
    ch = generate_channels(seed, t)
    rng = np.random.default_rng(seed)
    sol = _solution(rng, t)
    T = power_terms(ch, sol)
    tr = lambda A, v: np.real(np.trace(A @ outer(v)))  # noqa: E731
    for m in range(t.M):
        for i in range(t.pu_counts[m]):
            assert T.Gamma_P[m][i] - T.Gamma_P_int[m][i] == pytest.approx(tr(sol.W_p[m], ch.h_P[m][i]))
            assert T.interference_P[m][i] == pytest.approx(
                sum(tr(W, ch.f_S[m][i]) for W in sol.W_s) + tr(sol.Sigma_s, ch.f_S[m][i]))
    for j in range(t.Ns):
        for z in range(t.Ns):
            assert T.Lambda_S[j, z] - T.Lambda_S_int[j, z] == pytest.approx(tr(sol.W_s[j], ch.h_S[z]))
    assert np.all(T.Lambda_sl[:, -1] == pytest.approx(T.Lambda_E[:, -1]))
    assert np.all(T.Lambda_S[-1, -1] == pytest.approx(T.Gamma_S[-1]))


# -- energy harvesting ----------------------------------------------------------


def test_harvest_zero_input_is_exactly_zero():
    assert harvested_power(0.0, CIRCUIT) == 0.0


def test_harvest_saturates():
    gamma = np.linspace(CIRCUIT.b + 100 / CIRCUIT.a, 1.0, 50)
    assert np.all(np.abs(harvested_power(gamma, CIRCUIT) - CIRCUIT.p_max) <= 1e-6 * CIRCUIT.p_max)


def test_harvest_matches_independent_formula():
    x = np.geomspace(1e-6, 1e-1, 200)
    assert np.allclose(harvested_power(x, CIRCUIT),
                       sigmoid_harvest(x, CIRCUIT.a, CIRCUIT.b, CIRCUIT.p_max), rtol=1e-12, atol=1e-18)


def test_threshold_roundtrip_and_bisection():
    rng = np.random.default_rng(2024)
    for zeta in rng.uniform(0, 0.024, 100):
        g = eh_rf_threshold(zeta, CIRCUIT)
        assert abs(harvested_power(g, CIRCUIT) - zeta) <= 1e-9 * zeta
        assert g == pytest.approx(bisect_threshold(zeta, CIRCUIT.a, CIRCUIT.b, CIRCUIT.p_max), rel=1e-9)


def test_threshold_frozen_values():
    # bisection oracle, frozen: thresholds of the two default harvest targets (15 and 5 mW)
    assert eh_rf_threshold(15e-3, CIRCUIT) == pytest.approx(0.0025787753534021705, rel=1e-9)
    assert eh_rf_threshold(5e-3, CIRCUIT) == pytest.approx(0.0014186673793330372, rel=1e-9)


def test_threshold_errors():
    with pytest.raises(InfeasibleRequirementError):
        eh_rf_threshold(0.024, CIRCUIT)
    with pytest.raises(ValidationError):
        eh_rf_threshold(-1e-3, CIRCUIT)
    with pytest.raises(ValidationError):
        harvested_power(-1.0, CIRCUIT)
    assert eh_rf_threshold(0.0, CIRCUIT) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
def test_harvest_monotone(x, y):
    lo, hi = sorted((x, y))
    assert harvested_power(lo, CIRCUIT) <= harvested_power(hi, CIRCUIT) + 1e-15


@given(st.floats(10.0, 5000.0), st.floats(1e-4, 1e-2), st.floats(1e-3, 0.1), st.floats(0.01, 0.99))
def test_threshold_inverts_harvest(a, b, pmax, frac):
    c = EhCircuitParams(a, b, pmax)
    zeta = frac * pmax
    g = eh_rf_threshold(zeta, c)
    assert harvested_power(g, c) == pytest.approx(zeta, rel=1e-7)


# -- rates ------------------------------------------------------------------------


def test_rates_single_antenna_closed_form(scalar_topology):
    t = scalar_topology
    ch = generate_channels(3, t, noise=1e-3)
    one = lambda p: np.array([[p]], dtype=complex)  # noqa: E731
    pp, sp, ps, ss = 2.0, 0.5, 1.5, 0.25
    sol = CovarianceSolution([one(pp)], [one(sp)], [one(ps)], one(ss))
    T = power_terms(ch, sol)
    g = lambda v: float(np.abs(v.ravel()[0]) ** 2)  # noqa: E731
    hP, fS, gE, fE = g(ch.h_P[0]), g(ch.f_S[0]), g(ch.g_Em[0]), g(ch.f_Em[0])
    qP, hS, qE, gEl = g(ch.q_P), g(ch.h_S), g(ch.q_El), g(ch.g_El)
    n = 1e-3
    legit = np.log2(1 + hP * pp / (hP * sp + fS * (ps + ss) + n))
    eve = np.log2(1 + gE * pp / (gE * sp + fE * (ps + ss) + n))
    assert pu_secrecy_rate(T, 0, 0) == pytest.approx(legit - eve, rel=1e-12)
    legit = np.log2(1 + hS * ps / (qP * (pp + sp) + hS * ss + n))
    eve = np.log2(1 + gEl * ps / (qE * (pp + sp) + gEl * ss + n))
    assert su_secrecy_rate(T, 0) == pytest.approx(legit - eve, rel=1e-12)
    assert su_single_user_rate(T, 0) == pytest.approx(legit - eve, rel=1e-12)


def test_noma_rate_uses_worst_decoder(small_topology):
    ch = generate_channels(1, small_topology, noise=1e-6)
    sol = _solution(np.random.default_rng(3), small_topology)
    T = power_terms(ch, sol)
    j = 0
    legit = min(np.log2(T.Lambda_S[j, z] / T.Lambda_S_int[j, z]) for z in range(j, 3))
    eve = max(np.log2(T.Lambda_sl[l, j] / T.Lambda_sl_int[l, j]) for l in range(2))
    assert su_secrecy_rate(T, j) == pytest.approx(legit - eve)


def test_rate_domain_error(scalar_topology):
    ch = generate_channels(0, scalar_topology, noise=1e-3)
    T = power_terms(ch, CovarianceSolution.zeros(scalar_topology))
    T.Gamma_P_int[0][0] = 0.0
    with pytest.raises(NumericDomainError):
        pu_secrecy_rate(T, 0, 0)


def test_rank_ratio():
    v = np.array([1.0, 2.0j, 0.5])
    assert rank_ratio(outer(v)) == pytest.approx(0.0, abs=1e-15)
    assert rank_ratio(np.diag([2.0, 1.0, 0.0])) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        rank_ratio(np.array([[0, 1], [0, 0]], dtype=float))


def test_total_power():
    from securenoma.model import NetworkTopology

    t = NetworkTopology(1, (1,), (1,), 2, 1, 2, 2)
    sol = CovarianceSolution([np.eye(2)], [2 * np.eye(2)], [np.eye(2), np.zeros((2, 2))], np.eye(2))
    assert total_power(sol) == pytest.approx(2 + 4 + 2 + 0 + 2)
    del t


# -- feasibility report --------------------------------------------------------------


def test_zero_solution_violates_every_requirement(table2):
    ch = generate_channels(0, table2, noise=1e-15)
    reqs, eh = QosRequirements.uniform(table2), EhParams.shared(table2)
    rep = verify_feasibility(ch, CovarianceSolution.zeros(table2), reqs, eh)
    assert not rep.feasible
    fams = {c.constraint[:2] for c in rep.violations()}
    assert fams == {"C1", "C2", "C4", "C5"}
    rows = rep.records()
    assert {"constraint", "margin", "satisfied"} <= set(rows[0])
    assert any(r["constraint"].startswith("C6[") for r in rows)


def test_margins_are_consistent_with_report(table2_instance):
    ch, reqs, eh = table2_instance
    sol = _solution(np.random.default_rng(9), ch.topology, scale=5e-3)
    margins = constraint_margins(ch, power_terms(ch, sol), reqs, eh)
    rep = verify_feasibility(ch, sol, reqs, eh)
    assert [c.constraint for c in rep.checks] == list(margins)
    assert rep.feasible == bool(margins_ok(margins))
    rf = secondary_ehr_rf(power_terms(ch, sol))
    assert rep.min_margin("C5") == pytest.approx(min(harvested_power(r, CIRCUIT) for r in rf) - 5e-3)
